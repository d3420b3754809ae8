#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sam/matrix.hpp"

/// Dense kernels used by the differentiation tape.
///
/// Each kernel exists twice: `serial::` is the reference implementation and
/// `parallel::` the OpenMP version. Both accumulate every output element in the
/// same order, so their results are bit-identical for any thread count; the
/// tests compare them directly. The unqualified functions validate shapes and
/// dispatch to `parallel::` once the work is large enough to pay for a team.
namespace sam::kernels {

/// Saved potentials from a log-domain Sinkhorn run: row_potentials[t] and
/// col_potentials[t] are u and v after iteration t+1.
struct SinkhornTrace {
    std::vector<std::vector<double>> row_potentials;
    std::vector<std::vector<double>> col_potentials;
};

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix softmax_rows(const Matrix& m, double scale);
Matrix log_sinkhorn(const Matrix& z, std::span<const double> log_row_marginal,
                    std::span<const double> log_col_marginal, std::size_t iterations,
                    SinkhornTrace* trace);
Matrix log_sinkhorn_backward(const Matrix& z, const SinkhornTrace& trace,
                             std::span<const double> log_row_marginal,
                             std::span<const double> log_col_marginal, const Matrix& grad_out);
}  // namespace serial

namespace parallel {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& m, double scale);
Matrix log_sinkhorn(const Matrix& z, std::span<const double> log_row_marginal,
                    std::span<const double> log_col_marginal, std::size_t iterations,
                    SinkhornTrace* trace);
Matrix log_sinkhorn_backward(const Matrix& z, const SinkhornTrace& trace,
                             std::span<const double> log_row_marginal,
                             std::span<const double> log_col_marginal, const Matrix& grad_out);
}  // namespace parallel

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& m, double scale = 1.0);

/// log P for the augmented problem: P = exp(z + u 1^T + 1 v^T) with row sums
/// exp(log_row_marginal) and column sums exp(log_col_marginal). Alternates row then
/// column normalization `iterations` times starting from u = v = 0. Throws
/// NumericalError naming the iteration when a potential turns non-finite.
Matrix log_sinkhorn(const Matrix& z, std::span<const double> log_row_marginal,
                    std::span<const double> log_col_marginal, std::size_t iterations,
                    SinkhornTrace* trace = nullptr);

/// Gradient w.r.t. z of sum(grad_out .* log P), back-propagated through every iteration.
Matrix log_sinkhorn_backward(const Matrix& z, const SinkhornTrace& trace,
                             std::span<const double> log_row_marginal,
                             std::span<const double> log_col_marginal, const Matrix& grad_out);

/// True when the parallel backend was compiled with OpenMP.
bool openmp_enabled() noexcept;
/// Threads available to the parallel backend (1 without OpenMP).
int max_threads() noexcept;

}  // namespace sam::kernels
