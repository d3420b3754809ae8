#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sam/errors.hpp"
#include "sam/kernels.hpp"
#include "gemm_row.hpp"
#include "sinkhorn_rows.hpp"

#ifdef _OPENMP
#include <omp.h>
#define SAM_OMP_FOR _Pragma("omp parallel for schedule(static)")
#else
#define SAM_OMP_FOR
#endif

// Loops are partitioned over whole output rows or columns only; the per-element
// accumulation order is the one used by serial.cpp.
namespace sam::kernels::parallel {

namespace {
using Index = std::ptrdiff_t;
inline Index as_index(std::size_t n) { return static_cast<Index>(n); }
}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    SAM_OMP_FOR
    for (Index ii = 0; ii < as_index(a.rows()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        detail::gemm_row(a.row(i).data(), b, out.row(i).data());
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) { return matmul(a, b.transposed()); }

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    SAM_OMP_FOR
    for (Index ii = 0; ii < as_index(a.cols()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        detail::gemm_col(a, i, b, out.row(i).data());
    }
    return out;
}

Matrix softmax_rows(const Matrix& m, double scale) {
    Matrix out(m.rows(), m.cols());
    SAM_OMP_FOR
    for (Index ii = 0; ii < as_index(m.rows()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const auto in = m.row(i);
        auto o = out.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : in) mx = std::max(mx, scale * v);
        double total = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(scale * in[j] - mx);
            total += o[j];
        }
        for (double& v : o) v /= total;
    }
    return out;
}

namespace {

void check_finite(const std::vector<double>& p, std::size_t iteration, const char* side) {
    for (double x : p) {
        if (!std::isfinite(x)) {
            throw NumericalError(std::string("sinkhorn: non-finite ") + side +
                                 " potential at iteration " + std::to_string(iteration));
        }
    }
}

// Runs f(begin, end) on one contiguous block of [0, count) per thread.
template <class F>
void for_blocks(std::size_t count, F f) {
#ifdef _OPENMP
#pragma omp parallel
    {
        const auto threads = static_cast<std::size_t>(omp_get_num_threads());
        const auto id = static_cast<std::size_t>(omp_get_thread_num());
        const std::size_t begin = count * id / threads, end = count * (id + 1) / threads;
        if (begin < end) f(begin, end);
    }
#else
    f(std::size_t{0}, count);
#endif
}

}  // namespace

Matrix log_sinkhorn(const Matrix& z, std::span<const double> la, std::span<const double> lb,
                    std::size_t iterations, SinkhornTrace* trace) {
    const std::size_t m = z.rows(), n = z.cols();
    std::vector<double> u(m, 0.0), v(n, 0.0);
    if (trace) {
        trace->row_potentials.clear();
        trace->col_potentials.clear();
    }
    for (std::size_t t = 0; t < iterations; ++t) {
        for_blocks(m, [&](std::size_t b, std::size_t e) { detail::sinkhorn_rows(z, v, la, u, b, e); });
        check_finite(u, t + 1, "row");
        for_blocks(n, [&](std::size_t b, std::size_t e) { detail::sinkhorn_cols(z, u, lb, v, b, e); });
        check_finite(v, t + 1, "column");
        if (trace) {
            trace->row_potentials.push_back(u);
            trace->col_potentials.push_back(v);
        }
    }
    Matrix out(m, n);
    SAM_OMP_FOR
    for (Index ii = 0; ii < as_index(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < n; ++j) out(i, j) = z(i, j) + u[i] + v[j];
    }
    return out;
}

Matrix log_sinkhorn_backward(const Matrix& z, const SinkhornTrace& trace,
                             std::span<const double> la, std::span<const double> lb,
                             const Matrix& grad_out) {
    const std::size_t m = z.rows(), n = z.cols();
    Matrix dz = grad_out;
    std::vector<double> du(m, 0.0), dv(n, 0.0);
    SAM_OMP_FOR
    for (Index ii = 0; ii < as_index(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < n; ++j) du[i] += grad_out(i, j);
    }
    SAM_OMP_FOR
    for (Index jj = 0; jj < as_index(n); ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        for (std::size_t i = 0; i < m; ++i) dv[j] += grad_out(i, j);
    }

    const std::vector<double> zeros(n, 0.0);
    Matrix weights(m, n);
    for (std::size_t t = trace.row_potentials.size(); t-- > 0;) {
        const auto& u = trace.row_potentials[t];
        const auto& v = trace.col_potentials[t];
        const auto& v_prev = t > 0 ? trace.col_potentials[t - 1] : zeros;
        for_blocks(m, [&](std::size_t b, std::size_t e) {
            detail::sinkhorn_cols_backward(z, u, v, lb, dv, dz, du, b, e);
            detail::sinkhorn_rows_backward(z, u, v_prev, la, du, dz, weights, b, e);
        });
        for_blocks(n, [&](std::size_t b, std::size_t e) { detail::negated_column_sums(weights, dv, b, e); });
        std::fill(du.begin(), du.end(), 0.0);
    }
    return dz;
}

}  // namespace sam::kernels::parallel
