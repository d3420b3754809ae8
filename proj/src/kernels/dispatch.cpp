#include "sam/errors.hpp"
#include "sam/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sam::kernels {

namespace {

// Below this many multiply-adds a thread team costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 16;

bool go_parallel(std::size_t work) noexcept { return work >= kParallelWork && max_threads() > 1; }

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                         b.shape_string());
}

void check_marginals(const Matrix& z, std::span<const double> la, std::span<const double> lb) {
    if (la.size() != z.rows() || lb.size() != z.cols()) {
        throw DimensionError("sinkhorn: marginals " + std::to_string(la.size()) + "/" +
                             std::to_string(lb.size()) + " do not fit " + z.shape_string());
    }
}

}  // namespace

bool openmp_enabled() noexcept {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() noexcept {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    const std::size_t work = a.rows() * a.cols() * b.cols();
    return go_parallel(work) ? parallel::matmul(a, b) : serial::matmul(a, b);
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
    const std::size_t work = a.rows() * a.cols() * b.rows();
    return go_parallel(work) ? parallel::matmul_nt(a, b) : serial::matmul_nt(a, b);
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
    const std::size_t work = a.rows() * a.cols() * b.cols();
    return go_parallel(work) ? parallel::matmul_tn(a, b) : serial::matmul_tn(a, b);
}

Matrix softmax_rows(const Matrix& m, double scale) {
    return go_parallel(m.size() * 8) ? parallel::softmax_rows(m, scale)
                                     : serial::softmax_rows(m, scale);
}

Matrix log_sinkhorn(const Matrix& z, std::span<const double> la, std::span<const double> lb,
                    std::size_t iterations, SinkhornTrace* trace) {
    check_marginals(z, la, lb);
    if (!z.all_finite()) throw NumericalError("sinkhorn: non-finite scores at iteration 0");
    return go_parallel(z.size() * 16) ? parallel::log_sinkhorn(z, la, lb, iterations, trace)
                                      : serial::log_sinkhorn(z, la, lb, iterations, trace);
}

Matrix log_sinkhorn_backward(const Matrix& z, const SinkhornTrace& trace,
                             std::span<const double> la, std::span<const double> lb,
                             const Matrix& grad_out) {
    check_marginals(z, la, lb);
    if (!grad_out.same_shape(z)) shape_error("log_sinkhorn_backward", z, grad_out);
    return go_parallel(z.size() * 32)
               ? parallel::log_sinkhorn_backward(z, trace, la, lb, grad_out)
               : serial::log_sinkhorn_backward(z, trace, la, lb, grad_out);
}

}  // namespace sam::kernels
