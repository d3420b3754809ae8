#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sam/errors.hpp"
#include "sam/kernels.hpp"
#include "gemm_row.hpp"
#include "sinkhorn_rows.hpp"

namespace sam::kernels::serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) detail::gemm_row(a.row(i).data(), b, out.row(i).data());
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) { return matmul(a, b.transposed()); }

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i) detail::gemm_col(a, i, b, out.row(i).data());
    return out;
}

Matrix softmax_rows(const Matrix& m, double scale) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
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
        detail::sinkhorn_rows(z, v, la, u, 0, m);
        check_finite(u, t + 1, "row");
        detail::sinkhorn_cols(z, u, lb, v, 0, n);
        check_finite(v, t + 1, "column");
        if (trace) {
            trace->row_potentials.push_back(u);
            trace->col_potentials.push_back(v);
        }
    }
    Matrix out(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = z(i, j) + u[i] + v[j];
    return out;
}

Matrix log_sinkhorn_backward(const Matrix& z, const SinkhornTrace& trace,
                             std::span<const double> la, std::span<const double> lb,
                             const Matrix& grad_out) {
    const std::size_t m = z.rows(), n = z.cols();
    Matrix dz = grad_out;
    std::vector<double> du(m, 0.0), dv(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) du[i] += grad_out(i, j);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) dv[j] += grad_out(i, j);

    const std::vector<double> zeros(n, 0.0);
    Matrix weights(m, n);
    for (std::size_t t = trace.row_potentials.size(); t-- > 0;) {
        const auto& u = trace.row_potentials[t];
        const auto& v = trace.col_potentials[t];
        const auto& v_prev = t > 0 ? trace.col_potentials[t - 1] : zeros;
        // Column step v_j = lb_j - LSE_i(z_ij + u_i), then row step
        // u_i = la_i - LSE_j(z_ij + v_prev_j).
        detail::sinkhorn_cols_backward(z, u, v, lb, dv, dz, du, 0, m);
        detail::sinkhorn_rows_backward(z, u, v_prev, la, du, dz, weights, 0, m);
        detail::negated_column_sums(weights, dv, 0, n);
        std::fill(du.begin(), du.end(), 0.0);
    }
    return dz;
}

}  // namespace sam::kernels::serial
