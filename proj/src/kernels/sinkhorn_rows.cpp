#include "sinkhorn_rows.hpp"

#include <cmath>
#include <limits>
#include <vector>

#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define SAM_TARGET_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define SAM_TARGET_CLONES
#endif

namespace sam::kernels::detail {

SAM_TARGET_CLONES
void sinkhorn_rows(const Matrix& z, std::span<const double> v, std::span<const double> la,
                   std::span<double> u, std::size_t begin, std::size_t end) {
    const std::size_t n = z.cols();
    std::vector<double> x(n);
    double* __restrict xp = x.data();
    const double* __restrict vp = v.data();
    for (std::size_t i = begin; i < end; ++i) {
        const double* __restrict zr = z.row(i).data();
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            xp[j] = zr[j] + vp[j];
            mx = xp[j] > mx ? xp[j] : mx;
        }
        for (std::size_t j = 0; j < n; ++j) xp[j] = exp_poly(xp[j] - mx);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += xp[j];
        u[i] = la[i] - (mx + std::log(s));
    }
}

SAM_TARGET_CLONES
void sinkhorn_cols(const Matrix& z, std::span<const double> u, std::span<const double> lb,
                   std::span<double> v, std::size_t begin, std::size_t end) {
    const std::size_t w = end - begin;
    std::vector<double> mx(w, -std::numeric_limits<double>::infinity()), s(w, 0.0);
    double* __restrict mp = mx.data();
    double* __restrict sp = s.data();
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double* __restrict zr = z.row(i).data() + begin;
        const double ui = u[i];
        for (std::size_t j = 0; j < w; ++j) {
            const double x = zr[j] + ui;
            mp[j] = x > mp[j] ? x : mp[j];
        }
    }
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double* __restrict zr = z.row(i).data() + begin;
        const double ui = u[i];
        for (std::size_t j = 0; j < w; ++j) sp[j] += exp_poly(zr[j] + ui - mp[j]);
    }
    for (std::size_t j = 0; j < w; ++j) v[begin + j] = lb[begin + j] - (mp[j] + std::log(sp[j]));
}

SAM_TARGET_CLONES
void sinkhorn_cols_backward(const Matrix& z, std::span<const double> u, std::span<const double> v,
                            std::span<const double> lb, std::span<const double> dv, Matrix& dz,
                            std::span<double> du, std::size_t begin, std::size_t end) {
    const std::size_t n = z.cols();
    std::vector<double> t(n);
    double* __restrict tp = t.data();
    const double* __restrict vp = v.data();
    const double* __restrict lp = lb.data();
    const double* __restrict dvp = dv.data();
    for (std::size_t i = begin; i < end; ++i) {
        const double* __restrict zr = z.row(i).data();
        double* __restrict dr = dz.row(i).data();
        const double ui = u[i];
        for (std::size_t j = 0; j < n; ++j) {
            tp[j] = dvp[j] * exp_poly(zr[j] + ui + vp[j] - lp[j]);
            dr[j] -= tp[j];
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += tp[j];
        du[i] -= acc;
    }
}

SAM_TARGET_CLONES
void sinkhorn_rows_backward(const Matrix& z, std::span<const double> u, std::span<const double> v,
                            std::span<const double> la, std::span<const double> du, Matrix& dz,
                            Matrix& weights, std::size_t begin, std::size_t end) {
    const std::size_t n = z.cols();
    const double* __restrict vp = v.data();
    for (std::size_t i = begin; i < end; ++i) {
        const double* __restrict zr = z.row(i).data();
        double* __restrict dr = dz.row(i).data();
        double* __restrict wr = weights.row(i).data();
        const double ui = u[i], lai = la[i], dui = du[i];
        for (std::size_t j = 0; j < n; ++j) {
            wr[j] = dui * exp_poly(zr[j] + vp[j] + ui - lai);
            dr[j] -= wr[j];
        }
    }
}

SAM_TARGET_CLONES
void negated_column_sums(const Matrix& weights, std::span<double> out, std::size_t begin,
                         std::size_t end) {
    const std::size_t w = end - begin;
    std::vector<double> acc(w, 0.0);
    double* __restrict ap = acc.data();
    for (std::size_t i = 0; i < weights.rows(); ++i) {
        const double* __restrict wr = weights.row(i).data() + begin;
        for (std::size_t j = 0; j < w; ++j) ap[j] += wr[j];
    }
    for (std::size_t j = 0; j < w; ++j) out[begin + j] = -ap[j];
}

}  // namespace sam::kernels::detail
