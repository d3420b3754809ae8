#include "sam/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "sam/errors.hpp"
#include "sam/random.hpp"

namespace sam {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxHomographyAttempts = 100;

Eigen::Matrix3d to_eigen(const Matrix& m) {
    Eigen::Matrix3d e;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) e(r, c) = m(r, c);
    return e;
}

Matrix from_eigen(const Eigen::Matrix3d& e) {
    Matrix m(3, 3);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = e(r, c);
    return m;
}

bool convex_quad(const std::array<std::array<double, 2>, 4>& q) {
    int sign = 0;
    for (int k = 0; k < 4; ++k) {
        const auto& a = q[k];
        const auto& b = q[(k + 1) % 4];
        const auto& c = q[(k + 2) % 4];
        const double cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if (std::abs(cross) < 1e-9) return false;
        const int s = cross > 0 ? 1 : -1;
        if (sign == 0) sign = s;
        if (s != sign) return false;
    }
    return true;
}

double dist(double ax, double ay, double bx, double by) { return std::hypot(ax - bx, ay - by); }

void normalize_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double n = 0.0;
        for (double v : m.row(i)) n += v * v;
        n = std::sqrt(n);
        if (n > 0)
            for (double& v : m.row(i)) v /= n;
    }
}

}  // namespace

Homography::Homography(Matrix h) {
    if (h.rows() != 3 || h.cols() != 3) {
        throw DimensionError("homography must be 3x3, got " + h.shape_string());
    }
    if (std::abs(h(2, 2)) < 1e-12) throw InputError("homography has h33 ~ 0");
    const double s = h(2, 2);
    for (double& v : h.data()) v /= s;
    h(2, 2) = 1.0;
    h_ = std::move(h);
    if (std::abs(determinant()) <= 1e-12) throw InputError("homography is not invertible");
}

double Homography::determinant() const { return to_eigen(h_).determinant(); }

Homography Homography::inverse() const { return Homography(from_eigen(to_eigen(h_).inverse())); }

bool Homography::apply(double x, double y, double& out_x, double& out_y) const {
    const double w = h_(2, 0) * x + h_(2, 1) * y + h_(2, 2);
    if (std::abs(w) < 1e-12) return false;
    out_x = (h_(0, 0) * x + h_(0, 1) * y + h_(0, 2)) / w;
    out_y = (h_(1, 0) * x + h_(1, 1) * y + h_(1, 2)) / w;
    return true;
}

Homography Homography::translation(double tx, double ty) {
    return Homography(Matrix::from_rows({{1, 0, tx}, {0, 1, ty}, {0, 0, 1}}));
}

Homography Homography::scaling(double s) {
    return Homography(Matrix::from_rows({{s, 0, 0}, {0, s, 0}, {0, 0, 1}}));
}

Homography homography_from_points(const std::array<std::array<double, 2>, 4>& from,
                                  const std::array<std::array<double, 2>, 4>& to) {
    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    for (int k = 0; k < 4; ++k) {
        const double x = from[k][0], y = from[k][1], u = to[k][0], v = to[k][1];
        a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
        a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
        b(2 * k) = u;
        b(2 * k + 1) = v;
    }
    Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
    if (lu.rank() < 8) throw InputError("degenerate point configuration for homography");
    const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
    return Homography(Matrix(3, 3, {h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0}));
}

std::array<std::array<double, 2>, 4> image_corners(ImageSize size) {
    return {{{0.0, 0.0}, {size.width, 0.0}, {size.width, size.height}, {0.0, size.height}}};
}

Homography sample_homography(RandomSource& rng, ImageSize size, double max_shift_fraction) {
    if (size.width <= 0 || size.height <= 0) throw InputError("image size must be positive");
    const auto corners = image_corners(size);
    const double shift = max_shift_fraction * std::min(size.width, size.height);
    for (int attempt = 0; attempt < kMaxHomographyAttempts; ++attempt) {
        auto moved = corners;
        for (auto& c : moved) {
            c[0] += rng.uniform(-shift, shift);
            c[1] += rng.uniform(-shift, shift);
        }
        if (!convex_quad(moved)) continue;
        try {
            return homography_from_points(corners, moved);
        } catch (const InputError&) {
            continue;
        }
    }
    throw InputError("sample_homography: no valid homography after 100 attempts");
}

WarpResult warp_points(const Matrix& points, const Homography& h) {
    if (points.cols() < 2) throw DimensionError("warp_points: need >= 2 columns");
    WarpResult r{Matrix(points.rows(), 2), std::vector<bool>(points.rows(), false)};
    for (std::size_t i = 0; i < points.rows(); ++i) {
        double x = 0, y = 0;
        if (h.apply(points(i, 0), points(i, 1), x, y)) {
            r.points(i, 0) = x;
            r.points(i, 1) = y;
            r.valid[i] = true;
        } else {
            r.points(i, 0) = r.points(i, 1) = kInf;
        }
    }
    return r;
}

Matrix reprojection_errors(const Matrix& source_points, const Matrix& target_points,
                           const Homography& h) {
    const WarpResult fwd = warp_points(source_points, h);
    Matrix e(source_points.rows(), target_points.rows(), kInf);
    for (std::size_t i = 0; i < e.rows(); ++i) {
        if (!fwd.valid[i]) continue;
        for (std::size_t j = 0; j < e.cols(); ++j) {
            e(i, j) = dist(fwd.points(i, 0), fwd.points(i, 1), target_points(j, 0),
                           target_points(j, 1));
        }
    }
    return e;
}

GroundTruth compute_ground_truth(const FeaturePair& pair, GroundTruthOptions options) {
    const Matrix e = reprojection_errors(pair.source.keypoints.points,
                                         pair.target.keypoints.points, pair.gt_homography);
    const std::size_t m = e.rows(), n = e.cols();
    std::vector<std::size_t> best_target(m, n), best_source(n, m);
    std::vector<double> row_min(m, kInf), col_min(n, kInf);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double d = e(i, j);
            if (d < row_min[i]) {
                row_min[i] = d;
                best_target[i] = j;
            }
            if (d < col_min[j]) {
                col_min[j] = d;
                best_source[j] = i;
            }
        }
    }
    GroundTruth gt;
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = best_target[i];
        if (j < n && best_source[j] == i && row_min[i] < options.match_threshold) {
            gt.matches.emplace_back(i, j);
        }
        if (row_min[i] > options.reject_margin) gt.unmatched_source.push_back(i);
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (col_min[j] > options.reject_margin) gt.unmatched_target.push_back(j);
    }
    return gt;
}

FeaturePair generate_pair(RandomSource& rng, const SynthConfig& config) {
    if (config.num_keypoints == 0 || config.descriptor_dim == 0 || config.image_size.width <= 0 ||
        config.image_size.height <= 0) {
        throw InputError("generate_pair: configuration values must be positive");
    }
    const std::size_t m = config.num_keypoints;
    const double w = config.image_size.width, hgt = config.image_size.height;
    const double spacing = config.min_spacing_px;
    auto inside = [&](double x, double y) { return x >= 0 && x < w && y >= 0 && y < hgt; };
    constexpr int kPointTries = 50;
    constexpr std::size_t kMinInImage = 8;

    for (int attempt = 0; attempt < kMaxHomographyAttempts; ++attempt) {
        const Homography h = sample_homography(rng, config.image_size, config.max_corner_shift);

        Matrix src(m, 3);
        Matrix warped(m, 2, kInf);
        std::vector<bool> warped_ok(m, false);
        for (std::size_t i = 0; i < m; ++i) {
            double x = 0, y = 0, wx = kInf, wy = kInf;
            bool ok = false;
            for (int tries = 0; tries < kPointTries; ++tries) {
                x = rng.uniform(0.0, w);
                y = rng.uniform(0.0, hgt);
                ok = h.apply(x, y, wx, wy);
                bool clear = true;
                for (std::size_t k = 0; k < i && clear; ++k) {
                    clear = dist(x, y, src(k, 0), src(k, 1)) >= spacing &&
                            (!ok || !warped_ok[k] ||
                             dist(wx, wy, warped(k, 0), warped(k, 1)) >= spacing);
                }
                if (clear) break;
            }
            src(i, 0) = x;
            src(i, 1) = y;
            src(i, 2) = rng.uniform();
            warped_ok[i] = ok;
            if (ok) {
                warped(i, 0) = wx;
                warped(i, 1) = wy;
            }
        }

        std::vector<std::size_t> in_image;
        for (std::size_t i = 0; i < m; ++i)
            if (warped_ok[i] && inside(warped(i, 0), warped(i, 1))) in_image.push_back(i);
        if (in_image.size() < kMinInImage) continue;

        for (std::size_t k = in_image.size(); k > 1; --k) std::swap(in_image[k - 1], in_image[rng.below(k)]);
        const auto kept = static_cast<std::size_t>(
            std::llround((1.0 - config.outlier_fraction) * static_cast<double>(in_image.size())));
        in_image.resize(std::min(kept, in_image.size()));

        struct TargetPoint {
            double x, y;
            std::ptrdiff_t source;  // -1 for filler
        };
        std::vector<TargetPoint> targets;
        targets.reserve(m);
        for (std::size_t i : in_image) {
            const double r = config.jitter_px * std::sqrt(rng.uniform());
            const double a = 2.0 * std::numbers::pi * rng.uniform();
            const double x = std::clamp(warped(i, 0) + r * std::cos(a), 0.0, std::nextafter(w, 0.0));
            const double y = std::clamp(warped(i, 1) + r * std::sin(a), 0.0, std::nextafter(hgt, 0.0));
            targets.push_back({x, y, static_cast<std::ptrdiff_t>(i)});
        }
        while (targets.size() < m) {
            double x = 0, y = 0;
            for (int tries = 0; tries < 20 * kPointTries; ++tries) {
                x = rng.uniform(0.0, w);
                y = rng.uniform(0.0, hgt);
                bool clear = true;
                for (std::size_t k = 0; k < m && clear; ++k)
                    clear = !warped_ok[k] || dist(x, y, warped(k, 0), warped(k, 1)) >= spacing;
                for (std::size_t k = 0; k < targets.size() && clear; ++k)
                    clear = dist(x, y, targets[k].x, targets[k].y) >= spacing;
                if (clear) break;
            }
            targets.push_back({x, y, -1});
        }
        for (std::size_t k = targets.size(); k > 1; --k) std::swap(targets[k - 1], targets[rng.below(k)]);

        const std::size_t c = config.descriptor_dim;
        Matrix src_desc(m, c);
        for (std::size_t i = 0; i < src_desc.size(); ++i) src_desc[i] = rng.normal();
        normalize_rows(src_desc);

        Matrix dst(m, 3), dst_desc(m, c);
        for (std::size_t j = 0; j < m; ++j) {
            const auto& t = targets[j];
            dst(j, 0) = t.x;
            dst(j, 1) = t.y;
            dst(j, 2) = rng.uniform();
            for (std::size_t k = 0; k < c; ++k) {
                dst_desc(j, k) = t.source >= 0
                                     ? src_desc(static_cast<std::size_t>(t.source), k) +
                                           config.descriptor_noise_sigma * rng.normal()
                                     : rng.normal();
            }
        }
        normalize_rows(dst_desc);

        FeaturePair pair;
        pair.source = {{std::move(src), config.image_size}, std::move(src_desc)};
        pair.target = {{std::move(dst), config.image_size}, std::move(dst_desc)};
        pair.gt_homography = h;
        pair.seed = rng.seed();
        return pair;
    }
    throw InputError("generate_pair: too few in-image points after 100 homography draws");
}

}  // namespace sam
