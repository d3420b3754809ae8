#include "sam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "json.hpp"
#include "sam/errors.hpp"
#include "sam/model.hpp"
#include "sam/random.hpp"

namespace sam {

namespace {

using Point = std::array<double, 2>;

// Similarity moving the centroid to the origin with mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(const std::vector<Point>& pts) {
    double cx = 0, cy = 0;
    for (const auto& p : pts) {
        cx += p[0];
        cy += p[1];
    }
    cx /= static_cast<double>(pts.size());
    cy /= static_cast<double>(pts.size());
    double mean_dist = 0;
    for (const auto& p : pts) mean_dist += std::hypot(p[0] - cx, p[1] - cy);
    mean_dist /= static_cast<double>(pts.size());
    const double s = mean_dist > 0 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
    return t;
}

double transfer_error(const Homography& h, const Point& p, const Point& q) {
    double x, y;
    if (!h.apply(p[0], p[1], x, y)) return std::numeric_limits<double>::infinity();
    return std::hypot(x - q[0], y - q[1]);
}

}  // namespace

double f1_score(double precision, double recall) {
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

MatchMetrics match_metrics(const MatchSet& pred, const GroundTruth& gt, const FeaturePair& pair,
                           double threshold) {
    MatchMetrics m;
    m.predicted = pred.matches.size();
    m.ground_truth = gt.matches.size();
    const Matrix& src = pair.source.keypoints.points;
    const Matrix& dst = pair.target.keypoints.points;
    for (const auto& match : pred.matches) {
        if (match.source >= src.rows() || match.target >= dst.rows()) {
            throw InputError("match (" + std::to_string(match.source) + ", " +
                             std::to_string(match.target) + ") out of range");
        }
        const Point p{src(match.source, 0), src(match.source, 1)};
        const Point q{dst(match.target, 0), dst(match.target, 1)};
        if (transfer_error(pair.gt_homography, p, q) < threshold) ++m.correct;
    }
    if (m.predicted > 0) m.precision = static_cast<double>(m.correct) / m.predicted;
    if (m.ground_truth > 0) {
        m.recall = std::min(1.0, static_cast<double>(m.correct) / m.ground_truth);
    }
    m.f1 = f1_score(m.precision, m.recall);
    return m;
}

std::optional<Homography> fit_homography_dlt(const std::vector<Point>& from,
                                             const std::vector<Point>& to) {
    if (from.size() != to.size()) throw DimensionError("fit_homography_dlt: point counts differ");
    if (from.size() < 4) return std::nullopt;
    const Eigen::Matrix3d t1 = normalizing_transform(from);
    const Eigen::Matrix3d t2 = normalizing_transform(to);
    const auto n = static_cast<Eigen::Index>(from.size());
    Eigen::MatrixXd a(2 * n, 9);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector3d p = t1 * Eigen::Vector3d(from[i][0], from[i][1], 1.0);
        const Eigen::Vector3d q = t2 * Eigen::Vector3d(to[i][0], to[i][1], 1.0);
        const double x = p.x() / p.z(), y = p.y() / p.z();
        const double u = q.x() / q.z(), v = q.y() / q.z();
        a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
        a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    const Eigen::Matrix3d full = t2.inverse() * hn * t1;
    Matrix out(3, 3);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out(r, c) = full(r, c);
    }
    if (!out.all_finite()) return std::nullopt;
    try {
        return Homography(out);
    } catch (const InputError&) {
        return std::nullopt;
    }
}

std::optional<Homography> estimate_homography(const MatchSet& matches, const Matrix& source_points,
                                              const Matrix& target_points,
                                              const RansacOptions& options) {
    const std::size_t n = matches.matches.size();
    if (n < 4) return std::nullopt;
    std::vector<Point> from(n), to(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& m = matches.matches[i];
        from[i] = {source_points(m.source, 0), source_points(m.source, 1)};
        to[i] = {target_points(m.target, 0), target_points(m.target, 1)};
    }
    auto inliers_of = [&](const Homography& h) {
        std::vector<std::size_t> in;
        for (std::size_t i = 0; i < n; ++i) {
            if (transfer_error(h, from[i], to[i]) < options.inlier_threshold) in.push_back(i);
        }
        return in;
    };

    RandomSource rng(options.seed);
    std::optional<Homography> best;
    std::vector<std::size_t> best_inliers;
    std::vector<Point> sf(4), st(4);
    for (std::size_t it = 0; it < options.iterations; ++it) {
        std::array<std::size_t, 4> pick{};
        for (std::size_t k = 0; k < 4; ++k) {
            bool fresh = false;
            while (!fresh) {
                pick[k] = rng.below(n);
                fresh = std::find(pick.begin(), pick.begin() + k, pick[k]) == pick.begin() + k;
            }
            sf[k] = from[pick[k]];
            st[k] = to[pick[k]];
        }
        const auto h = fit_homography_dlt(sf, st);
        if (!h) continue;
        auto in = inliers_of(*h);
        if (!best || in.size() > best_inliers.size()) {
            best = h;
            best_inliers = std::move(in);
            if (best_inliers.size() == n) break;
        }
    }
    if (!best || best_inliers.size() < 4) return best;
    std::vector<Point> in_from, in_to;
    for (const std::size_t i : best_inliers) {
        in_from.push_back(from[i]);
        in_to.push_back(to[i]);
    }
    const auto refit = fit_homography_dlt(in_from, in_to);
    return refit ? refit : best;
}

double corner_error(const Homography& estimate, const Homography& truth, ImageSize size) {
    double total = 0;
    for (const auto& c : image_corners(size)) {
        double ex, ey, tx, ty;
        if (!estimate.apply(c[0], c[1], ex, ey) || !truth.apply(c[0], c[1], tx, ty)) {
            return std::numeric_limits<double>::infinity();
        }
        total += std::hypot(ex - tx, ey - ty);
    }
    return total / 4.0;
}

double homography_auc(std::vector<double> errors, double max_px) {
    if (errors.empty()) return 0.0;
    std::sort(errors.begin(), errors.end());
    const double n = static_cast<double>(errors.size());
    std::vector<double> xs{0.0}, ys{0.0};
    for (std::size_t i = 0; i < errors.size() && errors[i] < max_px; ++i) {
        xs.push_back(errors[i]);
        ys.push_back(static_cast<double>(i + 1) / n);
    }
    xs.push_back(max_px);
    ys.push_back(ys.back());
    double area = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        area += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0;
    }
    return area / max_px;
}

double grouping_accuracy(const Matrix& hard_source, const Matrix& hard_target,
                         const GroundTruth& gt) {
    std::size_t right = 0, total = 0;
    auto check = [&](const Matrix& hard, std::size_t col, std::size_t group) {
        if (col >= hard.cols() || group >= hard.rows()) {
            throw InputError("grouping_accuracy: index " + std::to_string(col) + " out of range");
        }
        ++total;
        if (hard(group, col) == 1.0) ++right;
    };
    for (const auto& [i, j] : gt.matches) {
        check(hard_source, i, 0);
        check(hard_target, j, 0);
    }
    for (const std::size_t i : gt.unmatched_source) check(hard_source, i, 1);
    for (const std::size_t j : gt.unmatched_target) check(hard_target, j, 1);
    return total > 0 ? static_cast<double>(right) / total : 0.0;
}

PairPrediction predict(const Model& model, const FeaturePair& pair, std::uint64_t seed) {
    Tape tape(false);
    RandomSource rng(seed);
    ReplayLog replay;
    const ForwardContext ctx{tape, model.params(), rng, replay, false};
    const ForwardOutputs out = model.forward(ctx, pair);
    PairPrediction p;
    p.assignment = out.assignment();
    p.matches = select_matches(p.assignment, model.config().theta);
    p.hard_source = out.source.hard.value();
    p.hard_target = out.target.hard.value();
    return p;
}

EvalReport evaluate(const Model& model, const std::vector<FeaturePair>& pairs,
                    const EvalOptions& options) {
    EvalReport report;
    report.pairs.resize(pairs.size());
    const auto count = static_cast<std::ptrdiff_t>(pairs.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, options.jobs))
#endif
    for (std::ptrdiff_t k = 0; k < count; ++k) {
        const auto i = static_cast<std::size_t>(k);
        const FeaturePair& pair = pairs[i];
        const std::uint64_t seed = derive_seed(options.seed, i);
        const GroundTruth gt = compute_ground_truth(pair, options.ground_truth);
        const PairPrediction pred = predict(model, pair, seed);
        PairRecord& rec = report.pairs[i];
        rec.index = i;
        rec.seed = pair.seed;
        rec.metrics = match_metrics(pred.matches, gt, pair, options.ground_truth.match_threshold);
        RansacOptions ransac;
        ransac.seed = seed;
        const auto h = estimate_homography(pred.matches, pair.source.keypoints.points,
                                           pair.target.keypoints.points, ransac);
        rec.corner_error = h ? corner_error(*h, pair.gt_homography, pair.source.keypoints.image_size)
                             : std::numeric_limits<double>::infinity();
        rec.grouping_accuracy = grouping_accuracy(pred.hard_source, pred.hard_target, gt);
    }
    std::vector<double> errors;
    for (const auto& rec : report.pairs) {
        report.precision += rec.metrics.precision;
        report.recall += rec.metrics.recall;
        report.grouping_accuracy += rec.grouping_accuracy;
        errors.push_back(rec.corner_error);
    }
    if (!pairs.empty()) {
        const double n = static_cast<double>(pairs.size());
        report.precision /= n;
        report.recall /= n;
        report.grouping_accuracy /= n;
    }
    report.f1 = f1_score(report.precision, report.recall);
    report.auc_10px = homography_auc(errors);
    return report;
}

std::string eval_report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    auto& summary = j["summary"];
    summary["pairs"] = r.pairs.size();
    summary["precision"] = r.precision;
    summary["recall"] = r.recall;
    summary["f1"] = r.f1;
    summary["auc_10px"] = r.auc_10px;
    summary["grouping_accuracy"] = r.grouping_accuracy;
    auto& list = j["pairs"] = nlohmann::ordered_json::array();
    for (const auto& p : r.pairs) {
        nlohmann::ordered_json e;
        e["index"] = p.index;
        e["seed"] = p.seed;
        e["precision"] = p.metrics.precision;
        e["recall"] = p.metrics.recall;
        e["f1"] = p.metrics.f1;
        e["predicted"] = p.metrics.predicted;
        e["correct"] = p.metrics.correct;
        e["ground_truth"] = p.metrics.ground_truth;
        if (std::isfinite(p.corner_error)) {
            e["corner_error"] = p.corner_error;
        } else {
            e["corner_error"] = nullptr;  // estimation failed
        }
        e["grouping_accuracy"] = p.grouping_accuracy;
        list.push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

}  // namespace sam
