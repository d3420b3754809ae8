#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sam/geometry.hpp"
#include "sam/scoring.hpp"

namespace sam {

class Model;

struct MatchMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t predicted = 0;
    std::size_t correct = 0;
    std::size_t ground_truth = 0;
};

/// A predicted match is correct when its reprojection error under the pair's
/// homography is below `threshold` pixels. Precision is 0 without predictions,
/// recall is 0 without ground-truth matches and is capped at 1.
MatchMetrics match_metrics(const MatchSet& pred, const GroundTruth& gt, const FeaturePair& pair,
                           double threshold = 3.0);

double f1_score(double precision, double recall);

struct RansacOptions {
    std::size_t iterations = 1000;
    double inlier_threshold = 3.0;  // pixels, forward transfer error
    std::uint64_t seed = 0;
};

/// Normalized DLT over all given correspondences (>= 4, not all degenerate).
std::optional<Homography> fit_homography_dlt(const std::vector<std::array<double, 2>>& from,
                                             const std::vector<std::array<double, 2>>& to);

/// Seeded RANSAC over minimal 4-point DLT fits, then a least-squares refit on the
/// inliers of the best model. Returns nullopt with fewer than 4 matches or when
/// no sample yields a valid homography.
std::optional<Homography> estimate_homography(const MatchSet& matches, const Matrix& source_points,
                                              const Matrix& target_points,
                                              const RansacOptions& options = {});

/// Mean distance between the image corners mapped by `estimate` and by `truth`.
double corner_error(const Homography& estimate, const Homography& truth, ImageSize size);

/// Normalized area under the cumulative error curve up to max_px. Infinite
/// errors count as failures.
double homography_auc(std::vector<double> errors, double max_px = 10.0);

/// Share of labeled points whose hard group is right: matched points (both
/// sides) belong to group 0, unmatched points (I and J) to group 1.
double grouping_accuracy(const Matrix& hard_source, const Matrix& hard_target,
                         const GroundTruth& gt);

struct PairRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    MatchMetrics metrics;
    double corner_error = 0.0;  // +inf when estimation failed
    double grouping_accuracy = 0.0;
};

struct EvalReport {
    double precision = 0.0;  // mean over pairs
    double recall = 0.0;     // mean over pairs
    double f1 = 0.0;         // from the mean precision and recall
    double auc_10px = 0.0;
    double grouping_accuracy = 0.0;  // mean over pairs
    std::vector<PairRecord> pairs;
};

struct EvalOptions {
    std::uint64_t seed = 0;
    int jobs = 1;
    GroundTruthOptions ground_truth;
};

/// Inference on every pair (no Gumbel noise) followed by the metrics above.
EvalReport evaluate(const Model& model, const std::vector<FeaturePair>& pairs,
                    const EvalOptions& options = {});

/// Inference on one pair; returns the selected matches and the hard assignments.
struct PairPrediction {
    MatchSet matches;
    Matrix assignment;   // P, (M+1) x (N+1)
    Matrix hard_source;  // k x M
    Matrix hard_target;  // k x N
};
PairPrediction predict(const Model& model, const FeaturePair& pair, std::uint64_t seed);

std::string eval_report_to_json(const EvalReport& r);

}  // namespace sam
