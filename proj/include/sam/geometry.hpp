#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sam/matrix.hpp"

namespace sam {

class RandomSource;

struct ImageSize {
    double width = 640.0;
    double height = 480.0;

    friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Planar projective transform, normalized so h(2,2) == 1.
class Homography {
public:
    Homography() : h_(Matrix::identity(3)) {}
    /// Normalizes by h(2,2); throws InputError if that is ~0 or |det| <= 1e-12.
    explicit Homography(Matrix h);

    [[nodiscard]] const Matrix& matrix() const noexcept { return h_; }
    [[nodiscard]] double operator()(std::size_t r, std::size_t c) const { return h_(r, c); }
    [[nodiscard]] Homography inverse() const;
    [[nodiscard]] double determinant() const;
    /// Maps one point; returns false when |w'| < 1e-12.
    bool apply(double x, double y, double& out_x, double& out_y) const;

    static Homography translation(double tx, double ty);
    static Homography scaling(double s);

private:
    Matrix h_;
};

/// Keypoints as an M x 3 matrix: x pixels, y pixels, detection confidence in [0, 1].
struct KeypointSet {
    Matrix points;
    ImageSize image_size;

    [[nodiscard]] std::size_t size() const noexcept { return points.rows(); }
};

struct FeatureSide {
    KeypointSet keypoints;
    Matrix descriptors;  // M x C, one row per keypoint
};

struct FeaturePair {
    FeatureSide source;
    FeatureSide target;
    Homography gt_homography;  // source -> target
    std::uint64_t seed = 0;
};

struct GroundTruth {
    std::vector<std::pair<std::size_t, std::size_t>> matches;  // (source i, target j)
    std::vector<std::size_t> unmatched_source;                 // I
    std::vector<std::size_t> unmatched_target;                 // J
};

struct WarpResult {
    Matrix points;             // M x 2
    std::vector<bool> valid;   // false where |w'| < 1e-12
};

/// Exact homography taking four source points to four destination points.
/// Throws InputError for degenerate (collinear) configurations.
Homography homography_from_points(const std::array<std::array<double, 2>, 4>& from,
                                  const std::array<std::array<double, 2>, 4>& to);

/// Image corners in the order (0,0), (w,0), (w,h), (0,h).
std::array<std::array<double, 2>, 4> image_corners(ImageSize size);

/// Random perspective warp: each image corner moves uniformly within
/// +-max_shift_fraction * min(width, height) per axis. Non-convex or degenerate
/// draws are resampled, up to 100 attempts.
Homography sample_homography(RandomSource& rng, ImageSize size, double max_shift_fraction = 0.25);

/// Projective warp of the first two columns of `points`.
WarpResult warp_points(const Matrix& points, const Homography& h);

/// Reprojection error |H p_i - q_j| between source i and target j; +inf where
/// the warp of p_i is invalid.
Matrix reprojection_errors(const Matrix& source_points, const Matrix& target_points,
                           const Homography& h);

struct GroundTruthOptions {
    double match_threshold = 3.0;  // pixels
    double reject_margin = 5.0;    // pixels; (threshold, margin] is the ambiguous band
};

/// (i, j) is a match iff i and j are mutual nearest neighbours under the
/// reprojection error and that error is < match_threshold. i is in I
/// iff its error to every target exceeds reject_margin; likewise j in J.
GroundTruth compute_ground_truth(const FeaturePair& pair, GroundTruthOptions options = {});

struct SynthConfig {
    std::size_t num_keypoints = 512;
    ImageSize image_size{640.0, 480.0};
    std::size_t descriptor_dim = 64;
    double descriptor_noise_sigma = 0.1;
    double outlier_fraction = 0.3;
    double jitter_px = 1.0;
    double max_corner_shift = 0.25;
    double min_spacing_px = 8.0;
};

/// Synthetic homography pair. Source keypoints are uniform in the image; a
/// (1 - outlier_fraction) share of those warping inside the image get a target
/// keypoint at the warped position (+ <= jitter_px jitter) with a noisy copy of
/// the source descriptor; the rest of the target set is random filler keypoints
/// with independent descriptors. Target order is shuffled.
FeaturePair generate_pair(RandomSource& rng, const SynthConfig& config);

}  // namespace sam
