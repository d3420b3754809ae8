#pragma once

#include "sam/geometry.hpp"
#include "sam/layers.hpp"

namespace sam {

/// Image-token encoder: tokens = Linear(descriptors) + MLP(x_n, y_n, conf), where
/// x_n, y_n are pixel coordinates mapped to [-1, 1] by the image size and the
/// position MLP is 3 -> 32 -> 64 -> C with GELU between layers.
struct EncoderSlots {
    LinearSlots projection;
    LinearSlots position1;
    LinearSlots position2;
    LinearSlots position3;
};

EncoderSlots add_encoder(ParamStore& store, std::size_t descriptor_dim, std::size_t width,
                         RandomSource& rng);

/// Keypoint rows as (2x/w - 1, 2y/h - 1, conf).
Matrix normalized_keypoints(const KeypointSet& keypoints);

/// Throws DimensionError when the descriptor width is not the encoder's input
/// width or the descriptor and keypoint counts differ.
Var encode(const ForwardContext& ctx, const EncoderSlots& slots, const Matrix& descriptors,
           const KeypointSet& keypoints);

}  // namespace sam
