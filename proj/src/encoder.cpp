#include "sam/encoder.hpp"

#include "sam/errors.hpp"

namespace sam {

EncoderSlots add_encoder(ParamStore& store, std::size_t descriptor_dim, std::size_t width,
                         RandomSource& rng) {
    EncoderSlots s;
    s.projection = add_linear(store, "encoder.projection", descriptor_dim, width, rng);
    s.position1 = add_linear(store, "encoder.position.fc1", 3, 32, rng);
    s.position2 = add_linear(store, "encoder.position.fc2", 32, 64, rng);
    s.position3 = add_linear(store, "encoder.position.fc3", 64, width, rng);
    return s;
}

Matrix normalized_keypoints(const KeypointSet& keypoints) {
    Matrix n(keypoints.size(), 3);
    const double w = keypoints.image_size.width, h = keypoints.image_size.height;
    for (std::size_t i = 0; i < n.rows(); ++i) {
        n(i, 0) = 2.0 * keypoints.points(i, 0) / w - 1.0;
        n(i, 1) = 2.0 * keypoints.points(i, 1) / h - 1.0;
        n(i, 2) = keypoints.points(i, 2);
    }
    return n;
}

Var encode(const ForwardContext& ctx, const EncoderSlots& slots, const Matrix& descriptors,
           const KeypointSet& keypoints) {
    if (descriptors.cols() != slots.projection.in) {
        throw DimensionError("encode: descriptor width " + std::to_string(descriptors.cols()) +
                             ", expected " + std::to_string(slots.projection.in));
    }
    if (descriptors.rows() != keypoints.size()) {
        throw DimensionError("encode: " + std::to_string(descriptors.rows()) + " descriptors for " +
                             std::to_string(keypoints.size()) + " keypoints");
    }
    const Var projected = linear(ctx, ctx.constant(descriptors), slots.projection);
    Var pos = ctx.constant(normalized_keypoints(keypoints));
    pos = ad::gelu(linear(ctx, pos, slots.position1));
    pos = ad::gelu(linear(ctx, pos, slots.position2));
    pos = linear(ctx, pos, slots.position3);
    return ad::add(projected, pos);
}

}  // namespace sam
