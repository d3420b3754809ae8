#pragma once

#include <span>
#include <utility>
#include <vector>

#include "sam/layers.hpp"

namespace sam {

/// One multi-level attention layer. Q/K/V projections are shared by the two
/// images; the fusion MLPs (3C -> 2C -> C) are per image.
struct AttentionLayerSlots {
    LinearSlots query;
    LinearSlots key;
    LinearSlots value;
    MlpSlots fuse_source;
    MlpSlots fuse_target;
};

AttentionLayerSlots add_attention_layer(ParamStore& store, const std::string& name,
                                        std::size_t width, RandomSource& rng);

/// Optional sink for the per-head attention probabilities of a forward pass.
struct AttentionProbe {
    std::vector<Matrix> probabilities;
};

/// Multi-head scaled dot-product self-attention over every row of x.
/// Throws ConfigError when the width is not divisible by `heads`.
Var self_attention(const ForwardContext& ctx, const Var& x, const AttentionLayerSlots& layer,
                   std::size_t heads, AttentionProbe* probe = nullptr);

/// Cross-attention computing one logit matrix E = Q_s K_t^T / sqrt(d) per head:
/// CA_s = softmax_rows(E) V_t and CA_t = softmax_rows(E^T) V_s.
std::pair<Var, Var> cross_attention(const ForwardContext& ctx, const Var& source,
                                    const Var& target, const AttentionLayerSlots& layer,
                                    std::size_t heads, AttentionProbe* probe = nullptr);

/// x + MLP([x | sa | ca]).
Var fuse_update(const ForwardContext& ctx, const Var& x, const Var& sa, const Var& ca,
                const MlpSlots& fuse);

struct StackOutput {
    Var source_tokens;
    Var source_groups;
    Var target_tokens;
    Var target_groups;
};

/// Concatenates image and group tokens per image, applies every layer
/// (self-attention, cross-attention, fusion), and re-splits.
StackOutput run_stack(const ForwardContext& ctx, const Var& source_tokens,
                      const Var& source_groups, const Var& target_tokens,
                      const Var& target_groups, std::span<const AttentionLayerSlots> layers,
                      std::size_t heads, AttentionProbe* probe = nullptr);

}  // namespace sam
