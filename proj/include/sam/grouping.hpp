#pragma once

#include <optional>
#include <vector>

#include "sam/layers.hpp"

namespace sam {

/// How group tokens are produced before the attention stack.
enum class SelectionMode {
    selection,  // score each image token, keep the top k, gate by sigmoid(score)
    learnable,  // k learnable parameter tokens shared by all images
    random,     // k image tokens chosen uniformly at random, no gate
};

/// Token grouping module variants.
enum class GroupingVariant { full, no_pre_attention, no_spatial_mlp, no_channel_mlp, soft_attention };

/// Gumbel noise layout on the assign-attention logits: one sample per group
/// shared by all tokens, or one sample per (group, token) entry.
enum class GumbelMode { per_group, per_entry };

struct GroupingSlots {
    std::optional<LinearSlots> selection_score;   // C -> 1, selection mode
    std::optional<std::size_t> learnable_tokens;  // k x C, learnable mode
    MlpSlots spatial;                             // k -> 2k -> k over g^T
    MlpSlots channel;                             // C -> C -> C over g
    LinearSlots pre_query, pre_key, pre_value;
    LinearSlots assign_query, assign_key;
};

GroupingSlots add_grouping(ParamStore& store, std::size_t width, std::size_t groups,
                           SelectionMode selection, RandomSource& rng);

struct GroupTokens {
    Var tokens;                             // k x C
    std::vector<std::size_t> selected_indices;  // empty in learnable mode
    std::vector<double> gate;                   // sigmoid(scores), selection mode only
    std::vector<double> scores;                 // all M scores, selection mode only
};

/// Throws InputError when the image has fewer than k tokens.
GroupTokens select_group_tokens(const ForwardContext& ctx, const Var& image_tokens,
                                std::size_t groups, const GroupingSlots& slots,
                                SelectionMode mode);

/// Indices of the k largest scores in descending score order, ties to the lower index.
std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k);

/// O = I + W2 gelu(W1 I) applied to g^T: mixes the k group tokens per channel.
Var spatial_mlp(const ForwardContext& ctx, const Var& groups, const MlpSlots& mlp);
/// O = I + W2 gelu(W1 I) applied to each group token row.
Var channel_mlp(const ForwardContext& ctx, const Var& groups, const MlpSlots& mlp);

struct PreAttentionResult {
    Var groups;   // g + A V
    Var weights;  // A, k x M, rows sum to 1
};

/// Group tokens as queries, image tokens as keys/values; A = softmax(Q K^T).
PreAttentionResult pre_attention(const ForwardContext& ctx, const Var& groups,
                                 const Var& image_tokens, const GroupingSlots& slots);

struct AssignResult {
    Var soft;  // k x M, columns sum to 1 over groups
    Var hard;  // k x M one-hot columns, straight-through gradient
};

/// Softmax over groups of Q K^T (+ Gumbel noise in training passes), then a hard
/// straight-through assignment. Noise draws are routed through the replay log.
AssignResult assign_attention(const ForwardContext& ctx, const Var& groups,
                              const Var& image_tokens, const GroupingSlots& slots,
                              GumbelMode gumbel);

/// One-hot argmax per column (ties to the lower group) in the forward pass; the
/// gradient passes to `soft` unchanged.
Var straight_through(const ForwardContext& ctx, const Var& soft);

/// One-hot argmax of each column, ties to the lower row.
Matrix column_one_hot(const Matrix& soft);

/// Row i = sum_j w_ij f_j / sum_j w_ij, or zero for an empty group. The
/// normalizer is a constant of the pass.
Var update_group_tokens(const ForwardContext& ctx, const Var& weights, const Var& image_tokens);

struct GroupingResult {
    Var groups;    // k x C after the channel MLP
    Var soft;      // assign weights, k x M
    Var hard;      // one-hot assignment, k x M
    Var pre_soft;  // pre-attention weights; invalid when pre-attention is disabled
};

/// spatial MLP -> pre-attention -> assign-attention (+ hard update) -> channel MLP.
GroupingResult token_grouping_forward(const ForwardContext& ctx, const Var& groups,
                                      const Var& image_tokens, const GroupingSlots& slots,
                                      GroupingVariant variant, GumbelMode gumbel);

/// Plain-value view of the assignment matrices.
struct AssignWeights {
    Matrix soft;
    Matrix hard;
    Matrix pre_soft;
};

AssignWeights assign_weights(const GroupingResult& r);

}  // namespace sam
