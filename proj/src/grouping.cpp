#include "sam/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sam/errors.hpp"

namespace sam {

namespace {

Matrix indices_to_matrix(const std::vector<std::size_t>& idx) {
    Matrix m(idx.size(), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) m(i, 0) = static_cast<double>(idx[i]);
    return m;
}

std::vector<std::size_t> matrix_to_indices(const Matrix& m) {
    std::vector<std::size_t> idx(m.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::size_t>(m(i, 0));
    return idx;
}

// k distinct indices in [0, m), partial Fisher-Yates.
std::vector<std::size_t> random_indices(RandomSource& rng, std::size_t m, std::size_t k) {
    std::vector<std::size_t> all(m);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.below(m - i)]);
    all.resize(k);
    return all;
}

}  // namespace

GroupingSlots add_grouping(ParamStore& store, std::size_t width, std::size_t groups,
                           SelectionMode selection, RandomSource& rng) {
    GroupingSlots s;
    if (selection == SelectionMode::selection) {
        s.selection_score = add_linear(store, "grouping.selection", width, 1, rng);
    } else if (selection == SelectionMode::learnable) {
        s.learnable_tokens = store.add("grouping.tokens",
                                       random_normal(rng, groups, width, 1.0 / std::sqrt(width)));
    }
    s.spatial = add_mlp(store, "grouping.spatial", groups, 2 * groups, groups, rng);
    s.channel = add_mlp(store, "grouping.channel", width, width, width, rng);
    s.pre_query = add_linear(store, "grouping.pre.query", width, width, rng);
    s.pre_key = add_linear(store, "grouping.pre.key", width, width, rng);
    s.pre_value = add_linear(store, "grouping.pre.value", width, width, rng);
    s.assign_query = add_linear(store, "grouping.assign.query", width, width, rng);
    s.assign_key = add_linear(store, "grouping.assign.key", width, width, rng);
    return s;
}

std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(k, order.size()));
    return order;
}

GroupTokens select_group_tokens(const ForwardContext& ctx, const Var& image_tokens,
                                std::size_t groups, const GroupingSlots& slots,
                                SelectionMode mode) {
    const std::size_t m = image_tokens.rows();
    GroupTokens out;
    if (mode == SelectionMode::learnable) {
        if (!slots.learnable_tokens) throw ConfigError("learnable group tokens not allocated");
        out.tokens = ctx.param(*slots.learnable_tokens);
        return out;
    }
    if (m < groups) {
        throw InputError("cannot select " + std::to_string(groups) + " group tokens from " +
                         std::to_string(m) + " image tokens");
    }
    if (mode == SelectionMode::random) {
        out.selected_indices =
            matrix_to_indices(ctx.replay.pass(indices_to_matrix(random_indices(ctx.rng, m, groups))));
        out.tokens = ad::gather_rows(image_tokens, out.selected_indices);
        return out;
    }
    if (!slots.selection_score) throw ConfigError("selection layer not allocated");
    const Var scores = linear(ctx, image_tokens, *slots.selection_score);
    out.scores.assign(scores.value().data().begin(), scores.value().data().end());
    out.selected_indices =
        matrix_to_indices(ctx.replay.pass(indices_to_matrix(top_k_indices(out.scores, groups))));
    const Var gate = ad::sigmoid(ad::gather_rows(scores, out.selected_indices));
    out.gate.assign(gate.value().data().begin(), gate.value().data().end());
    out.tokens = ad::scale_rows(ad::gather_rows(image_tokens, out.selected_indices), gate);
    return out;
}

Var spatial_mlp(const ForwardContext& ctx, const Var& groups, const MlpSlots& m) {
    if (groups.rows() != m.first.in) {
        throw DimensionError("spatial_mlp: " + groups.value().shape_string() + " input for " +
                             std::to_string(m.first.in) + " groups");
    }
    const Var t = ad::transpose(groups);
    return ad::transpose(ad::add(t, mlp(ctx, t, m)));
}

Var channel_mlp(const ForwardContext& ctx, const Var& groups, const MlpSlots& m) {
    if (groups.cols() != m.first.in) {
        throw DimensionError("channel_mlp: " + groups.value().shape_string() + " input for width " +
                             std::to_string(m.first.in));
    }
    return ad::add(groups, mlp(ctx, groups, m));
}

PreAttentionResult pre_attention(const ForwardContext& ctx, const Var& groups,
                                 const Var& image_tokens, const GroupingSlots& slots) {
    const Var q = linear(ctx, groups, slots.pre_query);
    const Var k = linear(ctx, image_tokens, slots.pre_key);
    const Var v = linear(ctx, image_tokens, slots.pre_value);
    const Var a = ad::softmax_rows(ad::matmul_nt(q, k));
    return {ad::add(groups, ad::matmul(a, v)), a};
}

Matrix column_one_hot(const Matrix& soft) {
    Matrix hot(soft.rows(), soft.cols());
    for (std::size_t j = 0; j < soft.cols(); ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < soft.rows(); ++i) {
            if (soft(i, j) > soft(best, j)) best = i;
        }
        if (soft.rows() > 0) hot(best, j) = 1.0;
    }
    return hot;
}

Var straight_through(const ForwardContext& ctx, const Var& soft) {
    // onehot + (soft - sg(soft)). The bracket is exactly zero in a live pass, so the
    // value bit-equals the one-hot matrix; under replay sg(soft) stays at its
    // recorded value and the bracket follows the perturbed soft weights.
    Matrix value = ctx.replay.pass(column_one_hot(soft.value()));
    const Matrix frozen = ctx.replay.pass(soft.value());
    for (std::size_t k = 0; k < value.size(); ++k) value[k] += soft.value()[k] - frozen[k];
    const std::size_t id = soft.id();
    return ctx.tape.record(std::move(value), soft.requires_grad(),
                           [id](Tape& t, const Matrix& g) { t.accumulate(id, g); });
}

AssignResult assign_attention(const ForwardContext& ctx, const Var& groups,
                              const Var& image_tokens, const GroupingSlots& slots,
                              GumbelMode gumbel) {
    const Var q = linear(ctx, groups, slots.assign_query);
    const Var k = linear(ctx, image_tokens, slots.assign_key);
    Var logits = ad::matmul_nt(q, k);  // k x M
    if (ctx.training) {
        const std::size_t rows = logits.rows(), cols = logits.cols();
        Matrix noise = gumbel == GumbelMode::per_group ? gumbel_sample(ctx.rng, rows, 1)
                                                       : gumbel_sample(ctx.rng, rows, cols);
        if (gumbel == GumbelMode::per_group) {
            Matrix spread(rows, cols);
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) spread(i, j) = noise(i, 0);
            }
            noise = std::move(spread);
        }
        logits = ad::add(logits, ctx.constant(ctx.replay.pass(std::move(noise))));
    }
    const Var soft = ad::transpose(ad::softmax_rows(ad::transpose(logits)));
    return {soft, straight_through(ctx, soft)};
}

Var update_group_tokens(const ForwardContext& ctx, const Var& weights, const Var& image_tokens) {
    const Matrix& w = weights.value();
    Matrix inv(w.rows(), 1);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double count = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) count += w(i, j);
        inv(i, 0) = count > 0.0 ? 1.0 / count : 0.0;
    }
    const Var norm = ctx.constant(ctx.replay.pass(std::move(inv)));
    return ad::scale_rows(ad::matmul(weights, image_tokens), norm);
}

GroupingResult token_grouping_forward(const ForwardContext& ctx, const Var& groups,
                                      const Var& image_tokens, const GroupingSlots& slots,
                                      GroupingVariant variant, GumbelMode gumbel) {
    GroupingResult r;
    Var g = groups;
    if (variant != GroupingVariant::no_spatial_mlp) g = spatial_mlp(ctx, g, slots.spatial);
    if (variant != GroupingVariant::no_pre_attention) {
        PreAttentionResult pre = pre_attention(ctx, g, image_tokens, slots);
        g = pre.groups;
        r.pre_soft = pre.weights;
    }
    const AssignResult assign = assign_attention(ctx, g, image_tokens, slots, gumbel);
    r.soft = assign.soft;
    r.hard = assign.hard;
    const Var& weights = variant == GroupingVariant::soft_attention ? assign.soft : assign.hard;
    g = update_group_tokens(ctx, weights, image_tokens);
    if (variant != GroupingVariant::no_channel_mlp) g = channel_mlp(ctx, g, slots.channel);
    r.groups = g;
    return r;
}

AssignWeights assign_weights(const GroupingResult& r) {
    AssignWeights w;
    w.soft = r.soft.value();
    w.hard = r.hard.value();
    if (r.pre_soft.valid()) w.pre_soft = r.pre_soft.value();
    return w;
}

}  // namespace sam
