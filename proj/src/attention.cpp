#include "sam/attention.hpp"

#include <cmath>

#include "sam/errors.hpp"

namespace sam {

namespace {

std::size_t head_dim(std::size_t width, std::size_t heads) {
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("attention width " + std::to_string(width) +
                          " is not divisible by head count " + std::to_string(heads));
    }
    return width / heads;
}

struct Projected {
    Var q, k, v;
};

Projected project(const ForwardContext& ctx, const Var& x, const AttentionLayerSlots& layer) {
    return {linear(ctx, x, layer.query), linear(ctx, x, layer.key), linear(ctx, x, layer.value)};
}

void capture(AttentionProbe* probe, const Var& p) {
    if (probe) probe->probabilities.push_back(p.value());
}

}  // namespace

AttentionLayerSlots add_attention_layer(ParamStore& store, const std::string& name,
                                        std::size_t width, RandomSource& rng) {
    AttentionLayerSlots l;
    l.query = add_linear(store, name + ".query", width, width, rng);
    l.key = add_linear(store, name + ".key", width, width, rng);
    l.value = add_linear(store, name + ".value", width, width, rng);
    l.fuse_source = add_mlp(store, name + ".fuse_source", 3 * width, 2 * width, width, rng);
    l.fuse_target = add_mlp(store, name + ".fuse_target", 3 * width, 2 * width, width, rng);
    return l;
}

namespace {

Var attend_self(const Projected& p, std::size_t heads, AttentionProbe* probe) {
    const std::size_t d = head_dim(p.q.cols(), heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Var q = ad::slice_cols(p.q, h * d, d);
        const Var k = ad::slice_cols(p.k, h * d, d);
        const Var v = ad::slice_cols(p.v, h * d, d);
        const Var attn = ad::softmax_rows(ad::matmul_nt(q, k), scale);
        capture(probe, attn);
        outs.push_back(ad::matmul(attn, v));
    }
    return heads == 1 ? outs[0] : ad::concat_cols(outs);
}

std::pair<Var, Var> attend_cross(const Projected& ps, const Projected& pt, std::size_t heads,
                                 AttentionProbe* probe) {
    const std::size_t d = head_dim(ps.q.cols(), heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Var> to_source, to_target;
    for (std::size_t h = 0; h < heads; ++h) {
        const Var qs = ad::slice_cols(ps.q, h * d, d);
        const Var kt = ad::slice_cols(pt.k, h * d, d);
        const Var logits = ad::matmul_nt(qs, kt);
        const Var attn_s = ad::softmax_rows(logits, scale);
        const Var attn_t = ad::softmax_rows(ad::transpose(logits), scale);
        capture(probe, attn_s);
        capture(probe, attn_t);
        to_source.push_back(ad::matmul(attn_s, ad::slice_cols(pt.v, h * d, d)));
        to_target.push_back(ad::matmul(attn_t, ad::slice_cols(ps.v, h * d, d)));
    }
    if (heads == 1) return {to_source[0], to_target[0]};
    return {ad::concat_cols(to_source), ad::concat_cols(to_target)};
}

}  // namespace

Var self_attention(const ForwardContext& ctx, const Var& x, const AttentionLayerSlots& layer,
                   std::size_t heads, AttentionProbe* probe) {
    head_dim(x.cols(), heads);
    return attend_self(project(ctx, x, layer), heads, probe);
}

std::pair<Var, Var> cross_attention(const ForwardContext& ctx, const Var& source,
                                    const Var& target, const AttentionLayerSlots& layer,
                                    std::size_t heads, AttentionProbe* probe) {
    if (source.cols() != target.cols()) {
        throw DimensionError("cross_attention: widths " + std::to_string(source.cols()) + " and " +
                             std::to_string(target.cols()));
    }
    head_dim(source.cols(), heads);
    return attend_cross(project(ctx, source, layer), project(ctx, target, layer), heads, probe);
}

Var fuse_update(const ForwardContext& ctx, const Var& x, const Var& sa, const Var& ca,
                const MlpSlots& fuse) {
    const std::vector<Var> parts{x, sa, ca};
    return ad::add(x, mlp(ctx, ad::concat_cols(parts), fuse));
}

StackOutput run_stack(const ForwardContext& ctx, const Var& source_tokens,
                      const Var& source_groups, const Var& target_tokens,
                      const Var& target_groups, std::span<const AttentionLayerSlots> layers,
                      std::size_t heads, AttentionProbe* probe) {
    if (layers.empty()) return {source_tokens, source_groups, target_tokens, target_groups};
    if (source_tokens.cols() != target_tokens.cols()) {
        throw DimensionError("run_stack: widths " + std::to_string(source_tokens.cols()) + " and " +
                             std::to_string(target_tokens.cols()));
    }
    head_dim(source_tokens.cols(), heads);
    const std::size_t split_s = source_tokens.rows(), split_t = target_tokens.rows();
    Var xs = ad::concat_rows(std::vector<Var>{source_tokens, source_groups});
    Var xt = ad::concat_rows(std::vector<Var>{target_tokens, target_groups});
    for (const auto& layer : layers) {
        // Projections are shared by self- and cross-attention within the layer.
        const Projected ps = project(ctx, xs, layer);
        const Projected pt = project(ctx, xt, layer);
        const Var sa_s = attend_self(ps, heads, probe);
        const Var sa_t = attend_self(pt, heads, probe);
        const auto [ca_s, ca_t] = attend_cross(ps, pt, heads, probe);
        const Var next_s = fuse_update(ctx, xs, sa_s, ca_s, layer.fuse_source);
        const Var next_t = fuse_update(ctx, xt, sa_t, ca_t, layer.fuse_target);
        xs = next_s;
        xt = next_t;
    }
    return {ad::slice_rows(xs, 0, split_s), ad::slice_rows(xs, split_s, xs.rows() - split_s),
            ad::slice_rows(xt, 0, split_t), ad::slice_rows(xt, split_t, xt.rows() - split_t)};
}

}  // namespace sam
