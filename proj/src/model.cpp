#include "sam/model.hpp"

#include <array>
#include <cmath>

#include "json.hpp"
#include "sam/errors.hpp"

namespace sam {

namespace {

template <class E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<const char*, E>, N>& table,
             const char* what) {
    for (const auto& [name, value] : table) {
        if (s == name) return value;
    }
    std::string msg = std::string("unknown ") + what + " '" + s + "' (expected";
    for (const auto& [name, value] : table) msg += std::string(" ") + name;
    throw ConfigError(msg + ")");
}

template <class E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<const char*, E>, N>& table) {
    for (const auto& [name, value] : table) {
        if (v == value) return name;
    }
    return "?";
}

constexpr std::array<std::pair<const char*, SelectionMode>, 3> kSelection{{
    {"selection", SelectionMode::selection},
    {"learnable", SelectionMode::learnable},
    {"random", SelectionMode::random},
}};
constexpr std::array<std::pair<const char*, GroupingVariant>, 5> kGrouping{{
    {"full", GroupingVariant::full},
    {"no_pre_attention", GroupingVariant::no_pre_attention},
    {"no_spatial_mlp", GroupingVariant::no_spatial_mlp},
    {"no_channel_mlp", GroupingVariant::no_channel_mlp},
    {"soft_attention", GroupingVariant::soft_attention},
}};
constexpr std::array<std::pair<const char*, ScoreMode>, 2> kScore{{
    {"multilevel", ScoreMode::multilevel},
    {"point_only", ScoreMode::point_only},
}};
constexpr std::array<std::pair<const char*, GumbelMode>, 2> kGumbel{{
    {"per_group", GumbelMode::per_group},
    {"per_entry", GumbelMode::per_entry},
}};
constexpr std::array<std::pair<const char*, ExpansionSource>, 2> kExpansion{{
    {"assign", ExpansionSource::assign},
    {"pre_attention", ExpansionSource::pre_attention},
}};

}  // namespace

std::string to_string(SelectionMode m) { return enum_name(m, kSelection); }
std::string to_string(GroupingVariant v) { return enum_name(v, kGrouping); }
std::string to_string(ScoreMode m) { return enum_name(m, kScore); }
std::string to_string(GumbelMode m) { return enum_name(m, kGumbel); }
std::string to_string(ExpansionSource e) { return enum_name(e, kExpansion); }
SelectionMode parse_selection_mode(const std::string& s) {
    return parse_enum(s, kSelection, "selection mode");
}
GroupingVariant parse_grouping_variant(const std::string& s) {
    return parse_enum(s, kGrouping, "grouping variant");
}
ScoreMode parse_score_mode(const std::string& s) { return parse_enum(s, kScore, "score mode"); }
GumbelMode parse_gumbel_mode(const std::string& s) {
    return parse_enum(s, kGumbel, "gumbel mode");
}
ExpansionSource parse_expansion_source(const std::string& s) {
    return parse_enum(s, kExpansion, "expansion source");
}

ModelConfig ModelConfig::toy() { return {}; }

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.preset = "paper";
    c.width = 256;
    c.layers = 9;
    c.heads = 4;
    return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "paper") return paper();
    throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
}

void ModelConfig::validate() const {
    if (width == 0 || heads == 0 || width % heads != 0) {
        throw ConfigError("width " + std::to_string(width) + " must be a positive multiple of heads " +
                          std::to_string(heads));
    }
    if (groups != 2) throw ConfigError("the grouping module supports exactly 2 groups");
    if (descriptor_dim == 0) throw ConfigError("descriptor_dim must be positive");
    if (sinkhorn_iters == 0) throw ConfigError("sinkhorn_iters must be positive");
    if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must lie in [0, 1]");
    if (expansion == ExpansionSource::pre_attention &&
        grouping == GroupingVariant::no_pre_attention) {
        throw ConfigError("pre_attention expansion needs the pre-attention layer");
    }
}

std::string model_config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["preset"] = c.preset;
    j["width"] = c.width;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["groups"] = c.groups;
    j["descriptor_dim"] = c.descriptor_dim;
    j["selection_mode"] = to_string(c.selection);
    j["grouping"] = to_string(c.grouping);
    j["score"] = to_string(c.score);
    j["gumbel"] = to_string(c.gumbel);
    j["expansion"] = to_string(c.expansion);
    j["sinkhorn_iters"] = c.sinkhorn_iters;
    j["theta"] = c.theta;
    return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& text, ModelConfig c) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.contains("preset")) {
            c = ModelConfig::from_preset(j["preset"].get<std::string>());
        }
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) j[key].get_to(field);
        };
        take("width", c.width);
        take("layers", c.layers);
        take("heads", c.heads);
        take("groups", c.groups);
        take("descriptor_dim", c.descriptor_dim);
        take("sinkhorn_iters", c.sinkhorn_iters);
        take("theta", c.theta);
        if (j.contains("selection_mode")) c.selection = parse_selection_mode(j["selection_mode"]);
        if (j.contains("grouping")) c.grouping = parse_grouping_variant(j["grouping"]);
        if (j.contains("score")) c.score = parse_score_mode(j["score"]);
        if (j.contains("gumbel")) c.gumbel = parse_gumbel_mode(j["gumbel"]);
        if (j.contains("expansion")) c.expansion = parse_expansion_source(j["expansion"]);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
}

Matrix ForwardOutputs::assignment() const {
    Matrix p = log_assignment.value();
    for (double& v : p.data()) v = std::exp(v);
    return p;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    RandomSource rng(seed);
    encoder_ = add_encoder(params_, config_.descriptor_dim, config_.width, rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        layers_.push_back(
            add_attention_layer(params_, "attention." + std::to_string(l), config_.width, rng));
    }
    grouping_ = add_grouping(params_, config_.width, config_.groups, config_.selection, rng);
    alpha_ = params_.add("score.alpha", Matrix::scalar(1.0));
    const bool multilevel = config_.score == ScoreMode::multilevel;
    beta_ = params_.add("score.beta", Matrix::scalar(multilevel ? 1.0 : 0.0), multilevel);
    dustbin_ = params_.add("score.dustbin", Matrix::scalar(1.0));
}

SideOutputs Model::run_side(const ForwardContext& ctx, const Var& tokens,
                            const Var& groups) const {
    const GroupingResult g =
        token_grouping_forward(ctx, groups, tokens, grouping_, config_.grouping, config_.gumbel);
    SideOutputs s;
    s.tokens = tokens;
    s.groups = g.groups;
    s.soft = g.soft;
    s.hard = g.hard;
    s.pre_soft = g.pre_soft;
    return s;
}

ForwardOutputs Model::forward(const ForwardContext& ctx, const FeaturePair& pair,
                              AttentionProbe* probe) const {
    const Var fs = encode(ctx, encoder_, pair.source.descriptors, pair.source.keypoints);
    const Var ft = encode(ctx, encoder_, pair.target.descriptors, pair.target.keypoints);
    const GroupTokens gs = select_group_tokens(ctx, fs, config_.groups, grouping_, config_.selection);
    const GroupTokens gt = select_group_tokens(ctx, ft, config_.groups, grouping_, config_.selection);
    const StackOutput stack =
        run_stack(ctx, fs, gs.tokens, ft, gt.tokens, layers_, config_.heads, probe);

    ForwardOutputs out;
    out.source = run_side(ctx, stack.source_tokens, stack.source_groups);
    out.target = run_side(ctx, stack.target_tokens, stack.target_groups);
    out.source.selected_indices = gs.selected_indices;
    out.target.selected_indices = gt.selected_indices;

    out.point_scores = point_score(out.source.tokens, out.target.tokens);
    const Var alpha = ctx.param(alpha_);
    if (config_.score == ScoreMode::multilevel) {
        const bool pre = config_.expansion == ExpansionSource::pre_attention;
        const Var as = ad::transpose(pre ? out.source.pre_soft : out.source.soft);
        const Var at = ad::transpose(pre ? out.target.pre_soft : out.target.soft);
        const Var expanded =
            expand_group_score(group_score(out.source.groups, out.target.groups), as, at);
        out.scores = combine_scores(out.point_scores, expanded, alpha, ctx.param(beta_));
    } else {
        out.scores = ad::scale_by(out.point_scores, alpha);
    }
    out.log_assignment = sinkhorn_log(out.scores, ctx.param(dustbin_), config_.sinkhorn_iters);
    return out;
}

}  // namespace sam
