#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sam/attention.hpp"
#include "sam/encoder.hpp"
#include "sam/geometry.hpp"
#include "sam/grouping.hpp"
#include "sam/scoring.hpp"

namespace sam {

enum class ScoreMode { multilevel, point_only };
/// Which per-token group distribution expands S^g to point level.
enum class ExpansionSource { assign, pre_attention };

struct ModelConfig {
    std::string preset = "toy";
    std::size_t width = 32;
    std::size_t layers = 3;
    std::size_t heads = 2;
    std::size_t groups = 2;
    std::size_t descriptor_dim = 64;
    SelectionMode selection = SelectionMode::selection;
    GroupingVariant grouping = GroupingVariant::full;
    ScoreMode score = ScoreMode::multilevel;
    GumbelMode gumbel = GumbelMode::per_group;
    ExpansionSource expansion = ExpansionSource::assign;
    std::size_t sinkhorn_iters = 100;
    double theta = 0.2;

    /// L=3, C=32, 2 heads.
    static ModelConfig toy();
    /// L=9, C=256, 4 heads.
    static ModelConfig paper();
    /// Throws ConfigError for unknown names.
    static ModelConfig from_preset(const std::string& name);

    /// Throws ConfigError for inconsistent settings.
    void validate() const;
};

std::string to_string(SelectionMode m);
std::string to_string(GroupingVariant v);
std::string to_string(ScoreMode m);
std::string to_string(GumbelMode m);
std::string to_string(ExpansionSource e);
SelectionMode parse_selection_mode(const std::string& s);
GroupingVariant parse_grouping_variant(const std::string& s);
ScoreMode parse_score_mode(const std::string& s);
GumbelMode parse_gumbel_mode(const std::string& s);
ExpansionSource parse_expansion_source(const std::string& s);

std::string model_config_to_json(const ModelConfig& c);
/// Missing keys keep the values already in `base`.
ModelConfig model_config_from_json(const std::string& text, ModelConfig base = {});

/// Per-image intermediate results of a forward pass.
struct SideOutputs {
    Var tokens;      // image tokens after the attention stack, M x C
    Var groups;      // group tokens after the grouping module, k x C
    Var soft;        // k x M assign weights
    Var hard;        // k x M one-hot assignment
    Var pre_soft;    // k x M pre-attention weights (invalid when disabled)
    std::vector<std::size_t> selected_indices;
};

struct ForwardOutputs {
    SideOutputs source;
    SideOutputs target;
    Var point_scores;   // M x N
    Var scores;         // combined M x N
    Var log_assignment; // (M+1) x (N+1)

    [[nodiscard]] Matrix assignment() const;
};

/// All weights of the matcher plus the slot layout.
class Model {
public:
    /// Parameters are initialised from `seed`.
    Model(ModelConfig config, std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] ParamStore& params() noexcept { return params_; }
    [[nodiscard]] const ParamStore& params() const noexcept { return params_; }

    /// encoder -> group selection -> attention stack -> grouping -> scores -> Sinkhorn.
    ForwardOutputs forward(const ForwardContext& ctx, const FeaturePair& pair,
                           AttentionProbe* probe = nullptr) const;

    [[nodiscard]] std::size_t alpha_slot() const noexcept { return alpha_; }
    [[nodiscard]] std::size_t beta_slot() const noexcept { return beta_; }
    [[nodiscard]] std::size_t dustbin_slot() const noexcept { return dustbin_; }

private:
    SideOutputs run_side(const ForwardContext& ctx, const Var& tokens, const Var& groups) const;

    ModelConfig config_;
    ParamStore params_;
    EncoderSlots encoder_;
    GroupingSlots grouping_;
    std::vector<AttentionLayerSlots> layers_;
    std::size_t alpha_ = 0;
    std::size_t beta_ = 0;
    std::size_t dustbin_ = 0;
};

}  // namespace sam
