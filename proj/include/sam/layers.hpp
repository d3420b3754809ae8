#pragma once

#include <cstddef>
#include <string>

#include "sam/gradcheck.hpp"
#include "sam/params.hpp"
#include "sam/random.hpp"
#include "sam/tape.hpp"

namespace sam {

/// Everything a forward pass needs besides the inputs: the tape to record on,
/// the parameters, the noise source, the replay log for discrete choices, and
/// whether the pass is a training pass (Gumbel noise on) or evaluation.
struct ForwardContext {
    Tape& tape;
    const ParamStore& params;
    RandomSource& rng;
    ReplayLog& replay;
    bool training = true;

    [[nodiscard]] Var param(std::size_t slot) const { return tape.param(params, slot); }
    [[nodiscard]] Var constant(Matrix m) const { return tape.constant(std::move(m)); }
};

struct LinearSlots {
    std::size_t weight = 0;  // in x out
    std::size_t bias = 0;    // 1 x out
    std::size_t in = 0;
    std::size_t out = 0;
};

/// Weight ~ N(0, stddev^2) (stddev defaults to 1/sqrt(in)), zero bias.
LinearSlots add_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                       RandomSource& rng, double stddev = -1.0);

/// x W + b.
Var linear(const ForwardContext& ctx, const Var& x, const LinearSlots& l);

/// Two fully-connected layers with GELU between them.
struct MlpSlots {
    LinearSlots first;
    LinearSlots second;
};

MlpSlots add_mlp(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                 std::size_t out, RandomSource& rng);

Var mlp(const ForwardContext& ctx, const Var& x, const MlpSlots& m);

}  // namespace sam
