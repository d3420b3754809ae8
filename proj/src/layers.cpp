#include "sam/layers.hpp"

#include <cmath>

namespace sam {

LinearSlots add_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                       RandomSource& rng, double stddev) {
    if (stddev < 0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
    LinearSlots l;
    l.in = in;
    l.out = out;
    l.weight = store.add(name + ".weight", random_normal(rng, in, out, stddev));
    l.bias = store.add(name + ".bias", Matrix(1, out));
    return l;
}

Var linear(const ForwardContext& ctx, const Var& x, const LinearSlots& l) {
    return ad::add_row(ad::matmul(x, ctx.param(l.weight)), ctx.param(l.bias));
}

MlpSlots add_mlp(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                 std::size_t out, RandomSource& rng) {
    MlpSlots m;
    m.first = add_linear(store, name + ".fc1", in, hidden, rng);
    m.second = add_linear(store, name + ".fc2", hidden, out, rng);
    return m;
}

Var mlp(const ForwardContext& ctx, const Var& x, const MlpSlots& m) {
    return linear(ctx, ad::gelu(linear(ctx, x, m.first)), m.second);
}

}  // namespace sam
