#include <cmath>

#include "doctest.h"
#include "sam/errors.hpp"
#include "sam/grouping.hpp"
#include "test_util.hpp"

using namespace sam;
using sam::test::random_matrix;

namespace {

struct Rig {
    Tape tape;
    ParamStore params;
    RandomSource rng{11};
    ReplayLog replay;
    ForwardContext ctx{tape, params, rng, replay, false};
};

void zero_mlp(ParamStore& p, const MlpSlots& m) {
    for (auto s : {m.first.weight, m.first.bias, m.second.weight, m.second.bias}) p[s].value.fill(0.0);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("selection keeps the top scores with sigmoid gates") {
    Rig r;
    RandomSource init(1);
    const auto slots = add_grouping(r.params, 1, 2, SelectionMode::selection, init);
    r.params[slots.selection_score->weight].value = Matrix::scalar(1.0);
    r.params[slots.selection_score->bias].value = Matrix::scalar(0.0);
    const Var tokens = r.tape.constant(Matrix::from_rows({{0.5}, {2.0}, {-1.0}}));
    const GroupTokens g = select_group_tokens(r.ctx, tokens, 2, slots, SelectionMode::selection);
    CHECK(g.selected_indices == std::vector<std::size_t>{1, 0});
    REQUIRE(g.gate.size() == 2);
    CHECK(g.gate[0] == doctest::Approx(0.88080).epsilon(1e-5));
    CHECK(g.gate[1] == doctest::Approx(0.62246).epsilon(1e-5));
    CHECK(g.tokens.value()(0, 0) == doctest::Approx(2.0 * sigmoid(2.0)));
    CHECK(g.tokens.value()(1, 0) == doctest::Approx(0.5 * sigmoid(0.5)));

    const Var small = r.tape.constant(Matrix::from_rows({{1.0}}));
    CHECK_THROWS_AS(select_group_tokens(r.ctx, small, 2, slots, SelectionMode::selection),
                    InputError);
}

TEST_CASE("top-k ties go to the lower index") {
    CHECK(top_k_indices({3, 3, 3, 3}, 2) == std::vector<std::size_t>{0, 1});
    CHECK(top_k_indices({1, 5, 5, 2}, 3) == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("selection weight receives a gradient") {
    RandomSource init(2);
    ParamStore params;
    const auto slots = add_grouping(params, 8, 2, SelectionMode::selection, init);
    RandomSource data(3);
    const Matrix x = random_matrix(data, 10, 8);
    Tape tape;
    RandomSource rng(0);
    ReplayLog replay;
    ForwardContext ctx{tape, params, rng, replay, false};
    const GroupTokens g =
        select_group_tokens(ctx, tape.constant(x), 2, slots, SelectionMode::selection);
    tape.backward(ad::sum(g.tokens));
    CHECK(tape.param_grads().size() == 2);
    bool nonzero = false;
    for (const auto& [slot, grad] : tape.param_grads()) {
        if (slot == slots.selection_score->weight) nonzero = grad.max_abs() > 0.0;
    }
    CHECK(nonzero);
}

TEST_CASE("random and learnable selection") {
    RandomSource init(4);
    ParamStore params;
    const auto slots = add_grouping(params, 4, 2, SelectionMode::learnable, init);
    REQUIRE(slots.learnable_tokens.has_value());
    Tape tape;
    RandomSource rng(9);
    ReplayLog replay;
    ForwardContext ctx{tape, params, rng, replay, false};
    const Var x = tape.constant(random_matrix(init, 6, 4));
    const GroupTokens l = select_group_tokens(ctx, x, 2, slots, SelectionMode::learnable);
    CHECK(l.tokens.value() == params[*slots.learnable_tokens].value);
    CHECK(l.selected_indices.empty());

    const GroupTokens rnd = select_group_tokens(ctx, x, 2, slots, SelectionMode::random);
    REQUIRE(rnd.selected_indices.size() == 2);
    CHECK(rnd.selected_indices[0] != rnd.selected_indices[1]);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(rnd.tokens.value()(k, c) == x.value()(rnd.selected_indices[k], c));
        }
    }
}

TEST_CASE("mlp blocks: residual identity and mixing pattern") {
    Rig r;
    RandomSource init(5);
    const auto slots = add_grouping(r.params, 6, 2, SelectionMode::selection, init);
    const Matrix g = random_matrix(init, 2, 6);
    // Random biases so the hidden layers are not trivially zero.
    for (auto s : {slots.spatial.first.bias, slots.channel.first.bias}) {
        r.params[s].value = random_matrix(init, 1, r.params[s].value.cols());
    }

    Matrix bumped = g;
    bumped(0, 2) += 0.5;
    const Matrix sp = spatial_mlp(r.ctx, r.tape.constant(g), slots.spatial).value();
    const Matrix sp2 = spatial_mlp(r.ctx, r.tape.constant(bumped), slots.spatial).value();
    CHECK(sp2(1, 2) != sp(1, 2));
    const Matrix ch = channel_mlp(r.ctx, r.tape.constant(g), slots.channel).value();
    const Matrix ch2 = channel_mlp(r.ctx, r.tape.constant(bumped), slots.channel).value();
    for (std::size_t c = 0; c < 6; ++c) CHECK(ch2(1, c) == ch(1, c));

    // Parameter leaves are cached per tape, so the edited weights need a fresh one.
    zero_mlp(r.params, slots.spatial);
    zero_mlp(r.params, slots.channel);
    Tape t2;
    ForwardContext c2{t2, r.params, r.rng, r.replay, false};
    CHECK(spatial_mlp(c2, t2.constant(g), slots.spatial).value() == g);
    CHECK(channel_mlp(c2, t2.constant(g), slots.channel).value() == g);
}

TEST_CASE("pre-attention weights") {
    Rig r;
    RandomSource init(6);
    const auto slots = add_grouping(r.params, 4, 2, SelectionMode::selection, init);
    const Var g = r.tape.constant(random_matrix(init, 2, 4));

    const auto one = pre_attention(r.ctx, g, r.tape.constant(random_matrix(init, 1, 4)), slots);
    CHECK(one.weights.value() == Matrix::from_rows({{1}, {1}}));

    Matrix same(5, 4);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t c = 0; c < 4; ++c) same(i, c) = 0.3 * static_cast<double>(c) - 0.2;
    }
    const auto uni = pre_attention(r.ctx, g, r.tape.constant(same), slots);
    for (std::size_t k = 0; k < uni.weights.value().size(); ++k) {
        CHECK(uni.weights.value()[k] == doctest::Approx(0.2).epsilon(1e-12));
    }

    const auto rnd = pre_attention(r.ctx, g, r.tape.constant(random_matrix(init, 30, 4, 3.0)), slots);
    for (std::size_t k = 0; k < 2; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < 30; ++j) s += rnd.weights.value()(k, j);
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("assign attention without noise is the softmax over groups") {
    Rig r;
    RandomSource init(7);
    const auto slots = add_grouping(r.params, 4, 2, SelectionMode::selection, init);
    const Matrix gm = random_matrix(init, 2, 4), xm = random_matrix(init, 9, 4);
    const AssignResult a = assign_attention(r.ctx, r.tape.constant(gm), r.tape.constant(xm), slots,
                                            GumbelMode::per_group);
    // Independent recomputation of the logits (g Wq + bq)(x Wk + bk)^T.
    const Matrix& wq = r.params[slots.assign_query.weight].value;
    const Matrix& bq = r.params[slots.assign_query.bias].value;
    const Matrix& wk = r.params[slots.assign_key.weight].value;
    const Matrix& bk = r.params[slots.assign_key.bias].value;
    auto project = [](const Matrix& in, const Matrix& w, const Matrix& b) {
        Matrix out(in.rows(), w.cols());
        for (std::size_t i = 0; i < in.rows(); ++i) {
            for (std::size_t o = 0; o < w.cols(); ++o) {
                double s = b(0, o);
                for (std::size_t c = 0; c < in.cols(); ++c) s += in(i, c) * w(c, o);
                out(i, o) = s;
            }
        }
        return out;
    };
    const Matrix q = project(gm, wq, bq), k = project(xm, wk, bk);
    for (std::size_t j = 0; j < 9; ++j) {
        double l[2];
        for (std::size_t g = 0; g < 2; ++g) {
            l[g] = 0.0;
            for (std::size_t c = 0; c < q.cols(); ++c) l[g] += q(g, c) * k(j, c);
        }
        const double p0 = 1.0 / (1.0 + std::exp(l[1] - l[0]));
        CHECK(a.soft.value()(0, j) == doctest::Approx(p0).epsilon(1e-12));
        CHECK(a.soft.value()(0, j) + a.soft.value()(1, j) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(a.hard.value()(0, j) == (l[0] >= l[1] ? 1.0 : 0.0));
    }

    // Zero query projection: equal logits give [0.5, 0.5] and the hard tie goes to group 0.
    r.params[slots.assign_query.weight].value.fill(0.0);
    r.params[slots.assign_query.bias].value.fill(0.0);
    Tape t2;
    ForwardContext c2{t2, r.params, r.rng, r.replay, false};
    const AssignResult e =
        assign_attention(c2, t2.constant(gm), t2.constant(xm), slots, GumbelMode::per_group);
    for (std::size_t j = 0; j < 9; ++j) {
        CHECK(e.soft.value()(0, j) == 0.5);
        CHECK(e.hard.value()(0, j) == 1.0);
    }
}

TEST_CASE("column one-hot") {
    CHECK(column_one_hot(Matrix::from_rows({{0.7}, {0.3}})) == Matrix::from_rows({{1}, {0}}));
    CHECK(column_one_hot(Matrix::from_rows({{0.5, 0.2}, {0.5, 0.8}})) ==
          Matrix::from_rows({{1, 0}, {0, 1}}));
}

TEST_CASE("straight-through: one-hot forward, soft gradient") {
    RandomSource rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix logits = random_matrix(rng, 2, 12, 2.0);
        const Matrix w = random_matrix(rng, 2, 12);
        ParamStore params;
        RandomSource noise(0);
        ReplayLog replay;

        Tape t1;
        ForwardContext c1{t1, params, noise, replay, false};
        const Var x1 = t1.variable(logits.transposed());
        const Var soft1 = ad::transpose(ad::softmax_rows(x1));
        const Var hard = straight_through(c1, soft1);
        CHECK(hard.value() == column_one_hot(soft1.value()));
        t1.backward(ad::sum(ad::hadamard(hard, t1.constant(w))));

        Tape t2;
        const Var x2 = t2.variable(logits.transposed());
        const Var soft2 = ad::transpose(ad::softmax_rows(x2));
        t2.backward(ad::sum(ad::hadamard(soft2, t2.constant(w))));
        CHECK(t1.grad(x1) == t2.grad(x2));
    }
}

TEST_CASE("group update is the masked mean") {
    Rig r;
    RandomSource rng(10);
    const Matrix f = random_matrix(rng, 5, 3);

    const Matrix all0 = Matrix::from_rows({{1, 1, 1, 1, 1}, {0, 0, 0, 0, 0}});
    const Matrix u0 = update_group_tokens(r.ctx, r.tape.constant(all0), r.tape.constant(f)).value();
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 5; ++i) mean += f(i, c) / 5.0;
        CHECK(u0(0, c) == doctest::Approx(mean).epsilon(1e-14));
        CHECK(u0(1, c) == 0.0);
    }

    const Matrix f2 = random_matrix(rng, 2, 3);
    const Matrix u1 =
        update_group_tokens(r.ctx, r.tape.constant(Matrix::identity(2)), r.tape.constant(f2)).value();
    CHECK(u1 == f2);

    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 3 + rng.below(20);
        const Matrix x = random_matrix(rng, m, 4);
        Matrix w(2, m);
        for (std::size_t j = 0; j < m; ++j) w(rng.below(2), j) = 1.0;
        const Matrix got = update_group_tokens(r.ctx, r.tape.constant(w), r.tape.constant(x)).value();
        for (std::size_t g = 0; g < 2; ++g) {
            std::size_t count = 0;
            std::vector<double> acc(4, 0.0);
            for (std::size_t j = 0; j < m; ++j) {
                if (w(g, j) != 1.0) continue;
                ++count;
                for (std::size_t c = 0; c < 4; ++c) acc[c] += x(j, c);
            }
            for (std::size_t c = 0; c < 4; ++c) {
                const double want = count ? acc[c] / static_cast<double>(count) : 0.0;
                CHECK(got(g, c) == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("grouping block: one-hot output and identity reduction") {
    RandomSource init(12);
    ParamStore params;
    const auto slots = add_grouping(params, 8, 2, SelectionMode::selection, init);
    RandomSource data(13);
    for (int trial = 0; trial < 100; ++trial) {
        Tape tape;
        RandomSource noise(static_cast<std::uint64_t>(trial));
        ReplayLog replay;
        ForwardContext ctx{tape, params, noise, replay, true};
        const Var x = tape.constant(random_matrix(data, 12, 8));
        const Var g = tape.constant(random_matrix(data, 2, 8));
        const auto res = token_grouping_forward(ctx, g, x, slots, GroupingVariant::full,
                                                GumbelMode::per_group);
        const Matrix& h = res.hard.value();
        bool ok = true;
        for (std::size_t j = 0; j < h.cols(); ++j) {
            const double a = h(0, j), b = h(1, j);
            ok = ok && ((a == 1.0 && b == 0.0) || (a == 0.0 && b == 1.0));
        }
        REQUIRE(ok);
    }

    zero_mlp(params, slots.spatial);
    zero_mlp(params, slots.channel);
    Tape tape;
    RandomSource noise(0);
    ReplayLog replay;
    ForwardContext ctx{tape, params, noise, replay, false};
    const Var x = tape.constant(random_matrix(data, 12, 8));
    const Var g = tape.constant(random_matrix(data, 2, 8));
    const auto res = token_grouping_forward(ctx, g, x, slots, GroupingVariant::full,
                                            GumbelMode::per_group);
    const auto pre = pre_attention(ctx, g, x, slots);
    const auto as = assign_attention(ctx, pre.groups, x, slots, GumbelMode::per_group);
    CHECK(res.soft.value() == as.soft.value());
    CHECK(res.groups.value() == update_group_tokens(ctx, as.hard, x).value());
}

TEST_CASE("grouping block gradient check with frozen noise") {
    RandomSource init(14);
    ParamStore params;
    const auto slots = add_grouping(params, 8, 2, SelectionMode::selection, init);
    RandomSource data(15);
    const Matrix x = random_matrix(data, 10, 8), g0 = random_matrix(data, 2, 8);
    const Matrix w = random_matrix(data, 2, 8), ws = random_matrix(data, 2, 10);
    for (auto gumbel : {GumbelMode::per_group, GumbelMode::per_entry}) {
        auto fn = [&](Tape& tape, ReplayLog& replay) {
            RandomSource noise(77);
            ForwardContext ctx{tape, params, noise, replay, true};
            const auto res = token_grouping_forward(ctx, tape.constant(g0), tape.constant(x),
                                                    slots, GroupingVariant::full, gumbel);
            return ad::add(ad::sum(ad::hadamard(res.groups, tape.constant(w))),
                           ad::sum(ad::hadamard(res.soft, tape.constant(ws))));
        };
        const auto r = finite_diff_check(fn, params);
        CHECK(r.max_rel_error < 1e-4);
    }
}
