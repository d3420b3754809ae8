#include <cmath>

#include "doctest.h"
#include "sam/errors.hpp"
#include "sam/scoring.hpp"
#include "test_util.hpp"

using namespace sam;
using sam::test::random_matrix;

namespace {

Matrix row_stochastic(RandomSource& rng, std::size_t rows, std::size_t cols) {
    Matrix a(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += a(i, j) = rng.uniform();
        for (std::size_t j = 0; j < cols; ++j) a(i, j) /= s;
    }
    return a;
}

// Mutual argmax over the inner block, ties to the lower index, value >= theta.
MatchSet brute_force_matches(const Matrix& p, double theta) {
    const std::size_t m = p.rows() - 1, n = p.cols() - 1;
    MatchSet out;
    std::vector<bool> used_t(n, false);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best_j = 0;
        for (std::size_t j = 1; j < n; ++j) {
            if (p(i, j) > p(i, best_j)) best_j = j;
        }
        std::size_t best_i = 0;
        for (std::size_t r = 1; r < m; ++r) {
            if (p(r, best_j) > p(best_i, best_j)) best_i = r;
        }
        if (best_i == i && p(i, best_j) >= theta) {
            out.matches.push_back({i, best_j, p(i, best_j)});
            used_t[best_j] = true;
        } else {
            out.unmatched_source.push_back(i);
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (!used_t[j]) out.unmatched_target.push_back(j);
    }
    return out;
}

}  // namespace

TEST_CASE("point and group scores equal per-entry dot products") {
    RandomSource rng(1);
    Tape t;
    const Matrix fs = random_matrix(rng, 7, 5), ft = random_matrix(rng, 4, 5);
    const Matrix s = point_score(t.constant(fs), t.constant(ft)).value();
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < 5; ++c) d += fs(i, c) * ft(j, c);
            CHECK(s(i, j) == doctest::Approx(d).epsilon(1e-14));
        }
    }
    const Matrix sym = point_score(t.constant(fs), t.constant(fs)).value();
    CHECK(sym == sym.transposed());
    CHECK(point_score(t.constant(Matrix::identity(3)), t.constant(Matrix::identity(3))).value() ==
          Matrix::identity(3));
    CHECK(group_score(t.constant(Matrix(2, 5)), t.constant(ft)).value().max_abs() == 0.0);
    CHECK_THROWS_AS(point_score(t.constant(fs), t.constant(Matrix(3, 4))), DimensionError);
}

TEST_CASE("expanded group score") {
    RandomSource rng(2);
    Tape t;
    // One-hot weights with identity S_g: 1 iff both points share a group.
    const Matrix as = Matrix::from_rows({{1, 0}, {0, 1}, {1, 0}});
    const Matrix at = Matrix::from_rows({{0, 1}, {1, 0}});
    const Matrix e = expand_group_score(t.constant(Matrix::identity(2)), t.constant(as),
                                        t.constant(at)).value();
    CHECK(e == Matrix::from_rows({{0, 1}, {1, 0}, {0, 1}}));

    const Matrix sg = random_matrix(rng, 2, 2);
    const Matrix half(4, 2, 0.5), half_t(3, 2, 0.5);
    const Matrix c = expand_group_score(t.constant(sg), t.constant(half), t.constant(half_t)).value();
    for (std::size_t k = 0; k < c.size(); ++k) CHECK(c[k] == doctest::Approx(sg.sum() / 4.0));

    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(8);
        const Matrix s = random_matrix(rng, 2, 2), a = row_stochastic(rng, m, 2),
                     b = row_stochastic(rng, n, 2);
        const Matrix got = expand_group_score(t.constant(s), t.constant(a), t.constant(b)).value();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double want = 0.0;
                for (std::size_t g = 0; g < 2; ++g) {
                    for (std::size_t h = 0; h < 2; ++h) want += a(i, g) * s(g, h) * b(j, h);
                }
                CHECK(got(i, j) == doctest::Approx(want).epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("combined score and its alpha derivative") {
    RandomSource rng(3);
    const Matrix sf = random_matrix(rng, 3, 4), se = random_matrix(rng, 3, 4);
    Tape t;
    const Matrix only = combine_scores(t.constant(sf), t.constant(se), t.constant(Matrix::scalar(1)),
                                       t.constant(Matrix::scalar(0))).value();
    CHECK(only == sf);

    const Matrix w = random_matrix(rng, 3, 4);
    auto f = [&](const Matrix& alpha) {
        Tape tt;
        return ad::sum(ad::hadamard(combine_scores(tt.constant(sf), tt.constant(se),
                                                   tt.constant(alpha),
                                                   tt.constant(Matrix::scalar(0.7))),
                                    tt.constant(w)))
            .value()(0, 0);
    };
    Tape tg;
    const Var alpha = tg.variable(Matrix::scalar(1.3));
    tg.backward(ad::sum(ad::hadamard(
        combine_scores(tg.constant(sf), tg.constant(se), alpha, tg.constant(Matrix::scalar(0.7))),
        tg.constant(w))));
    const Matrix num = test::numeric_gradient(f, Matrix::scalar(1.3));
    CHECK(test::max_rel_error(tg.grad(alpha), num) < 1e-8);
}

TEST_CASE("sinkhorn symmetric 1x1 case") {
    const PartialAssignment pa = sinkhorn(Matrix::from_rows({{0}}), 0.0, 100);
    REQUIRE(pa.p.rows() == 2);
    REQUIRE(pa.p.cols() == 2);
    for (std::size_t k = 0; k < 4; ++k) CHECK(pa.p[k] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sinkhorn diagonal-dominant scores") {
    Matrix s(6, 6, -10.0);
    for (std::size_t i = 0; i < 6; ++i) s(i, i) = 10.0;
    const PartialAssignment pa = sinkhorn(s, -10.0, 100);
    for (std::size_t i = 0; i < 6; ++i) CHECK(pa.p(i, i) > 0.95);
}

TEST_CASE("sinkhorn marginals and shift invariance") {
    RandomSource rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = 64, n = 64;
        const Matrix s = random_matrix(rng, m, n);
        const double bin = rng.normal();
        const Matrix p = sinkhorn(s, bin, 100).p;
        double worst = 0.0;
        for (std::size_t i = 0; i <= m; ++i) {
            double r = 0.0;
            for (std::size_t j = 0; j <= n; ++j) r += p(i, j);
            worst = std::max(worst, std::abs(r - (i < m ? 1.0 : static_cast<double>(n))));
        }
        for (std::size_t j = 0; j <= n; ++j) {
            double c = 0.0;
            for (std::size_t i = 0; i <= m; ++i) c += p(i, j);
            worst = std::max(worst, std::abs(c - (j < n ? 1.0 : static_cast<double>(m))));
        }
        CHECK(worst < 1e-6);

        Matrix shifted = s;
        for (std::size_t k = 0; k < shifted.size(); ++k) shifted[k] += 3.7;
        CHECK(max_abs_diff(sinkhorn(shifted, bin + 3.7, 100).p, p) < 1e-8);
    }
}

TEST_CASE("select_matches") {
    Matrix diag(5, 5, 0.0);
    for (std::size_t i = 0; i < 4; ++i) diag(i, i) = 0.9;
    const MatchSet d = select_matches(diag, 0.2);
    REQUIRE(d.matches.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(d.matches[i] == Match{i, i, 0.9});
    CHECK(d.unmatched_source.empty());

    Matrix low(4, 4, 0.1);
    const MatchSet e = select_matches(low, 0.2);
    CHECK(e.matches.empty());
    CHECK(e.unmatched_source.size() == 3);
    CHECK(e.unmatched_target.size() == 3);

    RandomSource rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + rng.below(10), n = 1 + rng.below(10);
        Matrix p(m + 1, n + 1);
        // Coarse values so ties occur.
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = static_cast<double>(rng.below(5)) / 5.0;
        const MatchSet got = select_matches(p, 0.4), want = brute_force_matches(p, 0.4);
        CHECK(got.matches == want.matches);
        CHECK(got.unmatched_source == want.unmatched_source);
        CHECK(got.unmatched_target == want.unmatched_target);
    }
}

TEST_CASE("match set json round trip") {
    MatchSet m;
    m.matches = {{0, 2, 0.75}, {3, 1, 0.5}};
    m.unmatched_source = {1, 2};
    m.unmatched_target = {0};
    const MatchSet back = match_set_from_json(match_set_to_json(m));
    CHECK(back.matches == m.matches);
    CHECK(back.unmatched_source == m.unmatched_source);
    CHECK(back.unmatched_target == m.unmatched_target);
    CHECK_THROWS_AS(match_set_from_json("{\"matches\": 3}"), InputError);
}

TEST_CASE("sinkhorn_log gradient") {
    RandomSource rng(6);
    const Matrix s0 = random_matrix(rng, 4, 3), w = random_matrix(rng, 5, 4);
    auto f = [&](const Matrix& s) {
        Tape t;
        return ad::sum(ad::hadamard(ad::exp(sinkhorn_log(t.constant(s),
                                                          t.constant(Matrix::scalar(0.4)), 30)),
                                    t.constant(w)))
            .value()(0, 0);
    };
    Tape t;
    const Var s = t.variable(s0);
    const Var bin = t.variable(Matrix::scalar(0.4));
    t.backward(ad::sum(ad::hadamard(ad::exp(sinkhorn_log(s, bin, 30)), t.constant(w))));
    CHECK(test::max_rel_error(t.grad(s), test::numeric_gradient(f, s0)) < 1e-7);
    auto fb = [&](const Matrix& b) {
        Tape tt;
        return ad::sum(ad::hadamard(ad::exp(sinkhorn_log(tt.constant(s0), tt.constant(b), 30)),
                                    tt.constant(w)))
            .value()(0, 0);
    };
    CHECK(test::max_rel_error(t.grad(bin), test::numeric_gradient(fb, Matrix::scalar(0.4))) < 1e-7);
}
