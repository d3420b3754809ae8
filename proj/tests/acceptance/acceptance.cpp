// One line per acceptance criterion: "[PASS] name: measurements" or "[FAIL] ...".
// Optional arguments select criteria by name; the default runs all of them.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sam/cli.hpp"
#include "sam/evaluation.hpp"
#include "sam/grouping.hpp"
#include "sam/pair_io.hpp"
#include "sam/scoring.hpp"
#include "sam/training.hpp"

using namespace sam;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Matrix random_matrix(RandomSource& rng, std::size_t rows, std::size_t cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = stddev * rng.normal();
    return m;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Synthetic data of the overfit protocol.
SynthConfig overfit_synth() {
    SynthConfig sc;
    sc.num_keypoints = 64;
    sc.descriptor_noise_sigma = 0.1;
    sc.outlier_fraction = 0.3;
    return sc;
}

constexpr std::uint64_t kHeldOutSeed = 1000;

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
    const ModelGradCheck g = gradcheck_model(ModelConfig::toy(), 1, 16, 1.0);
    Outcome o;
    o.pass = g.result.max_rel_error < 1e-4 && g.elapsed_seconds < 300.0;
    o.detail = fmt("max rel err %.3e (< 1e-4) over %zu entries, worst %s; %.1f s (< 300 s)",
                   g.result.max_rel_error, g.result.entries_checked, g.worst_name.c_str(),
                   g.elapsed_seconds);
    return o;
}

Outcome straight_through_contract() {
    RandomSource init(3);
    ParamStore params;
    const GroupingSlots slots = add_grouping(params, 32, 2, SelectionMode::selection, init);
    RandomSource data(4);
    std::size_t forward_ok = 0, backward_ok = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        const std::size_t m = 8 + data.below(57);
        const Matrix x = random_matrix(data, m, 32), g = random_matrix(data, 2, 32);
        const Matrix w = random_matrix(data, 2, m);
        const std::uint64_t noise_seed = derive_seed(5, static_cast<std::uint64_t>(t));

        // Loss through the hard assignment.
        Tape th;
        RandomSource nh(noise_seed);
        ReplayLog rh;
        const ForwardContext ch{th, params, nh, rh, true};
        const AssignResult ah = assign_attention(ch, th.constant(g), th.constant(x), slots,
                                                 GumbelMode::per_group);
        if (ah.hard.value() == column_one_hot(ah.soft.value())) ++forward_ok;
        th.backward(ad::sum(ad::hadamard(ah.hard, th.constant(w))));

        // Same loss applied to the soft assignment directly.
        Tape ts;
        RandomSource ns(noise_seed);
        ReplayLog rs;
        const ForwardContext cs{ts, params, ns, rs, true};
        const AssignResult as = assign_attention(cs, ts.constant(g), ts.constant(x), slots,
                                                 GumbelMode::per_group);
        ts.backward(ad::sum(ad::hadamard(as.soft, ts.constant(w))));

        bool same = th.grad(ah.soft) == ts.grad(as.soft);
        const auto gh = th.param_grads(), gs = ts.param_grads();
        same = same && gh.size() == gs.size();
        for (std::size_t k = 0; same && k < gh.size(); ++k) {
            same = gh[k].first == gs[k].first && gh[k].second == gs[k].second;
        }
        if (same) ++backward_ok;
    }
    Outcome o;
    o.pass = forward_ok == trials && backward_ok == trials;
    o.detail = fmt("forward one-hot bit-equal %zu/%d; gradient bit-equal %zu/%d", forward_ok,
                   trials, backward_ok, trials);
    return o;
}

Outcome sinkhorn_contract() {
    RandomSource rng(6);
    double worst_marginal = 0.0, worst_shift = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t m = 64, n = 64;
        const Matrix s = random_matrix(rng, m, n, 2.0);
        const double bin = rng.normal();
        const Matrix p = sinkhorn(s, bin, 100).p;
        for (std::size_t i = 0; i <= m; ++i) {
            double r = 0.0;
            for (std::size_t j = 0; j <= n; ++j) r += p(i, j);
            worst_marginal = std::max(worst_marginal, std::abs(r - (i < m ? 1.0 : double(n))));
        }
        for (std::size_t j = 0; j <= n; ++j) {
            double c = 0.0;
            for (std::size_t i = 0; i <= m; ++i) c += p(i, j);
            worst_marginal = std::max(worst_marginal, std::abs(c - (j < n ? 1.0 : double(m))));
        }
        const double shift = rng.uniform(-10.0, 10.0);
        Matrix shifted = s;
        for (std::size_t k = 0; k < shifted.size(); ++k) shifted[k] += shift;
        worst_shift = std::max(worst_shift, max_abs_diff(sinkhorn(shifted, bin + shift, 100).p, p));
    }
    Outcome o;
    o.pass = worst_marginal < 1e-6 && worst_shift < 1e-8;
    o.detail = fmt("max marginal deviation %.3e (< 1e-6); max |dP| under shift %.3e (< 1e-8)",
                   worst_marginal, worst_shift);
    return o;
}

// ---------------------------------------------------------------------------
// Training runs through the CLI entry point, as a user would launch them.

struct CliRun {
    fs::path dir;
    int train_rc = -1, eval_rc = -1;
    double seconds = 0.0;
    std::string checkpoint, report, metrics;
    std::vector<EpochMetrics> log;
    nlohmann::json summary;
};

CliRun cli_train(const fs::path& dir, const std::string& lambda) {
    CliRun r;
    r.dir = dir;
    fs::remove_all(dir);
    std::ostringstream out, err;
    const auto t0 = Clock::now();
    r.train_rc = cli::run({"train", "--preset", "toy", "--seed", "0", "--pairs", "50", "--keypoints",
                           "64", "--noise", "0.1", "--outliers", "0.3", "--epochs", "200",
                           "--lambda", lambda, "--out", dir.string()},
                          out, err);
    r.seconds = seconds_since(t0);
    if (r.train_rc != 0) {
        std::fprintf(stderr, "train failed: %s\n", err.str().c_str());
        return r;
    }
    r.checkpoint = read_text_file(dir / "model.ckpt");
    r.metrics = read_text_file(dir / "metrics.jsonl");
    std::istringstream lines(r.metrics);
    for (std::string line; std::getline(lines, line);) {
        const auto j = nlohmann::json::parse(line);
        EpochMetrics e;
        e.epoch = j["epoch"];
        e.loss = j["loss"];
        r.log.push_back(e);
    }
    // The training pairs are regenerated from the same seed for evaluation.
    const auto data = dir / "train_pairs";
    std::ostringstream so, se;
    cli::run({"synth", "--seed", "0", "--pairs", "50", "--keypoints", "64", "--noise", "0.1",
              "--outliers", "0.3", "--out", data.string()},
             so, se);
    std::ostringstream eo, ee;
    r.eval_rc = cli::run({"eval", "--model", (dir / "model.ckpt").string(), "--data", data.string(),
                          "--out", (dir / "report.json").string()},
                         eo, ee);
    if (r.eval_rc == 0) {
        r.report = read_text_file(dir / "report.json");
        r.summary = nlohmann::json::parse(r.report)["summary"];
    }
    return r;
}

Outcome overfit(const CliRun& r) {
    Outcome o;
    if (r.train_rc != 0 || r.eval_rc != 0 || r.log.empty()) {
        o.detail = "training or evaluation failed";
        return o;
    }
    const double first = r.log.front().loss, last = r.log.back().loss;
    const double p = r.summary["precision"], rc = r.summary["recall"];
    const double ratio = last / first;
    o.pass = ratio < 0.1 && p > 0.9 && rc > 0.9 && r.seconds < 1800.0;
    o.detail = fmt("loss %.4f -> %.4f (ratio %.4f < 0.1); precision %.4f, recall %.4f (> 0.9); "
                   "%.0f s (< 1800 s)",
                   first, last, ratio, p, rc, r.seconds);
    return o;
}

Outcome grouping_emergence(const CliRun& with_group, const CliRun& without) {
    Outcome o;
    if (with_group.eval_rc != 0 || without.eval_rc != 0) {
        o.detail = "training or evaluation failed";
        return o;
    }
    const double a = with_group.summary["grouping_accuracy"], b = without.summary["grouping_accuracy"];
    o.pass = a > 0.8 && b > 0.6;
    o.detail = fmt("grouping accuracy %.4f with lambda=1 (> 0.8), %.4f with lambda=0 (> 0.6)", a, b);
    return o;
}

Outcome determinism(const CliRun& a, const CliRun& b) {
    Outcome o;
    const bool ckpt = !a.checkpoint.empty() && a.checkpoint == b.checkpoint;
    const bool report = !a.report.empty() && a.report == b.report;
    const bool metrics = a.metrics == b.metrics;
    o.pass = ckpt && report && metrics;
    o.detail = fmt("checkpoint %s, eval report %s, metrics log %s (%zu bytes)",
                   ckpt ? "identical" : "DIFFERENT", report ? "identical" : "DIFFERENT",
                   metrics ? "identical" : "DIFFERENT", a.checkpoint.size());
    return o;
}

// ---------------------------------------------------------------------------

Outcome ablation_direction() {
    const auto train_pairs = cli::synthesize_pairs(overfit_synth(), 50, 0);
    const auto held_out = cli::synthesize_pairs(overfit_synth(), 50, kHeldOutSeed);
    auto f1_of = [&](ScoreMode score, SelectionMode selection, std::uint64_t seed) {
        TrainConfig c;
        c.model = ModelConfig::toy();
        c.model.score = score;
        c.model.selection = selection;
        c.seed = seed;
        const TrainResult r = train(c, train_pairs);
        EvalOptions e;
        e.seed = seed;
        return evaluate(r.model, held_out, e).f1;
    };
    double base = 0, point = 0, random = 0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const double b = f1_of(ScoreMode::multilevel, SelectionMode::selection, seed);
        const double p = f1_of(ScoreMode::point_only, SelectionMode::selection, seed);
        const double q = f1_of(ScoreMode::multilevel, SelectionMode::random, seed);
        per_seed += fmt(" [seed %llu: %.4f/%.4f/%.4f]", static_cast<unsigned long long>(seed), b, p, q);
        base += b / 3;
        point += p / 3;
        random += q / 3;
    }
    Outcome o;
    o.pass = base >= point && base >= random;
    o.detail = fmt("held-out F1 multilevel+selection %.4f >= point_only %.4f, >= random selection "
                   "%.4f;",
                   base, point, random) +
               per_seed;
    return o;
}

// ---------------------------------------------------------------------------
// Brute-force oracles.

struct Warp {
    double h[3][3];
    explicit Warp(const Homography& hom) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) h[r][c] = hom(r, c);
    }
    double error(double x, double y, double qx, double qy) const {
        const double w = h[2][0] * x + h[2][1] * y + h[2][2];
        const double ox = (h[0][0] * x + h[0][1] * y + h[0][2]) / w;
        const double oy = (h[1][0] * x + h[1][1] * y + h[1][2]) / w;
        return std::hypot(ox - qx, oy - qy);
    }
};

bool ground_truth_oracle(RandomSource& rng) {
    SynthConfig sc;
    sc.num_keypoints = 10 + rng.below(40);
    sc.jitter_px = rng.uniform(0.0, 4.0);
    sc.outlier_fraction = rng.uniform(0.0, 0.6);
    sc.min_spacing_px = rng.uniform() < 0.5 ? 0.0 : 8.0;
    const FeaturePair pair = generate_pair(rng, sc);
    const Matrix& p = pair.source.keypoints.points;
    const Matrix& q = pair.target.keypoints.points;
    const Warp warp(pair.gt_homography);
    const std::size_t m = p.rows(), n = q.rows();
    std::vector<std::vector<double>> d(m, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i][j] = warp.error(p(i, 0), p(i, 1), q(j, 0), q(j, 1));
    GroundTruth want;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (!(d[i][j] < 3.0)) continue;
            bool nearest = true;
            for (std::size_t k = 0; k < n; ++k) nearest = nearest && (d[i][k] > d[i][j] || (d[i][k] == d[i][j] && k >= j));
            for (std::size_t k = 0; k < m; ++k) nearest = nearest && (d[k][j] > d[i][j] || (d[k][j] == d[i][j] && k >= i));
            if (nearest) want.matches.emplace_back(i, j);
        }
        bool far = true;
        for (std::size_t j = 0; j < n; ++j) far = far && d[i][j] > 5.0;
        if (far) want.unmatched_source.push_back(i);
    }
    for (std::size_t j = 0; j < n; ++j) {
        bool far = true;
        for (std::size_t i = 0; i < m; ++i) far = far && d[i][j] > 5.0;
        if (far) want.unmatched_target.push_back(j);
    }
    const GroundTruth got = compute_ground_truth(pair);
    return got.matches == want.matches && got.unmatched_source == want.unmatched_source &&
           got.unmatched_target == want.unmatched_target;
}

bool expand_oracle(RandomSource& rng) {
    const std::size_t m = 1 + rng.below(20), n = 1 + rng.below(20), k = 1 + rng.below(3);
    auto stochastic = [&](std::size_t rows) {
        Matrix a(rows, k);
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::size_t g = 0; g < k; ++g) s += a(i, g) = rng.uniform();
            for (std::size_t g = 0; g < k; ++g) a(i, g) /= s;
        }
        return a;
    };
    const Matrix as = stochastic(m), at = stochastic(n), sg = random_matrix(rng, k, k);
    Tape t;
    const Matrix got = expand_group_score(t.constant(sg), t.constant(as), t.constant(at)).value();
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> row(k, 0.0);
        for (std::size_t h = 0; h < k; ++h)
            for (std::size_t g = 0; g < k; ++g) row[h] += as(i, g) * sg(g, h);
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t h = 0; h < k; ++h) s += row[h] * at(j, h);
            if (got(i, j) != s) return false;
        }
    }
    return true;
}

bool select_oracle(RandomSource& rng) {
    const std::size_t m = 1 + rng.below(15), n = 1 + rng.below(15);
    Matrix p(m + 1, n + 1);
    const bool coarse = rng.uniform() < 0.5;
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = coarse ? static_cast<double>(rng.below(6)) / 6.0 : rng.uniform();
    }
    const double theta = rng.uniform(0.0, 0.6);
    const MatchSet got = select_matches(p, theta);
    std::vector<std::pair<std::size_t, std::size_t>> want;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (!(p(i, j) >= theta)) continue;
            bool best = true;
            for (std::size_t k = 0; k < n; ++k) best = best && (p(i, k) < p(i, j) || (p(i, k) == p(i, j) && k >= j));
            for (std::size_t k = 0; k < m; ++k) best = best && (p(k, j) < p(i, j) || (p(k, j) == p(i, j) && k >= i));
            if (best) want.emplace_back(i, j);
        }
    }
    if (got.matches.size() != want.size()) return false;
    std::set<std::size_t> matched_s, matched_t;
    for (std::size_t k = 0; k < want.size(); ++k) {
        const Match& g = got.matches[k];
        if (g.source != want[k].first || g.target != want[k].second || g.confidence != p(g.source, g.target)) return false;
        matched_s.insert(g.source);
        matched_t.insert(g.target);
    }
    std::vector<std::size_t> us, ut;
    for (std::size_t i = 0; i < m; ++i)
        if (!matched_s.count(i)) us.push_back(i);
    for (std::size_t j = 0; j < n; ++j)
        if (!matched_t.count(j)) ut.push_back(j);
    return got.unmatched_source == us && got.unmatched_target == ut;
}

bool metrics_oracle(RandomSource& rng) {
    SynthConfig sc;
    sc.num_keypoints = 10 + rng.below(40);
    const FeaturePair pair = generate_pair(rng, sc);
    const GroundTruth gt = compute_ground_truth(pair);
    const Matrix& p = pair.source.keypoints.points;
    const Matrix& q = pair.target.keypoints.points;
    const Warp warp(pair.gt_homography);
    MatchSet pred;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        if (rng.uniform() < 0.4) continue;
        std::size_t j = rng.below(q.rows());
        for (const auto& [a, b] : gt.matches) {
            if (a == i && rng.uniform() < 0.6) j = b;
        }
        pred.matches.push_back({i, j, 0.5});
    }
    std::size_t correct = 0;
    for (const auto& mt : pred.matches) {
        if (warp.error(p(mt.source, 0), p(mt.source, 1), q(mt.target, 0), q(mt.target, 1)) < 3.0) ++correct;
    }
    const double prec = pred.matches.empty() ? 0.0 : double(correct) / double(pred.matches.size());
    const double rec = gt.matches.empty() ? 0.0 : std::min(1.0, double(correct) / double(gt.matches.size()));
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    const MatchMetrics got = match_metrics(pred, gt, pair);
    return got.correct == correct && got.predicted == pred.matches.size() &&
           got.ground_truth == gt.matches.size() && got.precision == prec && got.recall == rec &&
           got.f1 == f1;
}

Outcome oracle_equivalences() {
    RandomSource rng(8);
    const std::pair<const char*, std::function<bool(RandomSource&)>> checks[] = {
        {"compute_ground_truth", ground_truth_oracle},
        {"expand_group_score", expand_oracle},
        {"select_matches", select_oracle},
        {"match_metrics", metrics_oracle},
    };
    Outcome o;
    o.pass = true;
    for (const auto& [name, fn] : checks) {
        int agree = 0;
        for (int t = 0; t < 100; ++t) agree += fn(rng) ? 1 : 0;
        o.pass = o.pass && agree == 100;
        o.detail += fmt("%s%s %d/100", o.detail.empty() ? "" : ", ", name, agree);
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> only(argv + 1, argv + argc);
    auto wanted = [&](const char* name) { return only.empty() || only.count(name) > 0; };
    int failures = 0;
    auto report = [&](const char* name, const Outcome& o, double secs) {
        std::printf("[%s] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failures;
    };
    auto timed = [&](const char* name, const std::function<Outcome()>& fn) {
        if (!wanted(name)) return;
        const auto t0 = Clock::now();
        const Outcome o = fn();
        report(name, o, seconds_since(t0));
    };

    timed("gradient-integrity", gradient_integrity);
    timed("straight-through-contract", straight_through_contract);
    timed("sinkhorn-contract", sinkhorn_contract);
    timed("oracle-equivalences", oracle_equivalences);

    const bool need_runs = wanted("overfit") || wanted("grouping-emergence") || wanted("determinism");
    if (need_runs) {
        const fs::path root = fs::temp_directory_path() / "sam_acceptance";
        const CliRun a = cli_train(root / "lambda1_a", "1");
        if (wanted("overfit")) report("overfit", overfit(a), a.seconds);
        if (wanted("grouping-emergence")) {
            const CliRun z = cli_train(root / "lambda0", "0");
            report("grouping-emergence", grouping_emergence(a, z), z.seconds);
        }
        if (wanted("determinism")) {
            const CliRun b = cli_train(root / "lambda1_b", "1");
            report("determinism", determinism(a, b), b.seconds);
        }
        fs::remove_all(root);
    }
    timed("ablation-direction", ablation_direction);

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
