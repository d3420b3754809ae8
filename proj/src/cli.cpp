#include "sam/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sam/errors.hpp"
#include "sam/pair_io.hpp"

namespace sam::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;

// Flags shared by the commands; unset ones leave the config untouched.
struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset;
    std::optional<std::size_t> pairs;
    std::optional<std::size_t> keypoints;
    std::optional<std::string> out, model, data, matches;
    std::optional<int> jobs;
    std::optional<std::string> selection_mode, grouping, score, gumbel, expansion;
    std::optional<std::size_t> epochs, batch_size, warmup_epochs, sinkhorn_iters, descriptor_dim;
    std::optional<double> lr, lambda, theta, noise, outliers;
};

void add_common(CLI::App& app, Flags& f) {
    app.add_option("--config", f.config, "JSON run config; flags override it");
    app.add_option("--seed", f.seed, "Random seed");
    app.add_option("--jobs", f.jobs, "Parallel pair workers");
}

void add_model_flags(CLI::App& app, Flags& f) {
    app.add_option("--preset", f.preset, "Architecture preset: toy or paper");
    app.add_option("--selection-mode", f.selection_mode, "selection | learnable | random");
    app.add_option("--grouping", f.grouping,
                   "full | no_pre_attention | no_spatial_mlp | no_channel_mlp | soft_attention");
    app.add_option("--score", f.score, "multilevel | point_only");
    app.add_option("--gumbel", f.gumbel, "per_group | per_entry");
    app.add_option("--expansion", f.expansion, "Group-score expansion weights: assign | pre_attention");
    app.add_option("--sinkhorn-iters", f.sinkhorn_iters, "Sinkhorn iterations");
    app.add_option("--theta", f.theta, "Match confidence threshold");
    app.add_option("--descriptor-dim", f.descriptor_dim, "Descriptor width");
}

void add_synth_flags(CLI::App& app, Flags& f) {
    app.add_option("--pairs", f.pairs, "Number of synthetic pairs");
    app.add_option("--keypoints", f.keypoints, "Keypoints per image");
    app.add_option("--noise", f.noise, "Descriptor noise sigma");
    app.add_option("--outliers", f.outliers, "Outlier fraction");
}

void add_train_flags(CLI::App& app, Flags& f) {
    app.add_option("--epochs", f.epochs, "Training epochs");
    app.add_option("--batch-size", f.batch_size, "Pairs per optimizer step");
    app.add_option("--lr", f.lr, "Base learning rate");
    app.add_option("--warmup-epochs", f.warmup_epochs, "Linear warm-up epochs");
    app.add_option("--lambda", f.lambda, "Grouping loss weight");
}

RunConfig run_config_from_json(const std::string& text) {
    RunConfig rc;
    rc.train = train_config_from_json(text, rc.train);
    try {
        const auto j = nlohmann::json::parse(text);
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) j[key].get_to(field);
        };
        take("pairs", rc.pairs);
        take("keypoints", rc.synth.num_keypoints);
        take("descriptor_noise_sigma", rc.synth.descriptor_noise_sigma);
        take("outlier_fraction", rc.synth.outlier_fraction);
        take("jitter_px", rc.synth.jitter_px);
        take("max_corner_shift", rc.synth.max_corner_shift);
        if (j.contains("out")) rc.out = j["out"].get<std::string>();
        if (j.contains("model")) rc.model = j["model"].get<std::string>();
        if (j.contains("data")) rc.data = j["data"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed run config: ") + e.what());
    }
    return rc;
}

RunConfig resolve(const Flags& f) {
    RunConfig rc = f.config ? run_config_from_json(read_text_file(*f.config)) : RunConfig{};
    ModelConfig& m = rc.train.model;
    if (f.preset) {
        const ModelConfig p = ModelConfig::from_preset(*f.preset);
        m.preset = p.preset;
        m.width = p.width;
        m.layers = p.layers;
        m.heads = p.heads;
    }
    if (f.selection_mode) m.selection = parse_selection_mode(*f.selection_mode);
    if (f.grouping) m.grouping = parse_grouping_variant(*f.grouping);
    if (f.score) m.score = parse_score_mode(*f.score);
    if (f.gumbel) m.gumbel = parse_gumbel_mode(*f.gumbel);
    if (f.expansion) m.expansion = parse_expansion_source(*f.expansion);
    if (f.sinkhorn_iters) m.sinkhorn_iters = *f.sinkhorn_iters;
    if (f.theta) m.theta = *f.theta;
    if (f.descriptor_dim) m.descriptor_dim = *f.descriptor_dim;
    if (f.seed) rc.train.seed = *f.seed;
    if (f.jobs) rc.train.jobs = *f.jobs;
    if (f.epochs) rc.train.epochs = *f.epochs;
    if (f.batch_size) rc.train.batch_size = *f.batch_size;
    if (f.lr) rc.train.base_lr = *f.lr;
    if (f.warmup_epochs) rc.train.warmup_epochs = *f.warmup_epochs;
    if (f.lambda) rc.train.group_loss_weight = *f.lambda;
    if (f.pairs) rc.pairs = *f.pairs;
    if (f.keypoints) rc.synth.num_keypoints = *f.keypoints;
    if (f.noise) rc.synth.descriptor_noise_sigma = *f.noise;
    if (f.outliers) rc.synth.outlier_fraction = *f.outliers;
    if (f.out) rc.out = *f.out;
    if (f.model) rc.model = *f.model;
    if (f.data) rc.data = *f.data;
    if (f.matches) rc.matches = *f.matches;
    rc.synth.descriptor_dim = m.descriptor_dim;
    rc.train.validate();
    return rc;
}

void require(const fs::path& p, const char* flag) {
    if (p.empty()) throw ConfigError(std::string(flag) + " is required");
}

void emit(const std::string& text, const fs::path& path, std::ostream& out) {
    if (path.empty()) {
        out << text;
    } else {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_text_file(path, text);
    }
}

std::string pair_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "pair_%04zu.json", i);
    return buf;
}

int cmd_synth(const RunConfig& rc, std::ostream& out) {
    require(rc.out, "--out");
    if (rc.pairs == 0) throw ConfigError("--pairs must be positive");
    fs::create_directories(rc.out);
    nlohmann::ordered_json manifest;
    manifest["seed"] = rc.train.seed;
    manifest["keypoints"] = rc.synth.num_keypoints;
    manifest["descriptor_dim"] = rc.synth.descriptor_dim;
    manifest["descriptor_noise_sigma"] = rc.synth.descriptor_noise_sigma;
    manifest["outlier_fraction"] = rc.synth.outlier_fraction;
    auto& list = manifest["pairs"] = nlohmann::ordered_json::array();
    const auto pairs = synthesize_pairs(rc.synth, rc.pairs, rc.train.seed);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        save_pair(rc.out / pair_file_name(i), pairs[i]);
        list.push_back({{"file", pair_file_name(i)}, {"seed", pairs[i].seed}});
    }
    write_text_file(rc.out / "manifest.json", manifest.dump(2) + "\n");
    out << "wrote " << pairs.size() << " pairs to " << rc.out.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc, std::ostream& out) {
    require(rc.out, "--out");
    const auto pairs =
        rc.data.empty() ? synthesize_pairs(rc.synth, rc.pairs, rc.train.seed) : load_pairs(rc.data);
    fs::create_directories(rc.out);
    write_text_file(rc.out / "train_config.json", train_config_to_json(rc.train));
    const TrainResult result = train(rc.train, pairs, rc.out);
    const EpochMetrics& last = result.log.back();
    out << "epoch " << last.epoch << ": loss " << last.loss << ", precision " << last.precision
        << ", recall " << last.recall << ", f1 " << last.f1 << "\n";
    out << "checkpoint " << (rc.out / "model.ckpt").string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& rc, std::ostream& out) {
    require(rc.model, "--model");
    require(rc.data, "--data");
    const Model model = load_model(rc.model);
    EvalOptions opts;
    opts.seed = rc.train.seed;
    opts.jobs = rc.train.jobs;
    opts.ground_truth = rc.train.ground_truth;
    const EvalReport report = evaluate(model, load_pairs(rc.data), opts);
    emit(eval_report_to_json(report), rc.out, out);
    if (!rc.out.empty()) {
        out << "precision " << report.precision << ", recall " << report.recall << ", f1 "
            << report.f1 << ", auc@10px " << report.auc_10px << ", grouping "
            << report.grouping_accuracy << "\n";
    }
    return 0;
}

FeaturePair single_pair(const fs::path& path) {
    if (fs::is_directory(path)) {
        auto pairs = load_pairs(path);
        if (pairs.empty()) throw InputError("no pairs in '" + path.string() + "'");
        return pairs.front();
    }
    return load_pair(path);
}

int cmd_match(const RunConfig& rc, std::ostream& out) {
    require(rc.model, "--model");
    require(rc.data, "--data");
    const Model model = load_model(rc.model);
    const PairPrediction p = predict(model, single_pair(rc.data), rc.train.seed);
    emit(match_set_to_json(p.matches), rc.out, out);
    return 0;
}

int cmd_viz(const RunConfig& rc, std::ostream& out) {
    require(rc.data, "--data");
    if (rc.model.empty() && rc.matches.empty()) throw ConfigError("viz needs --model or --matches");
    const FeaturePair pair = single_pair(rc.data);
    MatchSet matches;
    Matrix hard_s, hard_t;
    if (!rc.model.empty()) {
        const PairPrediction p = predict(load_model(rc.model), pair, rc.train.seed);
        matches = p.matches;
        hard_s = p.hard_source;
        hard_t = p.hard_target;
    }
    if (!rc.matches.empty()) matches = match_set_from_json(read_text_file(rc.matches));
    const Matrix errors = reprojection_errors(pair.source.keypoints.points,
                                              pair.target.keypoints.points, pair.gt_homography);
    std::vector<bool> correct;
    for (const auto& m : matches.matches) {
        if (m.source >= errors.rows() || m.target >= errors.cols()) {
            throw InputError("match (" + std::to_string(m.source) + ", " +
                             std::to_string(m.target) + ") out of range for this pair");
        }
        correct.push_back(errors(m.source, m.target) < rc.train.ground_truth.match_threshold);
    }
    emit(render_svg(pair, matches, correct, hard_s, hard_t), rc.out, out);
    return 0;
}

int cmd_gradcheck(const RunConfig& rc, const Flags& f, std::ostream& out) {
    const std::size_t keypoints = f.keypoints.value_or(16);
    const ModelGradCheck check =
        gradcheck_model(rc.train.model, rc.train.seed, keypoints, rc.train.group_loss_weight);
    char line[256];
    std::snprintf(line, sizeof line,
                  "max relative error %.3e over %zu entries (worst %s[%zu]: analytic %.9g, numeric "
                  "%.9g) in %.1f s\n",
                  check.result.max_rel_error, check.result.entries_checked, check.worst_name.c_str(),
                  check.result.worst_entry, check.result.analytic, check.result.numeric,
                  check.elapsed_seconds);
    out << line;
    const bool ok = check.result.max_rel_error <= kGradTolerance;
    out << (ok ? "PASS" : "FAIL") << " (tolerance 1e-4)\n";
    return ok ? 0 : 1;
}

}  // namespace

std::vector<FeaturePair> synthesize_pairs(const SynthConfig& config, std::size_t count,
                                          std::uint64_t seed) {
    std::vector<FeaturePair> pairs;
    pairs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        RandomSource rng(derive_seed(seed, i));
        pairs.push_back(generate_pair(rng, config));
    }
    return pairs;
}

std::vector<FeaturePair> load_pairs(const fs::path& path) {
    if (!fs::is_directory(path)) return {load_pair(path)};
    std::vector<fs::path> files;
    const fs::path manifest = path / "manifest.json";
    if (fs::exists(manifest)) {
        try {
            const auto j = nlohmann::json::parse(read_text_file(manifest));
            for (const auto& e : j.at("pairs")) files.push_back(path / e.at("file").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw InputError(manifest.string() + ": " + e.what());
        }
    } else {
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
    }
    std::vector<FeaturePair> pairs;
    for (const auto& f : files) pairs.push_back(load_pair(f));
    return pairs;
}

std::string render_svg(const FeaturePair& pair, const MatchSet& matches,
                       const std::vector<bool>& correct, const Matrix& hard_source,
                       const Matrix& hard_target) {
    constexpr double kGap = 20.0, kMargin = 10.0;
    const ImageSize ls = pair.source.keypoints.image_size, rs = pair.target.keypoints.image_size;
    const double offset = kMargin + ls.width + kGap;
    const double width = offset + rs.width + kMargin;
    const double height = 2 * kMargin + std::max(ls.height, rs.height);
    static const char* kGroupColor[] = {"#1f77b4", "#ff7f0e"};

    std::ostringstream s;
    s.precision(6);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    s << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
    s << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << ls.width
      << "\" height=\"" << ls.height << "\" fill=\"none\" stroke=\"black\"/>\n";
    s << "<rect x=\"" << offset << "\" y=\"" << kMargin << "\" width=\"" << rs.width
      << "\" height=\"" << rs.height << "\" fill=\"none\" stroke=\"black\"/>\n";

    const Matrix& sp = pair.source.keypoints.points;
    const Matrix& tp = pair.target.keypoints.points;
    s << "<g id=\"matches\" stroke-width=\"1\">\n";
    for (std::size_t k = 0; k < matches.matches.size(); ++k) {
        const auto& m = matches.matches[k];
        const bool ok = k < correct.size() && correct[k];
        s << "<line x1=\"" << kMargin + sp(m.source, 0) << "\" y1=\"" << kMargin + sp(m.source, 1)
          << "\" x2=\"" << offset + tp(m.target, 0) << "\" y2=\"" << kMargin + tp(m.target, 1)
          << "\" stroke=\"" << (ok ? "#2ca02c" : "#d62728") << "\"/>\n";
    }
    s << "</g>\n";

    auto points = [&](const Matrix& pts, const Matrix& hard, double dx, const char* id) {
        s << "<g id=\"" << id << "\">\n";
        for (std::size_t i = 0; i < pts.rows(); ++i) {
            const char* color = "#888888";
            if (hard.cols() == pts.rows()) {
                for (std::size_t g = 0; g < hard.rows() && g < 2; ++g) {
                    if (hard(g, i) == 1.0) color = kGroupColor[g];
                }
            }
            s << "<circle cx=\"" << dx + pts(i, 0) << "\" cy=\"" << kMargin + pts(i, 1)
              << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        s << "</g>\n";
    };
    points(sp, hard_source, kMargin, "source");
    points(tp, hard_target, offset, "target");
    s << "</svg>\n";
    return s.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Scene-aware feature matcher: synthesis, training, evaluation", "sam"};
    app.require_subcommand(1);
    Flags f;

    auto* synth = app.add_subcommand("synth", "Write synthetic homography pairs and a manifest");
    add_common(*synth, f);
    add_synth_flags(*synth, f);
    add_model_flags(*synth, f);
    synth->add_option("--out", f.out, "Output directory");

    auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints and metrics");
    add_common(*train_cmd, f);
    add_synth_flags(*train_cmd, f);
    add_model_flags(*train_cmd, f);
    add_train_flags(*train_cmd, f);
    train_cmd->add_option("--data", f.data, "Pair directory (synthesized in memory if absent)");
    train_cmd->add_option("--out", f.out, "Output directory");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; writes a JSON report");
    add_common(*eval, f);
    eval->add_option("--model", f.model, "Checkpoint path");
    eval->add_option("--data", f.data, "Pair directory or file");
    eval->add_option("--out", f.out, "Report path (stdout if absent)");

    auto* match = app.add_subcommand("match", "Match one pair; writes a match JSON");
    add_common(*match, f);
    match->add_option("--model", f.model, "Checkpoint path");
    match->add_option("--data", f.data, "Pair file");
    match->add_option("--out", f.out, "Match file path (stdout if absent)");

    auto* viz = app.add_subcommand("viz", "Draw matches and group assignments as SVG");
    add_common(*viz, f);
    viz->add_option("--model", f.model, "Checkpoint path");
    viz->add_option("--data", f.data, "Pair file");
    viz->add_option("--matches", f.matches, "Match file to draw instead of predicting");
    viz->add_option("--out", f.out, "SVG path (stdout if absent)");

    auto* grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    add_common(*grad, f);
    add_model_flags(*grad, f);
    grad->add_option("--keypoints", f.keypoints, "Keypoints per image (default 16)");
    grad->add_option("--lambda", f.lambda, "Grouping loss weight");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        const RunConfig rc = resolve(f);
        if (synth->parsed()) return cmd_synth(rc, out);
        if (train_cmd->parsed()) return cmd_train(rc, out);
        if (eval->parsed()) return cmd_eval(rc, out);
        if (match->parsed()) return cmd_match(rc, out);
        if (viz->parsed()) return cmd_viz(rc, out);
        if (grad->parsed()) return cmd_gradcheck(rc, f, out);
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace sam::cli
