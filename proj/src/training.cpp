#include "sam/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "sam/errors.hpp"
#include "sam/evaluation.hpp"
#include "sam/pair_io.hpp"

namespace sam {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'M', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
    }
    return v;
}

Var mean_log_entries(const Var& m, const std::vector<std::pair<std::size_t, std::size_t>>& at) {
    return ad::mean(ad::gather_entries(m, at));
}

}  // namespace

Var loss_match(const Var& log_assignment, const GroundTruth& gt) {
    const std::size_t m = log_assignment.rows() - 1, n = log_assignment.cols() - 1;
    std::vector<Var> terms;
    if (!gt.matches.empty()) terms.push_back(mean_log_entries(log_assignment, gt.matches));
    if (!gt.unmatched_source.empty()) {
        std::vector<std::pair<std::size_t, std::size_t>> at;
        for (const std::size_t i : gt.unmatched_source) at.emplace_back(i, n);
        terms.push_back(mean_log_entries(log_assignment, at));
    }
    if (!gt.unmatched_target.empty()) {
        std::vector<std::pair<std::size_t, std::size_t>> at;
        for (const std::size_t j : gt.unmatched_target) at.emplace_back(m, j);
        terms.push_back(mean_log_entries(log_assignment, at));
    }
    if (terms.empty()) return log_assignment.tape().constant(Matrix::scalar(0.0));
    Var sum = terms[0];
    for (std::size_t t = 1; t < terms.size(); ++t) sum = ad::add(sum, terms[t]);
    return ad::scale(sum, -1.0);
}

Var loss_group(const Var& soft_source, const Var& soft_target, const GroundTruth& gt) {
    constexpr double kFloor = 1e-12;
    auto mean_log = [&](const Var& soft, const std::vector<std::pair<std::size_t, std::size_t>>& at) {
        return ad::mean(ad::log(ad::gather_entries(soft, at), kFloor));
    };
    std::vector<Var> terms;
    if (!gt.matches.empty()) {
        std::vector<std::pair<std::size_t, std::size_t>> s, t;
        for (const auto& [i, j] : gt.matches) {
            s.emplace_back(0, i);
            t.emplace_back(0, j);
        }
        terms.push_back(ad::add(mean_log(soft_source, s), mean_log(soft_target, t)));
    }
    if (!gt.unmatched_source.empty()) {
        std::vector<std::pair<std::size_t, std::size_t>> at;
        for (const std::size_t i : gt.unmatched_source) at.emplace_back(1, i);
        terms.push_back(mean_log(soft_source, at));
    }
    if (!gt.unmatched_target.empty()) {
        std::vector<std::pair<std::size_t, std::size_t>> at;
        for (const std::size_t j : gt.unmatched_target) at.emplace_back(1, j);
        terms.push_back(mean_log(soft_target, at));
    }
    if (terms.empty()) return soft_source.tape().constant(Matrix::scalar(0.0));
    Var sum = terms[0];
    for (std::size_t t = 1; t < terms.size(); ++t) sum = ad::add(sum, terms[t]);
    return ad::scale(sum, -1.0);
}

LossTerms total_loss(const Var& log_assignment, const Var& soft_source, const Var& soft_target,
                     const GroundTruth& gt, double lambda) {
    LossTerms l;
    l.match = loss_match(log_assignment, gt);
    l.group = loss_group(soft_source, soft_target, gt);
    l.total = lambda == 0.0 ? l.match : ad::add(l.match, ad::scale(l.group, lambda));
    return l;
}

void AdamW::step(ParamStore& params, double lr) {
    if (!params.has_gradients()) {
        throw ContractError("AdamW::step called without gradients; run backward first");
    }
    if (m_.size() != params.size()) {
        m_.resize(params.size());
        v_.resize(params.size());
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t s = 0; s < params.size(); ++s) {
        ParamSlot& slot = params[s];
        if (!slot.trainable) continue;
        if (m_[s].empty()) {
            m_[s] = Matrix(slot.value.rows(), slot.value.cols());
            v_[s] = Matrix(slot.value.rows(), slot.value.cols());
        }
        for (std::size_t k = 0; k < slot.value.size(); ++k) {
            const double g = slot.grad[k];
            m_[s][k] = options_.beta1 * m_[s][k] + (1.0 - options_.beta1) * g;
            v_[s][k] = options_.beta2 * v_[s][k] + (1.0 - options_.beta2) * g * g;
            const double mhat = m_[s][k] / c1, vhat = v_[s][k] / c2;
            slot.value[k] -= lr * options_.weight_decay * slot.value[k];
            slot.value[k] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
        }
    }
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                   double base_lr) {
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return base_lr;
    const double progress = static_cast<double>(std::min(step, total_steps) - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void TrainConfig::validate() const {
    model.validate();
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (!(group_loss_weight >= 0.0)) throw ConfigError("group_loss_weight must be >= 0");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(model_config_to_json(c.model));
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["base_lr"] = c.base_lr;
    j["warmup_epochs"] = c.warmup_epochs;
    j["group_loss_weight"] = c.group_loss_weight;
    j["seed"] = c.seed;
    j["match_threshold_px"] = c.ground_truth.match_threshold;
    j["reject_margin_px"] = c.ground_truth.reject_margin;
    return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig c) {
    c.model = model_config_from_json(text, c.model);
    try {
        const auto j = nlohmann::json::parse(text);
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) j[key].get_to(field);
        };
        take("epochs", c.epochs);
        take("batch_size", c.batch_size);
        take("base_lr", c.base_lr);
        take("warmup_epochs", c.warmup_epochs);
        take("group_loss_weight", c.group_loss_weight);
        take("seed", c.seed);
        take("jobs", c.jobs);
        take("match_threshold_px", c.ground_truth.match_threshold);
        take("reject_margin_px", c.ground_truth.reject_margin);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string epoch_metrics_to_json(const EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["loss"] = m.loss;
    j["match_loss"] = m.match_loss;
    j["group_loss"] = m.group_loss;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["grouping_accuracy"] = m.grouping_accuracy;
    j["lr"] = m.lr;
    return j.dump();
}

PairStep pair_step(const Model& model, const FeaturePair& pair, const GroundTruth& gt,
                   double lambda, std::uint64_t seed) {
    Tape tape;
    RandomSource rng(seed);
    ReplayLog replay;
    const ForwardContext ctx{tape, model.params(), rng, replay, true};
    const ForwardOutputs out = model.forward(ctx, pair);
    const LossTerms loss = total_loss(out.log_assignment, out.source.soft, out.target.soft, gt, lambda);
    PairStep step;
    step.total = loss.total.value()[0];
    step.match = loss.match.value()[0];
    step.group = loss.group.value()[0];
    step.assignment = out.assignment();
    step.hard_source = out.source.hard.value();
    step.hard_target = out.target.hard.value();
    if (std::isfinite(step.total)) {
        tape.backward(loss.total);
        step.grads = tape.param_grads();
    }
    return step;
}

ModelGradCheck gradcheck_model(const ModelConfig& config, std::uint64_t seed,
                               std::size_t keypoints, double lambda) {
    const auto start = std::chrono::steady_clock::now();
    Model model(config, derive_seed(seed, 0));
    SynthConfig synth;
    synth.num_keypoints = keypoints;
    synth.descriptor_dim = config.descriptor_dim;
    RandomSource data_rng(derive_seed(seed, 1));
    const FeaturePair pair = generate_pair(data_rng, synth);
    const GroundTruth gt = compute_ground_truth(pair);
    const std::uint64_t noise_seed = derive_seed(seed, 2);
    const ScalarFn fn = [&](Tape& tape, ReplayLog& replay) {
        RandomSource rng(noise_seed);
        const ForwardContext ctx{tape, model.params(), rng, replay, true};
        const ForwardOutputs out = model.forward(ctx, pair);
        return total_loss(out.log_assignment, out.source.soft, out.target.soft, gt, lambda).total;
    };
    ModelGradCheck check;
    check.result = finite_diff_check(fn, model.params());
    check.worst_name = model.params()[check.result.worst_slot].name;
    check.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return check;
}

std::string checkpoint_bytes(const ParamStore& params) {
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const ParamSlot& s : params) {
        manifest.push_back({{"name", s.name},
                            {"rows", s.value.rows()},
                            {"cols", s.value.cols()},
                            {"byte_offset", offset}});
        offset += 8 * s.value.size();
    }
    const std::string text = manifest.dump();
    std::string out(kMagic, sizeof kMagic);
    put_u64(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const ParamSlot& s : params) {
        for (const double v : s.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

void load_checkpoint_bytes(const std::string& bytes, ParamStore& params) {
    if (bytes.size() < 16 || !std::equal(kMagic, kMagic + 8, bytes.begin())) {
        throw IoError("not a checkpoint: missing SAMCKPT1 magic");
    }
    const std::uint64_t length = get_u64(bytes, 8);
    if (length > bytes.size() - 16) throw IoError("checkpoint manifest length exceeds file size");
    const std::size_t payload = 16 + length;
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(16, length));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    if (!manifest.is_array() || manifest.size() != params.size()) {
        throw IoError("checkpoint manifest lists " + std::to_string(manifest.size()) +
                      " tensors, model has " + std::to_string(params.size()));
    }
    std::vector<Matrix> values;
    for (const auto& entry : manifest) {
        std::string name;
        std::size_t rows = 0, cols = 0;
        std::uint64_t offset = 0;
        try {
            name = entry.at("name").get<std::string>();
            rows = entry.at("rows").get<std::size_t>();
            cols = entry.at("cols").get<std::size_t>();
            offset = entry.at("byte_offset").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("corrupt checkpoint manifest entry: ") + e.what());
        }
        const auto slot = params.find(name);
        if (!slot) throw IoError("checkpoint tensor '" + name + "' is not in the model");
        const Matrix& current = params[*slot].value;
        if (current.rows() != rows || current.cols() != cols) {
            throw IoError("checkpoint tensor '" + name + "' is " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", model expects " + current.shape_string());
        }
        const std::uint64_t need = 8ull * rows * cols;
        if (offset > bytes.size() - payload || need > bytes.size() - payload - offset) {
            throw IoError("checkpoint payload truncated at tensor '" + name + "'");
        }
        Matrix m(rows, cols);
        for (std::size_t k = 0; k < m.size(); ++k) {
            m[k] = std::bit_cast<double>(get_u64(bytes, payload + offset + 8 * k));
        }
        values.push_back(std::move(m));
    }
    std::size_t k = 0;
    for (const auto& entry : manifest) {
        params[params.index(entry.at("name").get<std::string>())].value = std::move(values[k++]);
    }
}

std::filesystem::path model_config_path(const std::filesystem::path& checkpoint) {
    return checkpoint.string() + ".config.json";
}

void save_model(const Model& model, const std::filesystem::path& path) {
    write_text_file(path, checkpoint_bytes(model.params()));
    write_text_file(model_config_path(path), model_config_to_json(model.config()));
}

Model load_model(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    std::string config_text;
    try {
        config_text = read_text_file(model_config_path(path));
    } catch (const IoError&) {
        throw IoError("missing model config '" + model_config_path(path).string() + "'");
    }
    Model model(model_config_from_json(config_text), 0);
    try {
        load_checkpoint_bytes(bytes, model.params());
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return model;
}

TrainResult train(const TrainConfig& config, const std::vector<FeaturePair>& pairs,
                  const std::filesystem::path& out_dir) {
    config.validate();
    if (pairs.empty()) throw InputError("train: no pairs");
    TrainResult result{Model(config.model, config.seed), {}, -1.0};
    Model& model = result.model;
    ParamStore& params = model.params();

    const std::size_t n = pairs.size();
    std::vector<GroundTruth> gts(n);
    for (std::size_t i = 0; i < n; ++i) gts[i] = compute_ground_truth(pairs[i], config.ground_truth);

    const bool write = !out_dir.empty();
    std::ofstream metrics_log;
    if (write) {
        std::filesystem::create_directories(out_dir);
        metrics_log.open(out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
        if (!metrics_log) throw IoError("cannot open '" + (out_dir / "metrics.jsonl").string() + "'");
    }

    const std::size_t batch = std::min(config.batch_size, n);
    const std::size_t steps_per_epoch = (n + batch - 1) / batch;
    const std::size_t total_steps = steps_per_epoch * config.epochs;
    const std::size_t warmup_steps = steps_per_epoch * config.warmup_epochs;
    AdamW optimizer;
    std::size_t step = 0;
    std::vector<Matrix> last_good;
    for (const ParamSlot& s : params) last_good.push_back(s.value);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const std::uint64_t shuffle_stream = derive_seed(config.seed, 1);
    const std::uint64_t noise_stream = derive_seed(config.seed, 2);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        RandomSource shuffle(derive_seed(shuffle_stream, epoch));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

        EpochMetrics em;
        em.epoch = epoch;
        for (std::size_t begin = 0; begin < n; begin += batch) {
            const std::size_t count = std::min(batch, n - begin);
            std::vector<PairStep> results(count);
            std::vector<std::exception_ptr> errors(count);
            const std::uint64_t epoch_seed = derive_seed(noise_stream, epoch);
            const auto jobs = static_cast<std::ptrdiff_t>(count);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(config.jobs)
#endif
            for (std::ptrdiff_t b = 0; b < jobs; ++b) {
                const std::size_t idx = order[begin + static_cast<std::size_t>(b)];
                try {
                    results[b] = pair_step(model, pairs[idx], gts[idx], config.group_loss_weight,
                                           derive_seed(epoch_seed, idx));
                } catch (...) {
                    errors[b] = std::current_exception();
                }
            }
            bool finite = true;
            for (std::size_t b = 0; b < count; ++b) {
                if (errors[b]) {
                    try {
                        std::rethrow_exception(errors[b]);
                    } catch (const NumericalError&) {
                        finite = false;
                    }
                } else if (!std::isfinite(results[b].total)) {
                    finite = false;
                }
            }
            if (!finite) {
                std::size_t s = 0;
                for (Matrix& v : last_good) params[s++].value = std::move(v);
                if (write) save_model(model, out_dir / "model.ckpt");
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                                     "; last finite parameters kept");
            }

            params.zero_grad();
            for (std::size_t b = 0; b < count; ++b) {
                const std::size_t idx = order[begin + b];
                const PairStep& r = results[b];
                params.accumulate(r.grads, 1.0 / static_cast<double>(count));
                em.loss += r.total;
                em.match_loss += r.match;
                em.group_loss += r.group;
                const MatchMetrics mm = match_metrics(select_matches(r.assignment, config.model.theta),
                                                      gts[idx], pairs[idx],
                                                      config.ground_truth.match_threshold);
                em.precision += mm.precision;
                em.recall += mm.recall;
                em.grouping_accuracy += grouping_accuracy(r.hard_source, r.hard_target, gts[idx]);
            }
            for (std::size_t s = 0; s < params.size(); ++s) last_good[s] = params[s].value;
            em.lr = lr_schedule(++step, total_steps, warmup_steps, config.base_lr);
            optimizer.step(params, em.lr);
        }
        const double dn = static_cast<double>(n);
        em.loss /= dn;
        em.match_loss /= dn;
        em.group_loss /= dn;
        em.precision /= dn;
        em.recall /= dn;
        em.grouping_accuracy /= dn;
        em.f1 = f1_score(em.precision, em.recall);
        result.log.push_back(em);
        if (write) {
            metrics_log << epoch_metrics_to_json(em) << '\n';
            metrics_log.flush();
        }
        if (em.f1 > result.best_f1) {
            result.best_f1 = em.f1;
            if (write) save_model(model, out_dir / "best.ckpt");
        }
    }
    if (write) save_model(model, out_dir / "model.ckpt");
    return result;
}

}  // namespace sam
