#include "sam/scoring.hpp"

#include <cmath>

#include "json.hpp"
#include "sam/errors.hpp"
#include "sam/kernels.hpp"

namespace sam {

namespace {

void require_same_width(const Var& a, const Var& b, const char* what) {
    if (a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": widths " + a.value().shape_string() + " and " +
                             b.value().shape_string());
    }
}

std::pair<std::vector<double>, std::vector<double>> dustbin_marginals(std::size_t m,
                                                                      std::size_t n) {
    std::vector<double> rows(m + 1, 0.0), cols(n + 1, 0.0);
    rows[m] = std::log(static_cast<double>(n));
    cols[n] = std::log(static_cast<double>(m));
    return {rows, cols};
}

}  // namespace

Var point_score(const Var& source_tokens, const Var& target_tokens) {
    require_same_width(source_tokens, target_tokens, "point_score");
    return ad::matmul_nt(source_tokens, target_tokens);
}

Var group_score(const Var& source_groups, const Var& target_groups) {
    require_same_width(source_groups, target_groups, "group_score");
    return ad::matmul_nt(source_groups, target_groups);
}

Var expand_group_score(const Var& group_scores, const Var& source_weights,
                       const Var& target_weights) {
    if (source_weights.cols() != group_scores.rows() ||
        target_weights.cols() != group_scores.cols()) {
        throw DimensionError("expand_group_score: " + source_weights.value().shape_string() + " x " +
                             group_scores.value().shape_string() + " x " +
                             target_weights.value().shape_string() + "^T");
    }
    return ad::matmul_nt(ad::matmul(source_weights, group_scores), target_weights);
}

Var combine_scores(const Var& point, const Var& expanded, const Var& alpha, const Var& beta) {
    return ad::add(ad::scale_by(point, alpha), ad::scale_by(expanded, beta));
}

Var augment_with_dustbin(const Var& scores, const Var& dustbin) {
    const std::size_t m = scores.rows(), n = scores.cols();
    const std::vector<Var> top{scores, ad::broadcast(dustbin, m, 1)};
    const std::vector<Var> rows{ad::concat_cols(top), ad::broadcast(dustbin, 1, n + 1)};
    return ad::concat_rows(rows);
}

Var sinkhorn_log(const Var& scores, const Var& dustbin, std::size_t iterations) {
    auto [rows, cols] = dustbin_marginals(scores.rows(), scores.cols());
    return ad::log_sinkhorn(augment_with_dustbin(scores, dustbin), std::move(rows),
                            std::move(cols), iterations);
}

PartialAssignment sinkhorn(const Matrix& scores, double dustbin, std::size_t iterations) {
    const std::size_t m = scores.rows(), n = scores.cols();
    Matrix z(m + 1, n + 1, dustbin);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) z(i, j) = scores(i, j);
    }
    const auto [rows, cols] = dustbin_marginals(m, n);
    PartialAssignment out;
    out.p = kernels::log_sinkhorn(z, rows, cols, iterations);
    for (double& v : out.p.data()) v = std::exp(v);
    out.iterations_used = iterations;
    return out;
}

MatchSet select_matches(const Matrix& p, double theta) {
    if (p.rows() < 1 || p.cols() < 1) throw DimensionError("select_matches: empty matrix");
    const std::size_t m = p.rows() - 1, n = p.cols() - 1;
    std::vector<std::size_t> best_col(m, 0), best_row(n, 0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 1; j < n; ++j) {
            if (p(i, j) > p(i, best_col[i])) best_col[i] = j;
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 1; i < m; ++i) {
            if (p(i, j) > p(best_row[j], j)) best_row[j] = i;
        }
    }
    MatchSet out;
    std::vector<bool> target_used(n, false);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = n > 0 ? best_col[i] : 0;
        if (n > 0 && best_row[j] == i && p(i, j) >= theta) {
            out.matches.push_back({i, j, p(i, j)});
            target_used[j] = true;
        } else {
            out.unmatched_source.push_back(i);
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (!target_used[j]) out.unmatched_target.push_back(j);
    }
    return out;
}

std::string match_set_to_json(const MatchSet& m) {
    nlohmann::ordered_json j;
    auto& matches = j["matches"] = nlohmann::ordered_json::array();
    for (const auto& x : m.matches) matches.push_back({x.source, x.target, x.confidence});
    j["unmatched_source"] = m.unmatched_source;
    j["unmatched_target"] = m.unmatched_target;
    return j.dump(2) + "\n";
}

MatchSet match_set_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        MatchSet m;
        for (const auto& x : j.at("matches")) {
            if (x.size() != 3) throw InputError("match entry must be [i, j, confidence]");
            m.matches.push_back(
                {x.at(0).get<std::size_t>(), x.at(1).get<std::size_t>(), x.at(2).get<double>()});
        }
        m.unmatched_source = j.at("unmatched_source").get<std::vector<std::size_t>>();
        m.unmatched_target = j.at("unmatched_target").get<std::vector<std::size_t>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed match file: ") + e.what());
    }
}

}  // namespace sam
