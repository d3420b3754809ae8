#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sam/layers.hpp"

namespace sam {

/// S^f = f_s f_t^T.
Var point_score(const Var& source_tokens, const Var& target_tokens);
/// S^g = g_s g_t^T.
Var group_score(const Var& source_groups, const Var& target_groups);
/// A_s S_g A_t^T with A_s (M x k) and A_t (N x k) row-stochastic.
Var expand_group_score(const Var& group_scores, const Var& source_weights,
                       const Var& target_weights);
/// alpha S_f + beta S_g_expanded for 1x1 alpha, beta.
Var combine_scores(const Var& point, const Var& expanded, const Var& alpha, const Var& beta);

/// Appends a dustbin row and column filled with the 1x1 `dustbin` value.
Var augment_with_dustbin(const Var& scores, const Var& dustbin);

/// log P of the dustbin-augmented Sinkhorn transport with marginals (1..1, N) over
/// rows and (1..1, M) over columns. Throws NumericalError on non-finite iterates.
Var sinkhorn_log(const Var& scores, const Var& dustbin, std::size_t iterations);

/// The (M+1) x (N+1) transport matrix P.
struct PartialAssignment {
    Matrix p;
    std::size_t iterations_used = 0;
};

/// Plain-value Sinkhorn (no gradient), for inference and tests.
PartialAssignment sinkhorn(const Matrix& scores, double dustbin, std::size_t iterations = 100);

struct Match {
    std::size_t source = 0;
    std::size_t target = 0;
    double confidence = 0.0;
    friend bool operator==(const Match&, const Match&) = default;
};

struct MatchSet {
    std::vector<Match> matches;  // ascending source index
    std::vector<std::size_t> unmatched_source;
    std::vector<std::size_t> unmatched_target;
};

/// Keeps (i, j) with P_ij >= theta that are mutual argmaxes over the inner block
/// (ties to the lower index).
MatchSet select_matches(const Matrix& p, double theta = 0.2);

std::string match_set_to_json(const MatchSet& m);
MatchSet match_set_from_json(const std::string& text);

}  // namespace sam
