#include "sam/gradcheck.hpp"

#include <cmath>
#include <string>

#include "sam/errors.hpp"
#include "sam/params.hpp"

namespace sam {

void ReplayLog::start_recording() {
    values_.clear();
    cursor_ = 0;
    mode_ = Mode::record;
}

void ReplayLog::start_replay() {
    cursor_ = 0;
    mode_ = Mode::replay;
}

Matrix ReplayLog::pass(Matrix live) {
    switch (mode_) {
        case Mode::live:
            return live;
        case Mode::record:
            values_.push_back(live);
            return live;
        case Mode::replay:
            break;
    }
    if (cursor_ >= values_.size()) {
        throw ContractError("replay log exhausted: the function took a different path");
    }
    const Matrix& v = values_[cursor_++];
    if (!v.same_shape(live)) {
        throw ContractError("replay log shape mismatch: recorded " + v.shape_string() + ", got " +
                            live.shape_string());
    }
    return v;
}

namespace {

double evaluate(const ScalarFn& fn, ReplayLog& log) {
    log.start_replay();
    Tape tape(false);
    const double v = fn(tape, log).value()[0];
    if (log.remaining() != 0) {
        throw ContractError("replay log not fully consumed: the function took a different path");
    }
    return v;
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& fn, ParamStore& params, double eps,
                                  std::span<const std::size_t> slots) {
    ReplayLog log;
    log.start_recording();
    params.zero_grad();
    double base = 0.0;
    {
        Tape tape;
        Var loss = fn(tape, log);
        base = loss.value()[0];
        backward(loss, params);
    }
    const double again = evaluate(fn, log);
    if (again != base) {
        throw ContractError("finite_diff_check: function is not deterministic (" +
                            std::to_string(base) + " vs " + std::to_string(again) + ")");
    }

    std::vector<std::size_t> todo(slots.begin(), slots.end());
    if (todo.empty()) {
        for (std::size_t s = 0; s < params.size(); ++s)
            if (params[s].trainable) todo.push_back(s);
    }

    GradCheckResult result;
    for (std::size_t s : todo) {
        auto& slot = params[s];
        for (std::size_t e = 0; e < slot.value.size(); ++e) {
            const double original = slot.value[e];
            slot.value[e] = original + eps;
            const double plus = evaluate(fn, log);
            slot.value[e] = original - eps;
            const double minus = evaluate(fn, log);
            slot.value[e] = original;

            const double numeric = (plus - minus) / (2.0 * eps);
            const double analytic = slot.grad[e];
            const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
            ++result.entries_checked;
            if (err > result.max_rel_error || !std::isfinite(err)) {
                result.max_rel_error = std::isfinite(err) ? err : INFINITY;
                result.worst_slot = s;
                result.worst_entry = e;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    log.go_live();
    return result;
}

}  // namespace sam
