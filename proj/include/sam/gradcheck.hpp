#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sam/matrix.hpp"
#include "sam/tape.hpp"

namespace sam {

class ParamStore;

/// Log of non-differentiable values taken during a forward pass (argmax one-hots,
/// stop-gradient copies, selected indices, group counts).
///
/// In `record` mode every value passed through is stored; in `replay` mode the
/// stored values are returned instead, in the same order. Replaying lets a finite
/// difference probe evaluate exactly the function whose derivative the tape
/// computes: discrete choices and stop-gradient terms stay fixed at the base point.
class ReplayLog {
public:
    enum class Mode { live, record, replay };

    [[nodiscard]] Mode mode() const noexcept { return mode_; }
    void start_recording();
    /// Rewinds to the first recorded value and switches to replay.
    void start_replay();
    /// Disables recording and replay; recorded values are kept.
    void go_live() noexcept { mode_ = Mode::live; }

    /// Returns `live` (live/record) or the next recorded value (replay).
    Matrix pass(Matrix live);
    /// Recorded values not yet consumed by the current replay.
    [[nodiscard]] std::size_t remaining() const noexcept { return values_.size() - cursor_; }

private:
    Mode mode_ = Mode::live;
    std::vector<Matrix> values_;
    std::size_t cursor_ = 0;
};

/// Scalar function of the parameters in a store. It must build its graph on the
/// given tape and route discrete/stop-gradient values through the ReplayLog. Any
/// randomness (Gumbel noise) must be regenerated identically on every call.
using ScalarFn = std::function<Var(Tape&, ReplayLog&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_slot = 0;
    std::size_t worst_entry = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t entries_checked = 0;
};

/// Compares tape gradients with central differences over every entry of every
/// trainable slot (or just `slots`, if given). The error per entry is
/// |analytic - numeric| / max(1, |numeric|). Throws ContractError if two base
/// evaluations disagree bit-for-bit. Parameter values are restored; gradients in
/// the store are left holding the analytic gradient.
GradCheckResult finite_diff_check(const ScalarFn& fn, ParamStore& params, double eps = 1e-5,
                                  std::span<const std::size_t> slots = {});

}  // namespace sam
