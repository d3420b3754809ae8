#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "sam/matrix.hpp"

namespace sam {

class ParamStore;
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
public:
    Var() = default;

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] std::size_t rows() const { return value().rows(); }
    [[nodiscard]] std::size_t cols() const { return value().cols(); }
    [[nodiscard]] bool requires_grad() const;
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] std::size_t id() const noexcept { return id_; }
    [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse order is a
/// valid topological order for backward. Node storage is a deque: values never move.
class Tape {
public:
    /// Receives the gradient of the loss w.r.t. the node's value.
    using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

    Tape() = default;
    /// With tracking off, parameters enter as constants and nothing records a
    /// backward closure: a cheaper forward-only pass with identical values.
    explicit Tape(bool track_gradients) : tracking_(track_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var variable(Matrix value);
    /// Leaf bound to a ParamStore slot; one leaf per slot per tape. Non-trainable
    /// slots become constants.
    Var param(const ParamStore& store, std::size_t slot);
    /// Records a derived node. The backward closure is dropped when no input needs grad.
    Var record(Matrix value, bool requires_grad, Backward backward);

    [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    /// Gradient accumulated by the last backward(); zeros if none reached the node.
    [[nodiscard]] Matrix grad(const Var& v) const;

    /// `grad(id) += g`, allocating on first use. No-op for nodes without grad.
    void accumulate(std::size_t id, const Matrix& g);

    /// Back-propagates d(loss)/d(node) for every node. Throws ContractError if the
    /// loss is not 1x1. Gradients from a previous call are discarded first.
    void backward(const Var& loss);

    /// (slot, gradient) for every trainable parameter leaf reached by backward().
    [[nodiscard]] std::vector<std::pair<std::size_t, Matrix>> param_grads() const;

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
    };

    std::deque<Node> nodes_;
    std::vector<std::pair<std::size_t, std::size_t>> param_leaves_;  // (slot, node)
    std::vector<std::size_t> slot_to_node_;
    bool tracking_ = true;
};

/// Runs tape.backward(loss) and adds every trainable parameter gradient into `store`.
void backward(const Var& loss, ParamStore& store);

/// Differentiable primitives. All take and return Vars on the same tape.
namespace ad {

Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// a * s for a 1x1 Var s.
Var scale_by(const Var& a, const Var& s);
/// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);
/// Multiplies row i of a by column(i, 0); column is Nx1.
Var scale_rows(const Var& a, const Var& column);
/// rows x cols matrix filled with the 1x1 value s.
Var broadcast(const Var& s, std::size_t rows, std::size_t cols);

Var exp(const Var& a);
/// log(max(a, floor)); gradient is zero where the floor is active.
Var log(const Var& a, double floor = 0.0);
/// Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf form).
Var gelu(const Var& a);
Var sigmoid(const Var& a);
/// Row-wise softmax of scale * a, stabilized by row-max subtraction.
Var softmax_rows(const Var& a, double scale = 1.0);

Var sum(const Var& a);
Var mean(const Var& a);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var gather_rows(const Var& a, std::span<const std::size_t> indices);
/// Column vector of a(i, j) for each (i, j).
Var gather_entries(const Var& a, std::span<const std::pair<std::size_t, std::size_t>> entries);

/// Same value, no gradient flows to the input.
Var stop_gradient(const Var& a);

/// log P of the log-domain Sinkhorn transport of z (see kernels::log_sinkhorn);
/// differentiable through every iteration.
Var log_sinkhorn(const Var& z, std::vector<double> log_row_marginal,
                 std::vector<double> log_col_marginal, std::size_t iterations);

}  // namespace ad

}  // namespace sam
