#include "sam/tape.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "sam/errors.hpp"
#include "sam/kernels.hpp"
#include "sam/params.hpp"

namespace sam {

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) {
    nodes_.push_back({std::move(value), Matrix{}, true, false, nullptr});
    return {this, nodes_.size() - 1};
}

Var Tape::param(const ParamStore& store, std::size_t slot) {
    if (slot_to_node_.size() < store.size()) {
        slot_to_node_.resize(store.size(), std::numeric_limits<std::size_t>::max());
    }
    if (slot_to_node_[slot] != std::numeric_limits<std::size_t>::max()) {
        return {this, slot_to_node_[slot]};
    }
    const auto& s = store[slot];
    const bool trainable = s.trainable && tracking_;
    Var v = trainable ? variable(s.value) : constant(s.value);
    slot_to_node_[slot] = v.id();
    if (trainable) param_leaves_.emplace_back(slot, v.id());
    return v;
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back({std::move(value), Matrix{}, requires_grad, false,
                      requires_grad ? std::move(backward) : Backward{}});
    return {this, nodes_.size() - 1};
}

Matrix Tape::grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    if (n.has_grad) return n.grad;
    return Matrix(n.value.rows(), n.value.cols());
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        if (!g.same_shape(n.value)) {
            throw DimensionError("gradient " + g.shape_string() + " for node of shape " +
                                 n.value.shape_string());
        }
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad.add_scaled(g);
    }
}

void Tape::backward(const Var& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
        throw ContractError("backward requires a scalar loss, got " + loss.value().shape_string());
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Matrix{};
    }
    accumulate(loss.id(), Matrix::scalar(1.0));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.has_grad || !n.backward) continue;
        n.backward(*this, n.grad);
    }
}

std::vector<std::pair<std::size_t, Matrix>> Tape::param_grads() const {
    std::vector<std::pair<std::size_t, Matrix>> out;
    out.reserve(param_leaves_.size());
    for (const auto& [slot, node] : param_leaves_) {
        const Node& n = nodes_[node];
        out.emplace_back(slot, n.has_grad ? n.grad : Matrix(n.value.rows(), n.value.cols()));
    }
    return out;
}

void backward(const Var& loss, ParamStore& store) {
    loss.tape().backward(loss);
    store.accumulate(loss.tape().param_grads());
}

namespace ad {

namespace {

Tape& same_tape(const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
    return a.tape();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                         b.shape_string());
}

Matrix map(const Matrix& m, auto&& f) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = f(m[i]);
    return out;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(kernels::matmul(a.value(), b.value()), a.requires_grad() || b.requires_grad(),
                    [ia, ib](Tape& tp, const Matrix& g) {
                        if (tp.requires_grad(ia))
                            tp.accumulate(ia, kernels::matmul_nt(g, tp.value(ib)));
                        if (tp.requires_grad(ib))
                            tp.accumulate(ib, kernels::matmul_tn(tp.value(ia), g));
                    });
}

Var matmul_nt(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(kernels::matmul_nt(a.value(), b.value()),
                    a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, const Matrix& g) {
                        if (tp.requires_grad(ia))
                            tp.accumulate(ia, kernels::matmul(g, tp.value(ib)));
                        if (tp.requires_grad(ib))
                            tp.accumulate(ib, kernels::matmul_tn(g, tp.value(ia)));
                    });
}

Var transpose(const Var& a) {
    const std::size_t ia = a.id();
    return a.tape().record(a.value().transposed(), a.requires_grad(),
                           [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.transposed()); });
}

Var add(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    if (!a.value().same_shape(b.value())) shape_error("add", a.value(), b.value());
    Matrix out = a.value();
    out.add_scaled(b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                    [ia, ib](Tape& tp, const Matrix& g) {
                        tp.accumulate(ia, g);
                        tp.accumulate(ib, g);
                    });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    if (!a.value().same_shape(b.value())) shape_error("sub", a.value(), b.value());
    Matrix out = a.value();
    out.add_scaled(b.value(), -1.0);
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                    [ia, ib](Tape& tp, const Matrix& g) {
                        tp.accumulate(ia, g);
                        if (tp.requires_grad(ib)) tp.accumulate(ib, map(g, [](double x) { return -x; }));
                    });
}

Var hadamard(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (!av.same_shape(bv)) shape_error("hadamard", av, bv);
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                    [ia, ib](Tape& tp, const Matrix& g) {
                        const Matrix& x = tp.value(ia);
                        const Matrix& y = tp.value(ib);
                        Matrix gx(g.rows(), g.cols()), gy(g.rows(), g.cols());
                        for (std::size_t i = 0; i < g.size(); ++i) {
                            gx[i] = g[i] * y[i];
                            gy[i] = g[i] * x[i];
                        }
                        tp.accumulate(ia, gx);
                        tp.accumulate(ib, gy);
                    });
}

Var scale(const Var& a, double factor) {
    const std::size_t ia = a.id();
    return a.tape().record(map(a.value(), [factor](double x) { return factor * x; }),
                           a.requires_grad(), [ia, factor](Tape& tp, const Matrix& g) {
                               tp.accumulate(ia, map(g, [factor](double x) { return factor * x; }));
                           });
}

Var scale_by(const Var& a, const Var& s) {
    Tape& t = same_tape(a, s);
    if (s.rows() != 1 || s.cols() != 1) shape_error("scale_by", a.value(), s.value());
    const double k = s.value()[0];
    const std::size_t ia = a.id(), is = s.id();
    return t.record(map(a.value(), [k](double x) { return k * x; }),
                    a.requires_grad() || s.requires_grad(), [ia, is](Tape& tp, const Matrix& g) {
                        const double kk = tp.value(is)[0];
                        if (tp.requires_grad(ia))
                            tp.accumulate(ia, map(g, [kk](double x) { return kk * x; }));
                        if (tp.requires_grad(is)) {
                            const Matrix& x = tp.value(ia);
                            double acc = 0.0;
                            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
                            tp.accumulate(is, Matrix::scalar(acc));
                        }
                    });
}

Var add_row(const Var& a, const Var& row) {
    Tape& t = same_tape(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.value(), row.value());
    Matrix out = a.value();
    const Matrix& r = row.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r[j];
    const std::size_t ia = a.id(), ir = row.id();
    return t.record(std::move(out), a.requires_grad() || row.requires_grad(),
                    [ia, ir](Tape& tp, const Matrix& g) {
                        tp.accumulate(ia, g);
                        if (tp.requires_grad(ir)) {
                            Matrix gr(1, g.cols());
                            for (std::size_t i = 0; i < g.rows(); ++i)
                                for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
                            tp.accumulate(ir, gr);
                        }
                    });
}

Var scale_rows(const Var& a, const Var& column) {
    Tape& t = same_tape(a, column);
    if (column.cols() != 1 || column.rows() != a.rows())
        shape_error("scale_rows", a.value(), column.value());
    Matrix out = a.value();
    const Matrix& c = column.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (double& v : out.row(i)) v *= c[i];
    const std::size_t ia = a.id(), ic = column.id();
    return t.record(std::move(out), a.requires_grad() || column.requires_grad(),
                    [ia, ic](Tape& tp, const Matrix& g) {
                        const Matrix& x = tp.value(ia);
                        const Matrix& cc = tp.value(ic);
                        if (tp.requires_grad(ia)) {
                            Matrix gx = g;
                            for (std::size_t i = 0; i < gx.rows(); ++i)
                                for (double& v : gx.row(i)) v *= cc[i];
                            tp.accumulate(ia, gx);
                        }
                        if (tp.requires_grad(ic)) {
                            Matrix gc(cc.rows(), 1);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                                for (std::size_t j = 0; j < g.cols(); ++j) gc[i] += g(i, j) * x(i, j);
                            tp.accumulate(ic, gc);
                        }
                    });
}

Var broadcast(const Var& s, std::size_t rows, std::size_t cols) {
    if (s.rows() != 1 || s.cols() != 1) {
        throw DimensionError("broadcast: expected 1x1, got " + s.value().shape_string());
    }
    const std::size_t is = s.id();
    return s.tape().record(Matrix(rows, cols, s.value()[0]), s.requires_grad(),
                           [is](Tape& tp, const Matrix& g) {
                               tp.accumulate(is, Matrix::scalar(g.sum()));
                           });
}

Var exp(const Var& a) {
    const std::size_t ia = a.id();
    Matrix out = map(a.value(), [](double x) { return std::exp(x); });
    const std::size_t io = a.tape().size();
    return a.tape().record(std::move(out), a.requires_grad(), [ia, io](Tape& tp, const Matrix& g) {
        const Matrix& y = tp.value(io);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * y[i];
        tp.accumulate(ia, gx);
    });
}

Var log(const Var& a, double floor) {
    const std::size_t ia = a.id();
    Matrix out = map(a.value(), [floor](double x) { return std::log(x > floor ? x : floor); });
    return a.tape().record(std::move(out), a.requires_grad(),
                           [ia, floor](Tape& tp, const Matrix& g) {
                               const Matrix& x = tp.value(ia);
                               Matrix gx(g.rows(), g.cols());
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   gx[i] = x[i] > floor ? g[i] / x[i] : 0.0;
                               tp.accumulate(ia, gx);
                           });
}

Var gelu(const Var& a) {
    const std::size_t ia = a.id();
    Matrix out = map(a.value(), [](double x) {
        return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    });
    return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape& tp, const Matrix& g) {
        const Matrix& x = tp.value(ia);
        Matrix gx(g.rows(), g.cols());
        constexpr double kInvSqrt2Pi = 0.3989422804014327;  // 1/sqrt(2*pi)
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
            gx[i] = g[i] * (cdf + x[i] * pdf);
        }
        tp.accumulate(ia, gx);
    });
}

Var sigmoid(const Var& a) {
    const std::size_t ia = a.id();
    Matrix out = map(a.value(), [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    const std::size_t io = a.tape().size();
    return a.tape().record(std::move(out), a.requires_grad(), [ia, io](Tape& tp, const Matrix& g) {
        const Matrix& y = tp.value(io);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * y[i] * (1.0 - y[i]);
        tp.accumulate(ia, gx);
    });
}

Var softmax_rows(const Var& a, double scale) {
    const std::size_t ia = a.id();
    const std::size_t io = a.tape().size();
    return a.tape().record(kernels::softmax_rows(a.value(), scale), a.requires_grad(),
                           [ia, io, scale](Tape& tp, const Matrix& g) {
                               const Matrix& y = tp.value(io);
                               Matrix gx(g.rows(), g.cols());
                               for (std::size_t i = 0; i < g.rows(); ++i) {
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
                                   for (std::size_t j = 0; j < g.cols(); ++j)
                                       gx(i, j) = scale * y(i, j) * (g(i, j) - dot);
                               }
                               tp.accumulate(ia, gx);
                           });
}

Var sum(const Var& a) {
    const std::size_t ia = a.id();
    const std::size_t r = a.rows(), c = a.cols();
    return a.tape().record(Matrix::scalar(a.value().sum()), a.requires_grad(),
                           [ia, r, c](Tape& tp, const Matrix& g) {
                               tp.accumulate(ia, Matrix(r, c, g[0]));
                           });
}

Var mean(const Var& a) {
    if (a.value().empty()) throw DimensionError("mean of an empty matrix");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no parts");
    Tape& t = parts[0].tape();
    const std::size_t cols = parts[0].cols();
    std::size_t rows = 0;
    bool needs = false;
    std::vector<std::size_t> ids, offsets;
    for (const Var& p : parts) {
        same_tape(parts[0], p);
        if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
        offsets.push_back(rows);
        ids.push_back(p.id());
        rows += p.rows();
        needs = needs || p.requires_grad();
    }
    Matrix out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Matrix& v = parts[k].value();
        std::copy(v.data().begin(), v.data().end(), out.data().begin() + offsets[k] * cols);
    }
    return t.record(std::move(out), needs, [ids, offsets, cols](Tape& tp, const Matrix& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tp.requires_grad(ids[k])) continue;
            const std::size_t r = tp.value(ids[k]).rows();
            Matrix part(r, cols);
            std::copy_n(g.data().begin() + offsets[k] * cols, r * cols, part.data().begin());
            tp.accumulate(ids[k], part);
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    Tape& t = parts[0].tape();
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    bool needs = false;
    std::vector<std::size_t> ids, offsets;
    for (const Var& p : parts) {
        same_tape(parts[0], p);
        if (p.rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
        offsets.push_back(cols);
        ids.push_back(p.id());
        cols += p.cols();
        needs = needs || p.requires_grad();
    }
    Matrix out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Matrix& v = parts[k].value();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) out(i, offsets[k] + j) = v(i, j);
    }
    return t.record(std::move(out), needs, [ids, offsets, rows](Tape& tp, const Matrix& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tp.requires_grad(ids[k])) continue;
            const std::size_t c = tp.value(ids[k]).cols();
            Matrix part(rows, c);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) part(i, j) = g(i, offsets[k] + j);
            tp.accumulate(ids[k], part);
        }
    });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.rows()) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of " + a.value().shape_string());
    }
    const std::size_t cols = a.cols();
    Matrix out(count, cols);
    std::copy_n(a.value().data().begin() + begin * cols, count * cols, out.data().begin());
    const std::size_t ia = a.id(), r = a.rows();
    return a.tape().record(std::move(out), a.requires_grad(),
                           [ia, begin, count, cols, r](Tape& tp, const Matrix& g) {
                               Matrix full(r, cols);
                               std::copy_n(g.data().begin(), count * cols,
                                           full.data().begin() + begin * cols);
                               tp.accumulate(ia, full);
                           });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols()) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of " + a.value().shape_string());
    }
    const Matrix& v = a.value();
    Matrix out(v.rows(), count);
    for (std::size_t i = 0; i < v.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = v(i, begin + j);
    const std::size_t ia = a.id(), c = a.cols();
    return a.tape().record(std::move(out), a.requires_grad(),
                           [ia, begin, count, c](Tape& tp, const Matrix& g) {
                               Matrix full(g.rows(), c);
                               for (std::size_t i = 0; i < g.rows(); ++i)
                                   for (std::size_t j = 0; j < count; ++j) full(i, begin + j) = g(i, j);
                               tp.accumulate(ia, full);
                           });
}

Var gather_rows(const Var& a, std::span<const std::size_t> indices) {
    const Matrix& v = a.value();
    Matrix out(indices.size(), v.cols());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= v.rows()) {
            throw DimensionError("gather_rows: index " + std::to_string(indices[k]) +
                                 " out of " + v.shape_string());
        }
        std::copy_n(v.row(indices[k]).begin(), v.cols(), out.row(k).begin());
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    const std::size_t ia = a.id(), r = v.rows();
    return a.tape().record(std::move(out), a.requires_grad(),
                           [ia, idx = std::move(idx), r](Tape& tp, const Matrix& g) {
                               Matrix full(r, g.cols());
                               for (std::size_t k = 0; k < idx.size(); ++k)
                                   for (std::size_t j = 0; j < g.cols(); ++j) full(idx[k], j) += g(k, j);
                               tp.accumulate(ia, full);
                           });
}

Var gather_entries(const Var& a, std::span<const std::pair<std::size_t, std::size_t>> entries) {
    const Matrix& v = a.value();
    Matrix out(entries.size(), 1);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto [i, j] = entries[k];
        if (i >= v.rows() || j >= v.cols()) {
            throw DimensionError("gather_entries: (" + std::to_string(i) + ", " +
                                 std::to_string(j) + ") out of " + v.shape_string());
        }
        out[k] = v(i, j);
    }
    std::vector<std::pair<std::size_t, std::size_t>> e(entries.begin(), entries.end());
    const std::size_t ia = a.id(), r = v.rows(), c = v.cols();
    return a.tape().record(std::move(out), a.requires_grad(),
                           [ia, e = std::move(e), r, c](Tape& tp, const Matrix& g) {
                               Matrix full(r, c);
                               for (std::size_t k = 0; k < e.size(); ++k)
                                   full(e[k].first, e[k].second) += g[k];
                               tp.accumulate(ia, full);
                           });
}

Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

Var log_sinkhorn(const Var& z, std::vector<double> log_row_marginal,
                 std::vector<double> log_col_marginal, std::size_t iterations) {
    auto trace = std::make_shared<kernels::SinkhornTrace>();
    Matrix out = kernels::log_sinkhorn(z.value(), log_row_marginal, log_col_marginal, iterations,
                                       z.requires_grad() ? trace.get() : nullptr);
    const std::size_t iz = z.id();
    return z.tape().record(
        std::move(out), z.requires_grad(),
        [iz, trace, la = std::move(log_row_marginal), lb = std::move(log_col_marginal)](
            Tape& tp, const Matrix& g) {
            tp.accumulate(iz, kernels::log_sinkhorn_backward(tp.value(iz), *trace, la, lb, g));
        });
}

}  // namespace ad

}  // namespace sam
