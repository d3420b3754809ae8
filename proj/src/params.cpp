#include "sam/params.hpp"

#include "sam/errors.hpp"
#include "sam/random.hpp"

namespace sam {

std::size_t ParamStore::add(std::string name, Matrix value, bool trainable) {
    if (by_name_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    const std::size_t idx = slots_.size();
    Matrix grad(value.rows(), value.cols());
    by_name_.emplace(name, idx);
    slots_.push_back({std::move(name), std::move(value), std::move(grad), trainable});
    return idx;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
    const auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
}

std::size_t ParamStore::index(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw ContractError("unknown parameter '" + std::string(name) + "'");
}

void ParamStore::zero_grad() {
    for (auto& s : slots_) s.grad.fill(0.0);
    has_gradients_ = false;
}

void ParamStore::accumulate(const std::vector<std::pair<std::size_t, Matrix>>& grads,
                            double scale) {
    for (const auto& [slot, g] : grads) {
        auto& s = slots_.at(slot);
        if (!s.trainable) continue;
        s.grad.add_scaled(g, scale);
    }
    has_gradients_ = true;
}

std::size_t ParamStore::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : slots_) n += s.value.size();
    return n;
}

Matrix random_normal(RandomSource& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = stddev * rng.normal();
    return m;
}

}  // namespace sam
