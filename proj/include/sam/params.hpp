#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sam/matrix.hpp"

namespace sam {

class RandomSource;

struct ParamSlot {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
};

/// Named learnable tensors with gradient slots. Slot indices are stable.
class ParamStore {
public:
    /// Adds a slot; throws ContractError on a duplicate name.
    std::size_t add(std::string name, Matrix value, bool trainable = true);

    [[nodiscard]] std::size_t size() const noexcept { return slots_.size(); }
    [[nodiscard]] const ParamSlot& operator[](std::size_t i) const { return slots_.at(i); }
    [[nodiscard]] ParamSlot& operator[](std::size_t i) { return slots_.at(i); }
    [[nodiscard]] std::optional<std::size_t> find(std::string_view name) const;
    /// Index of a slot that must exist; throws ContractError otherwise.
    [[nodiscard]] std::size_t index(std::string_view name) const;

    [[nodiscard]] auto begin() const noexcept { return slots_.begin(); }
    [[nodiscard]] auto end() const noexcept { return slots_.end(); }

    void zero_grad();
    /// Adds per-slot gradients (slot index, gradient) into the store; trainable slots only.
    void accumulate(const std::vector<std::pair<std::size_t, Matrix>>& grads, double scale = 1.0);
    /// Whether any gradient has been accumulated since the last zero_grad().
    [[nodiscard]] bool has_gradients() const noexcept { return has_gradients_; }

    [[nodiscard]] std::size_t scalar_count() const noexcept;

private:
    std::vector<ParamSlot> slots_;
    std::unordered_map<std::string, std::size_t> by_name_;
    bool has_gradients_ = false;
};

/// Gaussian matrix with the given standard deviation.
Matrix random_normal(RandomSource& rng, std::size_t rows, std::size_t cols, double stddev);

}  // namespace sam
