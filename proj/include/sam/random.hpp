#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace sam {

class Matrix;

/// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3", SC'11), keyed by the 64-bit seed. Output words are consumed
/// in counter order, so identical seed + call sequence yields identical streams on
/// every platform.
class RandomSource {
public:
    using Block = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    explicit RandomSource(std::uint64_t seed = 0) noexcept;

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    std::uint32_t next_u32() noexcept;
    std::uint64_t next_u64() noexcept;

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Uniform clamped to [2^-53, 1 - 2^-53]; never exactly 0 or 1.
    double uniform_open() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller (cosine branch only, one draw per call pair).
    double normal() noexcept;
    /// Unbiased integer in [0, n); n must be > 0.
    std::size_t below(std::size_t n) noexcept;

    /// One Philox4x32-10 block.
    static Block philox(Block counter, Key key) noexcept;

private:
    std::uint64_t seed_;
    Key key_;
    std::uint64_t counter_ = 0;
    Block buffer_{};
    unsigned used_ = 4;
};

/// Independent sub-stream seed for (base, stream) via the SplitMix64 finalizer.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

/// i.i.d. Gumbel(0,1): -log(-log(U)), U from uniform_open.
Matrix gumbel_sample(RandomSource& rng, std::size_t rows, std::size_t cols);

/// Inverse Gumbel transform for a given uniform value (exposed for testing).
double gumbel_from_uniform(double u) noexcept;

}  // namespace sam
