#include "sam/random.hpp"

#include <cmath>
#include <numbers>

#include "sam/matrix.hpp"

namespace sam {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
constexpr double kTwoPow53 = 9007199254740992.0;
constexpr double kEps53 = 1.0 / kTwoPow53;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline RandomSource::Block philox_round(const RandomSource::Block& c, const RandomSource::Key& k) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace

RandomSource::RandomSource(std::uint64_t seed) noexcept
    : seed_(seed),
      key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

RandomSource::Block RandomSource::philox(Block counter, Key key) noexcept {
    counter = philox_round(counter, key);
    for (int r = 1; r < 10; ++r) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
        counter = philox_round(counter, key);
    }
    return counter;
}

std::uint32_t RandomSource::next_u32() noexcept {
    if (used_ == 4) {
        buffer_ = philox({static_cast<std::uint32_t>(counter_),
                          static_cast<std::uint32_t>(counter_ >> 32), 0u, 0u},
                         key_);
        ++counter_;
        used_ = 0;
    }
    return buffer_[used_++];
}

std::uint64_t RandomSource::next_u64() noexcept {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    return (hi << 32) | lo;
}

double RandomSource::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * kEps53;
}

double RandomSource::uniform_open() noexcept {
    const double u = uniform();
    if (u < kEps53) return kEps53;
    if (u > 1.0 - kEps53) return 1.0 - kEps53;
    return u;
}

double RandomSource::normal() noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RandomSource::below(std::size_t n) noexcept {
    // Reject the low 2^64 mod n values so every residue is equally likely.
    const std::uint64_t bound = n;
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return static_cast<std::size_t>(r % bound);
    }
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double gumbel_from_uniform(double u) noexcept { return -std::log(-std::log(u)); }

Matrix gumbel_sample(RandomSource& rng, std::size_t rows, std::size_t cols) {
    Matrix g(rows, cols);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = gumbel_from_uniform(rng.uniform_open());
    return g;
}

}  // namespace sam
