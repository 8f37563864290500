#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace sparsetx {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// The 64-bit seed is the key; the 128-bit counter is split into a 64-bit
/// block index and a 64-bit stream id. Distinct streams under the same seed
/// are statistically independent, which is how every parallel task (chain,
/// tree, sweep cell) gets its own reproducible sequence regardless of
/// scheduling order.
///
/// All distributions are implemented here rather than taken from <random>
/// because the standard distributions are implementation-defined; outputs
/// must be identical across standard libraries for runs to be replayable.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept;

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be positive.
    std::size_t index(std::size_t n) noexcept;
    double normal() noexcept;
    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
    double exponential() noexcept;

    /// A generator on an independent stream keyed by (this stream, tag).
    Rng derive(std::uint64_t tag) const noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

private:
    void refill() noexcept;

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffered_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

/// splitmix64 finalizer; used to fold tags into stream ids.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Order-sensitive combination of tags into a single stream id.
std::uint64_t stream_id(std::initializer_list<std::uint64_t> tags) noexcept;

/// FNV-1a over a string, for turning names into tags.
std::uint64_t tag_of(const char* text) noexcept;

}  // namespace sparsetx
