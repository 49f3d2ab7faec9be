#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace rlpipe {

// Self-contained PRNG (xoshiro256** seeded via splitmix64). The standard
// library distributions are not bit-stable across implementations, so all
// randomness in the pipeline goes through this class.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1) with 53 random bits.
    double next_double();

    // Uniform integer in [0, n), unbiased (rejection sampling). n must be > 0.
    uint64_t uniform_below(uint64_t n);

    // Standard normal via Box-Muller; the spare value is cached.
    double next_gaussian();

    std::array<uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<uint64_t, 4>& s);

private:
    std::array<uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

uint64_t splitmix64(uint64_t& state);

// Order-independent per-sample seeds: mixes a base seed with an id string
// and an index so parallel schedules cannot change what gets sampled.
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index = 0);

} // namespace rlpipe
