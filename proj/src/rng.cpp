#include "rlpipe/rng.hpp"

#include <cmath>

#include "rlpipe/hash.hpp"

namespace rlpipe {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
} // namespace

void Rng::reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : s_) {
        word = splitmix64(sm);
    }
    has_spare_ = false;
    spare_ = 0.0;
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t Rng::uniform_below(uint64_t n) {
    // Rejection sampling over the smallest covering power of two.
    const uint64_t mask = (n <= 1) ? 0 : (~0ULL >> __builtin_clzll(n - 1));
    if (n <= 1) {
        return 0;
    }
    uint64_t x;
    do {
        x = next_u64() & mask;
    } while (x >= n);
    return x;
}

double Rng::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; 1-u keeps the log argument away from zero.
    const double u = 1.0 - next_double();
    const double v = next_double();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 2.0 * 3.14159265358979323846 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

void Rng::set_state(const std::array<uint64_t, 4>& s) {
    s_ = s;
    has_spare_ = false;
    spare_ = 0.0;
}

uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index) {
    // Full avalanche between absorbed components; xor-only combining is too
    // weak to keep (base, tag, index) streams disjoint.
    uint64_t state = fnv1a64(tag);
    state = splitmix64(state);
    state ^= base;
    state = splitmix64(state);
    state ^= index;
    state = splitmix64(state);
    return state;
}

} // namespace rlpipe
