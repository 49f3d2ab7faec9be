#include "rlpipe/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "rlpipe/errors.hpp"

namespace rlpipe {

namespace {
constexpr uint64_t kOffset = 0xcbf29ce484222325ULL;
constexpr uint64_t kPrime = 0x100000001b3ULL;
} // namespace

uint64_t fnv1a64(std::string_view data) {
    uint64_t h = kOffset;
    for (unsigned char c : data) {
        h ^= c;
        h *= kPrime;
    }
    return h;
}

uint64_t fnv1a64(std::span<const uint8_t> data) {
    uint64_t h = kOffset;
    for (uint8_t c : data) {
        h ^= c;
        h *= kPrime;
    }
    return h;
}

std::string to_hex(uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf);
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        raise(ErrorClass::config, "cannot open file for digest: " + path);
    }
    uint64_t h = kOffset;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= kPrime;
        }
    }
    return to_hex(h);
}

} // namespace rlpipe
