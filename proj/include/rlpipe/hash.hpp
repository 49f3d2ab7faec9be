#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace rlpipe {

// FNV-1a, 64-bit. Used for artifact ids and provenance digests, where we
// need a stable fingerprint rather than cryptographic strength.
uint64_t fnv1a64(std::string_view data);
uint64_t fnv1a64(std::span<const uint8_t> data);

std::string to_hex(uint64_t value);

// Digest of a whole file's bytes; throws a config error if unreadable.
std::string file_digest(const std::string& path);

} // namespace rlpipe
