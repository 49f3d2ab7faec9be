#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "rlpipe/model.hpp"
#include "rlpipe/optimizer.hpp"

namespace rlpipe::model {

// Versioned binary container: header (format version, arch, precision mode,
// RNG state, step count, content id) followed by named parameter arrays in
// layout order, then optional optimizer moment arrays. Values are stored as
// 64-bit floats; narrowing back into standard precision is lossless because
// standard-mode values are float-representable by construction.
struct Checkpoint {
    ModelState model;
    std::optional<OptimizerState> opt;
    int64_t step = 0;
    std::array<uint64_t, 4> rng_state{};
    std::string checkpoint_id;  // content digest computed at save time
};

// Atomic (write-then-rename) save.
void save_checkpoint(const std::string& path, const ModelState& model,
                     const OptimizerState* opt, int64_t step,
                     const std::array<uint64_t, 4>& rng_state);

// Loads and verifies version, integrity digest, and (when expected_arch is
// given) arch compatibility.
Checkpoint load_checkpoint(const std::string& path, const Arch* expected_arch = nullptr);

// Reads just the id from the header.
std::string checkpoint_id_of(const std::string& path);

} // namespace rlpipe::model
