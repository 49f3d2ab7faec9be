#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlpipe/decode.hpp"
#include "rlpipe/model.hpp"
#include "rlpipe/records.hpp"
#include "rlpipe/trainer.hpp"

namespace rlpipe::cli {

// Effective run configuration. Every field has a default; the config file is
// a sectioned key-value file ([section] / key = value) and unknown keys are
// rejected. The config hash is a digest of the canonicalized effective
// config (sections and keys sorted, values in canonical form) and is stamped
// into every artifact this run produces.
struct RunConfig {
    model::Arch arch;
    model::Precision precision = model::Precision::standard;

    uint64_t master_seed = 42;

    int operands = 2;
    int sft_count = 4096;
    int rl_count = 1024;
    int eval_count = 60;
    int difficulty_min = 1;
    int difficulty_max = 5;

    decode::DecodeConfig decode;

    train::SftConfig sft;
    train::RlConfig rl;
    int k = 8;

    data::FilterParams filters;

    int eval_n = 32;
    std::vector<int> bucket_edges{0, 32, 64, 96, 128, 192, 257};

    int workers = 1;
    std::string out_dir = "runs/desk";

    std::string config_hash;      // filled by load/finalize
    nlohmann::json effective;     // canonical effective config

    // Derived seeds, one stream per phase.
    uint64_t seed_for(const char* tag) const;
};

// Parses the file, applies defaults, validates, computes the hash.
RunConfig load_config(const std::string& path);

// Defaults-only config (used by tests); validates and hashes the same way.
RunConfig default_config();

// Canonical serialization used for hashing (also what `effective` holds).
nlohmann::json effective_json(const RunConfig& cfg);

} // namespace rlpipe::cli
