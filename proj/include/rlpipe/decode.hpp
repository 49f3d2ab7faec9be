#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "rlpipe/model.hpp"
#include "rlpipe/tokens.hpp"

namespace rlpipe::decode {

// Sampling configuration. Defaults follow the standard inference setup:
// temperature 0.6, top_k 40 (clamped to the vocabulary), top_p 0.95.
struct DecodeConfig {
    double temperature = 0.6;
    int top_k = 40;
    double top_p = 0.95;
    int max_new_tokens = 160;
    uint64_t seed = 0;
    int eos_token = vocab::kEos;
};

// Normative transform order: temperature division -> keep the top_k highest
// tokens (ties broken by lower id) -> smallest prefix of the kept tokens, in
// descending probability order, whose raw cumulative mass reaches top_p (the
// crossing token is included; if the kept mass never reaches top_p the whole
// kept set stays) -> renormalize. Output sums to 1 within 1e-9.
std::vector<double> transform_distribution(std::span<const double> logits,
                                           const DecodeConfig& cfg);

struct SampledAnswer {
    TokenSequence answer;   // answer tokens only, including eos when emitted
    bool truncated = false; // true when max_new_tokens hit without eos
};

// Autoregressive sampling from transform_distribution. Deterministic given
// (model, prompt, cfg.seed); pure over a read-only model snapshot.
SampledAnswer sample_answer(const model::ModelState& m, const TokenSequence& prompt,
                            const DecodeConfig& cfg);

// Per-sample seed: hash of (base seed, question id, sample index) so batch
// inference is reproducible under any parallel schedule.
uint64_t sample_seed(uint64_t base, std::string_view question_id, int sample_index);

// Kill switch used to demonstrate that RL training never decodes. Reading
// RLPIPE_DISABLE_DECODER=1 from the environment has the same effect.
void set_decoding_disabled(bool disabled);
bool decoding_disabled();

} // namespace rlpipe::decode
