#pragma once

#include <span>
#include <vector>

#include "rlpipe/model.hpp"
#include "rlpipe/pack.hpp"
#include "rlpipe/records.hpp"

namespace rlpipe::train {

// Geometric mean of token-level probabilities, computed in log space:
// exp(mean of log p). Stays in (0, 1] and never underflows regardless of
// answer length.
double policy_value_from_logprobs(std::span<const double> token_logprobs);

// Policy value of `answer` given `prompt` under the model. The answer's
// terminating eos, when present, is part of the scored tokens.
double policy_value(const model::ModelState& m, const TokenSequence& prompt,
                    const TokenSequence& answer);

// Batch-mean losses over (reward, policy value) pairs. rewards are +-1.
//   rl:      -(1/B) sum_i R_i * pi_i                      in [-1, 1]
//   rl_norm:  (1/B) sum_i [(R_i+1)/2 (1-pi_i)
//                          + (1-(R_i+1)/2) pi_i]          in [0, 1]
// Both share the same gradient for R in {+1,-1}.
double rl_loss_value(std::span<const int> rewards, std::span<const double> pi);
double rl_norm_loss_value(std::span<const int> rewards, std::span<const double> pi);

enum class RlLossVariant { rl, rl_norm };
RlLossVariant rl_loss_variant_from_string(const std::string& s);

// Model-backed scalar losses (values only).
double rl_loss(const model::ModelState& m, std::span<const data::RewardedSample> batch);
double rl_norm_loss(const model::ModelState& m, std::span<const data::RewardedSample> batch);

struct RlBatchStats {
    double rl_loss = 0.0;
    double rl_norm_loss = 0.0;
    double mean_pi_pos = 0.0;  // 0 when the batch has no positives
    double mean_pi_neg = 0.0;
    int n_pos = 0;
    int n_neg = 0;
    std::vector<double> pi;
};

// Forward + backward for one batch through `graph` (which must be fresh);
// optimizing `variant`. Gradients accumulate inside the graph.
// batch_denominator is the B of the mean reduction (the full step's batch
// size, which may exceed this slice when gradients are micro-batched).
RlBatchStats rl_batch_gradients(model::TrainGraph& graph,
                                std::span<const data::RewardedSample> batch,
                                RlLossVariant variant, int batch_denominator);

// Mean NLL over loss-masked (answer) positions; prompt tokens contribute 0.
double sft_loss(const model::ModelState& m, const PackedBatch& batch);

struct SftBatchStats {
    double loss_sum = 0.0;       // sum of NLL over this slice's masked tokens
    size_t masked_tokens = 0;
};

// Forward + backward over a slice of packed streams. mask_denominator is
// the full step's masked-token count (the M of the mean reduction).
SftBatchStats sft_batch_gradients(model::TrainGraph& graph,
                                  std::span<const PackedStream> streams,
                                  size_t mask_denominator);

} // namespace rlpipe::train
