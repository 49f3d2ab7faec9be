#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlpipe/losses.hpp"
#include "rlpipe/model.hpp"
#include "rlpipe/records.hpp"
#include "rlpipe/schedule.hpp"
#include "rlpipe/tokens.hpp"

namespace rlpipe::train {

struct OptimConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.0;
    double grad_clip = 1.0;
};

struct SftConfig {
    int batch_samples = 32;
    int epochs = 4;
    double lr_max = 3e-4;
    double lr_min = 1e-7;
    double warmup_ratio = 0.05;
    OptimConfig optim;
    int micro_batch_streams = 2;  // gradient chunk size; fixed accumulation order
    int workers = 1;
    uint64_t shuffle_seed = 1;
    int checkpoint_every = 0;  // 0 = only init/final
    int log_every = 25;
    std::string out_dir;
    std::string resume_from;
};

struct RlConfig {
    int steps = 400;
    int batch_samples = 32;
    double lr_max = 1e-4;
    double lr_min = 1e-7;
    double warmup_ratio = 0.0;  // no warm-up in the RL phase
    OptimConfig optim{.weight_decay = 0.1};
    RlLossVariant variant = RlLossVariant::rl;
    int micro_batch_samples = 4;
    int workers = 1;
    uint64_t shuffle_seed = 2;
    int checkpoint_every = 0;
    int log_every = 25;
    std::string out_dir;
    std::string resume_from;
};

struct GoldSample {
    std::string question_id;
    TokenSequence prompt;
    TokenSequence answer;
};

struct TrainResult {
    int64_t steps = 0;
    double first_loss = 0.0;
    double final_loss = 0.0;
    std::string init_checkpoint;
    std::string final_checkpoint;
    std::string metrics_path;
};

// Packed-stream SFT: per step, the next batch of samples is packed into
// capacity-sized streams and trained with mean NLL over answer tokens.
// Writes metrics.jsonl plus init/periodic/final checkpoints under out_dir.
TrainResult train_sft(model::ModelState& m, const std::vector<GoldSample>& data,
                      const SftConfig& cfg);

// Offline RL: optimizes the chosen loss variant, logs the normalized loss
// every step as the monitoring curve, never touches the decoder. The dataset
// is traversed repeatedly (reshuffled per epoch) until `steps` is reached.
TrainResult train_rl(model::ModelState& m, const data::RlDataset& dataset,
                     const RlConfig& cfg);

} // namespace rlpipe::train
