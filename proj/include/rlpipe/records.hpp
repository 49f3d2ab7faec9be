#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rlpipe/tokens.hpp"

namespace rlpipe::data {

// One sampled answer for one question. reward is +1/-1 once verification has
// run and absent before; length counts every answer token including the
// terminating eos when one was emitted.
struct AnswerRecord {
    std::string question_id;
    int sample_index = 0;
    TokenSequence answer;
    bool truncated = false;
    int length = 0;
    std::optional<int> reward;

    bool has_reward() const { return reward.has_value(); }
};

// The k answers sampled for one question.
struct QuestionGroup {
    std::string question_id;
    std::vector<AnswerRecord> records;
    int num_correct = 0;       // records with reward +1
    double mean_length = 0.0;  // arithmetic mean of record lengths

    void recompute_stats();
};

// Training triplet (x, y, R). Deliberately carries no behaviour-policy
// probabilities: the offline loss never consumes them.
struct RewardedSample {
    std::string question_id;
    int sample_index = 0;
    TokenSequence prompt;
    TokenSequence answer;
    int reward = 0;
    int length = 0;
    bool truncated = false;
};

struct FilterParams {
    int min_mean_length = 48;
    int max_positive_length = 192;
};

struct DatasetCounts {
    int total = 0;
    int positive = 0;
    int negative = 0;
};

struct Provenance {
    std::string config_hash;
    std::string checkpoint_id;
    std::string questions_digest;
    int k = 0;
};

struct RlDataset {
    std::vector<RewardedSample> samples;
    DatasetCounts counts;
    Provenance provenance;
    FilterParams filter_params;
};

} // namespace rlpipe::data
