#pragma once

#include <unordered_map>
#include <vector>

#include "rlpipe/records.hpp"
#include "rlpipe/tasks.hpp"

namespace rlpipe::data {

// Binary rewards: +1 iff the verifier accepts, -1 otherwise (truncated
// answers are unverifiable and score -1). Group stats are recomputed.
void assign_rewards(std::vector<QuestionGroup>& groups,
                    const std::unordered_map<std::string, const tasks::Question*>& questions);

// Difficulty filter: drops groups whose mean answer length is strictly below
// min_mean_length, and groups where all k answers were correct. Pure and
// order-preserving.
std::vector<QuestionGroup> filter_difficulty(const std::vector<QuestionGroup>& groups,
                                             int min_mean_length, int k);

// Zero-variance filter: keeps only groups with 0 < num_correct < k.
std::vector<QuestionGroup> filter_variance(const std::vector<QuestionGroup>& groups, int k);

// Length-bias filter: drops positive samples strictly longer than
// max_positive_length; negatives pass untouched.
std::vector<RewardedSample> filter_length_bias(const std::vector<RewardedSample>& samples,
                                               int max_positive_length);

// difficulty -> variance -> flatten -> length bias; throws an empty-dataset
// error when nothing survives. Prompts attach from the question table when
// one is given (serialization never stores them).
RlDataset build_dataset(const std::vector<QuestionGroup>& groups,
                        const FilterParams& params, const Provenance& provenance,
                        const std::unordered_map<std::string, const tasks::Question*>*
                            questions = nullptr);

} // namespace rlpipe::data
