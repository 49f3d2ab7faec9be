#pragma once

#include <span>
#include <string>
#include <vector>

#include "rlpipe/dataset_io.hpp"
#include "rlpipe/decode.hpp"
#include "rlpipe/model.hpp"
#include "rlpipe/records.hpp"
#include "rlpipe/tasks.hpp"

namespace rlpipe::data {

// Batch sampling shared by `infer` (k answers per question) and `eval`
// (n responses per question). Deterministic regardless of worker count:
// every sample's RNG seed is derived from (base_seed, question id, index),
// and results are assembled in canonical order.
struct CollectConfig {
    int k = 8;
    decode::DecodeConfig decode;
    uint64_t base_seed = 0;
    int workers = 1;
    std::string partial_path;  // empty disables resume persistence
    AnswersHeader header;      // provenance guard for the partial file
};

// k answers per question via sample_answer. Already-completed groups found
// in the partial file (or in `reuse`) are not recomputed; completed groups
// append to the partial file as they finish. Output order: question_id asc.
std::vector<QuestionGroup> collect_answers(const model::ModelState& m,
                                           std::span<const tasks::Question> questions,
                                           const CollectConfig& cfg,
                                           std::span<const QuestionGroup> reuse = {});

} // namespace rlpipe::data
