#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rlpipe/records.hpp"
#include "rlpipe/tasks.hpp"

namespace rlpipe::data {

// All pipeline artifacts are JSON-lines with a single header line carrying
// schema id and provenance (config hash plus upstream artifact ids), so any
// stage can be replayed from files alone.

// ---- questions ----

struct QuestionsFile {
    std::vector<tasks::Question> questions;
    nlohmann::json header;
    std::string digest;  // digest of the file bytes, for provenance chains
};

void write_questions(const std::string& path, const std::vector<tasks::Question>& questions,
                     const nlohmann::json& header_extra);
QuestionsFile load_questions(const std::string& path);

std::unordered_map<std::string, const tasks::Question*>
question_table(const std::vector<tasks::Question>& questions);

// ---- sampled answers ----

struct AnswersHeader {
    std::string config_hash;
    std::string checkpoint_id;
    std::string questions_digest;
    int k = 0;
    nlohmann::json decode;  // decode config echo
    bool verified = false;

    nlohmann::json to_json(bool partial) const;
    static AnswersHeader from_json(const nlohmann::json& j);
    // Equality of the provenance fields that make partial results reusable.
    bool compatible(const AnswersHeader& other) const;
};

// Canonical (sorted) answers file.
void write_answers(const std::string& path, const std::vector<QuestionGroup>& groups,
                   const AnswersHeader& header);

struct AnswersFile {
    std::vector<QuestionGroup> groups;
    AnswersHeader header;
};
AnswersFile load_answers(const std::string& path);

// Append-only partial file, one completed group per line; resume granularity
// is the question group. A truncated trailing line is ignored on load.
void append_partial_group(const std::string& path, const QuestionGroup& group,
                          const AnswersHeader& header);
std::vector<QuestionGroup> load_partial_groups(const std::string& path,
                                               const AnswersHeader& expected);

// ---- RL dataset ----

void write_dataset(const std::string& path, const RlDataset& dataset);

// Prompts are never stored; they are re-rendered from the question table.
RlDataset load_dataset(const std::string& path,
                       const std::unordered_map<std::string, const tasks::Question*>& questions);

// Loads only the samples + header of a dataset file without needing the
// question set (prompts left empty); used by the filter CLI for re-runs.
RlDataset load_dataset_raw(const std::string& path);

} // namespace rlpipe::data
