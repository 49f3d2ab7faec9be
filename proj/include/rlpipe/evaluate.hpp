#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlpipe/decode.hpp"
#include "rlpipe/model.hpp"
#include "rlpipe/sampling.hpp"
#include "rlpipe/tasks.hpp"

namespace rlpipe::eval {

struct LengthBucket {
    int lo = 0;  // half-open [lo, hi)
    int hi = 0;
    int count = 0;
    int correct = 0;
    std::optional<double> accuracy;  // absent for empty buckets
};

struct PerQuestion {
    std::string id;
    int difficulty = 0;
    double accuracy = 0.0;
    double mean_length = 0.0;
};

struct PerDifficulty {
    int difficulty = 0;
    int questions = 0;
    double pass_at_1 = 0.0;
};

struct EvalReport {
    double pass_at_1 = 0.0;
    double avg_response_length = 0.0;
    int n_samples = 0;
    std::vector<PerQuestion> per_question;      // question_id ascending
    std::vector<PerDifficulty> per_difficulty;  // difficulty ascending
    std::vector<LengthBucket> length_buckets;
    nlohmann::json decode_echo;
    std::string checkpoint_id;
    std::string config_hash;
    std::string questions_digest;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

struct EvalSampleRecord {
    int length = 0;
    bool correct = false;
};

// Half-open bucketing over strictly increasing edges; every sample must fall
// inside [edges.front(), edges.back()).
std::vector<LengthBucket> bucket_by_length(std::span<const EvalSampleRecord> records,
                                           std::span<const int> edges);

struct EvalConfig {
    int n_samples = 32;
    decode::DecodeConfig decode;
    uint64_t base_seed = 0;
    std::vector<int> bucket_edges;
    int workers = 1;
    std::string partial_path;   // resumable like batch inference
    data::AnswersHeader header; // provenance echoed into the report
};

// pass@1 over n sampled responses per question, average response length, and
// accuracy per length bucket. Throws a contamination error when a question
// appears in `train_guard` (by id or operand multiset).
EvalReport evaluate(const model::ModelState& m,
                    std::span<const tasks::Question> questions,
                    std::span<const tasks::Question> train_guard,
                    const EvalConfig& cfg);

// Same computation with an injected sampler; the seam tests use to drive
// evaluation with scripted answers.
using SamplerFn =
    std::function<decode::SampledAnswer(const tasks::Question&, int sample_index)>;
EvalReport evaluate_with_sampler(std::span<const tasks::Question> questions,
                                 std::span<const tasks::Question> train_guard,
                                 const EvalConfig& cfg, const SamplerFn& sampler);

struct BucketDelta {
    int lo = 0, hi = 0;
    std::optional<double> accuracy_delta;  // absent when either side is empty
};

struct ReportDelta {
    double pass_at_1_delta = 0.0;
    double avg_length_delta = 0.0;
    std::vector<BucketDelta> bucket_deltas;
    std::vector<std::pair<int, double>> per_difficulty_delta;

    std::string render_text() const;
};

// Requires identical question sets, decode configs and bucket edges; throws
// a provenance error otherwise.
ReportDelta compare_reports(const EvalReport& before, const EvalReport& after);

} // namespace rlpipe::eval
