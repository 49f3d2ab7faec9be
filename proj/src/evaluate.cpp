#include "rlpipe/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "rlpipe/errors.hpp"

namespace rlpipe::eval {

using nlohmann::json;

json EvalReport::to_json() const {
    json j;
    j["schema"] = "rlpipe.report/1";
    j["pass_at_1"] = pass_at_1;
    j["avg_response_length"] = avg_response_length;
    j["n_samples"] = n_samples;
    j["decode"] = decode_echo;
    j["checkpoint_id"] = checkpoint_id;
    j["config_hash"] = config_hash;
    j["questions_digest"] = questions_digest;
    json pq = json::array();
    for (const auto& q : per_question) {
        pq.push_back({{"id", q.id},
                      {"difficulty", q.difficulty},
                      {"accuracy", q.accuracy},
                      {"mean_length", q.mean_length}});
    }
    j["per_question"] = std::move(pq);
    json pd = json::array();
    for (const auto& d : per_difficulty) {
        pd.push_back({{"difficulty", d.difficulty},
                      {"questions", d.questions},
                      {"pass_at_1", d.pass_at_1}});
    }
    j["per_difficulty"] = std::move(pd);
    json lb = json::array();
    for (const auto& b : length_buckets) {
        json e = {{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"correct", b.correct}};
        if (b.accuracy) {
            e["accuracy"] = *b.accuracy;
        } else {
            e["accuracy"] = nullptr;
        }
        lb.push_back(std::move(e));
    }
    j["length_buckets"] = std::move(lb);
    return j;
}

EvalReport EvalReport::from_json(const json& j) {
    if (j.value("schema", "") != "rlpipe.report/1") {
        raise(ErrorClass::config, "not an evaluation report");
    }
    EvalReport r;
    r.pass_at_1 = j.at("pass_at_1").get<double>();
    r.avg_response_length = j.at("avg_response_length").get<double>();
    r.n_samples = j.at("n_samples").get<int>();
    r.decode_echo = j.value("decode", json::object());
    r.checkpoint_id = j.value("checkpoint_id", "");
    r.config_hash = j.value("config_hash", "");
    r.questions_digest = j.value("questions_digest", "");
    for (const auto& e : j.at("per_question")) {
        r.per_question.push_back({e.at("id").get<std::string>(),
                                  e.at("difficulty").get<int>(),
                                  e.at("accuracy").get<double>(),
                                  e.at("mean_length").get<double>()});
    }
    for (const auto& e : j.at("per_difficulty")) {
        r.per_difficulty.push_back({e.at("difficulty").get<int>(),
                                    e.at("questions").get<int>(),
                                    e.at("pass_at_1").get<double>()});
    }
    for (const auto& e : j.at("length_buckets")) {
        LengthBucket b;
        b.lo = e.at("lo").get<int>();
        b.hi = e.at("hi").get<int>();
        b.count = e.at("count").get<int>();
        b.correct = e.at("correct").get<int>();
        if (!e.at("accuracy").is_null()) {
            b.accuracy = e.at("accuracy").get<double>();
        }
        r.length_buckets.push_back(std::move(b));
    }
    return r;
}

std::vector<LengthBucket> bucket_by_length(std::span<const EvalSampleRecord> records,
                                           std::span<const int> edges) {
    if (edges.size() < 2) {
        raise(ErrorClass::config, "bucket edges need at least two entries");
    }
    for (size_t i = 1; i < edges.size(); ++i) {
        if (edges[i] <= edges[i - 1]) {
            raise(ErrorClass::config, "bucket edges must be strictly increasing");
        }
    }
    std::vector<LengthBucket> buckets(edges.size() - 1);
    for (size_t b = 0; b + 1 < edges.size(); ++b) {
        buckets[b].lo = edges[b];
        buckets[b].hi = edges[b + 1];
    }
    for (const auto& r : records) {
        if (r.length < edges.front() || r.length >= edges.back()) {
            raise(ErrorClass::config, "sample length outside bucket range");
        }
        const auto it = std::upper_bound(edges.begin(), edges.end(), r.length);
        const size_t b = static_cast<size_t>(it - edges.begin()) - 1;
        buckets[b].count += 1;
        if (r.correct) {
            buckets[b].correct += 1;
        }
    }
    for (auto& b : buckets) {
        if (b.count > 0) {
            b.accuracy = static_cast<double>(b.correct) / b.count;
        }
    }
    return buckets;
}

namespace {

void contamination_check(std::span<const tasks::Question> questions,
                         std::span<const tasks::Question> train_guard) {
    std::set<std::string> ids;
    std::set<std::vector<uint64_t>> multisets;
    for (const auto& q : train_guard) {
        ids.insert(q.id);
        std::vector<uint64_t> ops = q.operands;
        std::sort(ops.begin(), ops.end());
        multisets.insert(std::move(ops));
    }
    for (const auto& q : questions) {
        if (ids.count(q.id)) {
            raise(ErrorClass::contamination,
                  "evaluation question " + q.id + " appears in the training set");
        }
        std::vector<uint64_t> ops = q.operands;
        std::sort(ops.begin(), ops.end());
        if (multisets.count(ops)) {
            raise(ErrorClass::contamination,
                  "evaluation question " + q.id +
                      " shares an operand multiset with the training set");
        }
    }
}

EvalReport assemble_report(std::span<const tasks::Question> questions,
                           const std::vector<data::QuestionGroup>& groups,
                           const EvalConfig& cfg) {
    std::map<std::string, const tasks::Question*> by_id;
    for (const auto& q : questions) {
        by_id.emplace(q.id, &q);
    }

    EvalReport report;
    report.n_samples = cfg.n_samples;
    report.decode_echo = cfg.header.decode;
    report.checkpoint_id = cfg.header.checkpoint_id;
    report.config_hash = cfg.header.config_hash;
    report.questions_digest = cfg.header.questions_digest;

    std::vector<EvalSampleRecord> samples;
    samples.reserve(groups.size() * static_cast<size_t>(cfg.n_samples));
    std::map<int, std::pair<int, double>> difficulty_acc;  // difficulty -> (count, sum)
    double pass_sum = 0.0;
    double length_sum = 0.0;
    size_t total = 0;

    for (const auto& g : groups) {
        const tasks::Question& q = *by_id.at(g.question_id);
        int correct = 0;
        double qlen = 0.0;
        for (const auto& r : g.records) {
            const tasks::Verdict v = tasks::verify(r.answer, q, r.truncated);
            samples.push_back({r.length, v.correct});
            if (v.correct) {
                ++correct;
            }
            qlen += r.length;
            length_sum += r.length;
            ++total;
        }
        const double acc = static_cast<double>(correct) / g.records.size();
        pass_sum += acc;
        report.per_question.push_back(
            {q.id, q.difficulty, acc, qlen / g.records.size()});
        auto& d = difficulty_acc[q.difficulty];
        d.first += 1;
        d.second += acc;
    }

    report.pass_at_1 = groups.empty() ? 0.0 : pass_sum / static_cast<double>(groups.size());
    report.avg_response_length = total == 0 ? 0.0 : length_sum / static_cast<double>(total);
    for (const auto& [difficulty, acc] : difficulty_acc) {
        report.per_difficulty.push_back(
            {difficulty, acc.first, acc.second / acc.first});
    }
    report.length_buckets = bucket_by_length(samples, cfg.bucket_edges);
    return report;
}

} // namespace

EvalReport evaluate(const model::ModelState& m,
                    std::span<const tasks::Question> questions,
                    std::span<const tasks::Question> train_guard,
                    const EvalConfig& cfg) {
    if (cfg.n_samples < 1) {
        raise(ErrorClass::config, "evaluation needs n_samples >= 1");
    }
    contamination_check(questions, train_guard);

    data::CollectConfig cc;
    cc.k = cfg.n_samples;
    cc.decode = cfg.decode;
    cc.base_seed = cfg.base_seed;
    cc.workers = cfg.workers;
    cc.partial_path = cfg.partial_path;
    cc.header = cfg.header;
    const std::vector<data::QuestionGroup> groups = data::collect_answers(m, questions, cc);
    return assemble_report(questions, groups, cfg);
}

EvalReport evaluate_with_sampler(std::span<const tasks::Question> questions,
                                 std::span<const tasks::Question> train_guard,
                                 const EvalConfig& cfg, const SamplerFn& sampler) {
    if (cfg.n_samples < 1) {
        raise(ErrorClass::config, "evaluation needs n_samples >= 1");
    }
    contamination_check(questions, train_guard);
    std::vector<data::QuestionGroup> groups;
    groups.reserve(questions.size());
    for (const auto& q : questions) {
        data::QuestionGroup g;
        g.question_id = q.id;
        for (int s = 0; s < cfg.n_samples; ++s) {
            const decode::SampledAnswer ans = sampler(q, s);
            data::AnswerRecord r;
            r.question_id = q.id;
            r.sample_index = s;
            r.answer = ans.answer;
            r.truncated = ans.truncated;
            r.length = ans.answer.size();
            g.records.push_back(std::move(r));
        }
        groups.push_back(std::move(g));
    }
    std::sort(groups.begin(), groups.end(),
              [](const data::QuestionGroup& a, const data::QuestionGroup& b) {
                  return a.question_id < b.question_id;
              });
    return assemble_report(questions, groups, cfg);
}

std::string ReportDelta::render_text() const {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "pass@1 delta:          %+.4f\n", pass_at_1_delta);
    out += buf;
    std::snprintf(buf, sizeof(buf), "avg length delta:      %+.2f tokens\n", avg_length_delta);
    out += buf;
    for (const auto& d : per_difficulty_delta) {
        std::snprintf(buf, sizeof(buf), "difficulty %d pass@1:   %+.4f\n", d.first, d.second);
        out += buf;
    }
    for (const auto& b : bucket_deltas) {
        if (b.accuracy_delta) {
            std::snprintf(buf, sizeof(buf), "bucket [%4d,%4d):     %+.4f\n", b.lo, b.hi,
                          *b.accuracy_delta);
        } else {
            std::snprintf(buf, sizeof(buf), "bucket [%4d,%4d):     n/a\n", b.lo, b.hi);
        }
        out += buf;
    }
    return out;
}

ReportDelta compare_reports(const EvalReport& before, const EvalReport& after) {
    if (before.per_question.size() != after.per_question.size()) {
        raise(ErrorClass::provenance, "reports cover different question sets");
    }
    for (size_t i = 0; i < before.per_question.size(); ++i) {
        if (before.per_question[i].id != after.per_question[i].id) {
            raise(ErrorClass::provenance, "reports cover different question sets");
        }
    }
    if (before.decode_echo != after.decode_echo) {
        raise(ErrorClass::provenance, "reports used different decode configurations");
    }
    if (before.length_buckets.size() != after.length_buckets.size()) {
        raise(ErrorClass::provenance, "reports used different bucket edges");
    }
    ReportDelta delta;
    delta.pass_at_1_delta = after.pass_at_1 - before.pass_at_1;
    delta.avg_length_delta = after.avg_response_length - before.avg_response_length;
    for (size_t i = 0; i < before.length_buckets.size(); ++i) {
        const auto& a = before.length_buckets[i];
        const auto& b = after.length_buckets[i];
        if (a.lo != b.lo || a.hi != b.hi) {
            raise(ErrorClass::provenance, "reports used different bucket edges");
        }
        BucketDelta d;
        d.lo = a.lo;
        d.hi = a.hi;
        if (a.accuracy && b.accuracy) {
            d.accuracy_delta = *b.accuracy - *a.accuracy;
        }
        delta.bucket_deltas.push_back(d);
    }
    std::map<int, double> before_diff;
    for (const auto& d : before.per_difficulty) {
        before_diff[d.difficulty] = d.pass_at_1;
    }
    for (const auto& d : after.per_difficulty) {
        const auto it = before_diff.find(d.difficulty);
        if (it != before_diff.end()) {
            delta.per_difficulty_delta.emplace_back(d.difficulty, d.pass_at_1 - it->second);
        }
    }
    return delta;
}

} // namespace rlpipe::eval
