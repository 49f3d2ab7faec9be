#include "rlpipe/filters.hpp"

#include <algorithm>

#include "rlpipe/errors.hpp"

namespace rlpipe::data {

void QuestionGroup::recompute_stats() {
    num_correct = 0;
    double total = 0.0;
    for (const auto& r : records) {
        if (r.reward && *r.reward == 1) {
            ++num_correct;
        }
        total += r.length;
    }
    mean_length = records.empty() ? 0.0 : total / static_cast<double>(records.size());
}

void assign_rewards(std::vector<QuestionGroup>& groups,
                    const std::unordered_map<std::string, const tasks::Question*>& questions) {
    for (auto& g : groups) {
        const auto it = questions.find(g.question_id);
        if (it == questions.end()) {
            raise(ErrorClass::provenance,
                  "answer group references unknown question " + g.question_id);
        }
        for (auto& r : g.records) {
            const tasks::Verdict v = tasks::verify(r.answer, *it->second, r.truncated);
            r.reward = v.correct ? 1 : -1;
        }
        g.recompute_stats();
    }
}

namespace {

void require_rewards(const std::vector<QuestionGroup>& groups) {
    for (const auto& g : groups) {
        for (const auto& r : g.records) {
            if (!r.has_reward()) {
                raise(ErrorClass::config, "filter applied before rewards were assigned");
            }
        }
    }
}

} // namespace

std::vector<QuestionGroup> filter_difficulty(const std::vector<QuestionGroup>& groups,
                                             int min_mean_length, int k) {
    require_rewards(groups);
    std::vector<QuestionGroup> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        if (g.mean_length < static_cast<double>(min_mean_length)) {
            continue;
        }
        if (g.num_correct == k) {
            continue;
        }
        out.push_back(g);
    }
    return out;
}

std::vector<QuestionGroup> filter_variance(const std::vector<QuestionGroup>& groups, int k) {
    require_rewards(groups);
    std::vector<QuestionGroup> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        if (g.num_correct > 0 && g.num_correct < k) {
            out.push_back(g);
        }
    }
    return out;
}

std::vector<RewardedSample> filter_length_bias(const std::vector<RewardedSample>& samples,
                                               int max_positive_length) {
    std::vector<RewardedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.reward == 1 && s.length > max_positive_length) {
            continue;
        }
        out.push_back(s);
    }
    return out;
}

RlDataset build_dataset(const std::vector<QuestionGroup>& groups,
                        const FilterParams& params, const Provenance& provenance,
                        const std::unordered_map<std::string, const tasks::Question*>*
                            questions) {
    const int k = groups.empty() ? 0 : static_cast<int>(groups.front().records.size());
    const auto after_difficulty = filter_difficulty(groups, params.min_mean_length, k);
    const auto after_variance = filter_variance(after_difficulty, k);

    std::vector<RewardedSample> flat;
    for (const auto& g : after_variance) {
        const tasks::Question* q = nullptr;
        if (questions) {
            const auto it = questions->find(g.question_id);
            if (it == questions->end()) {
                raise(ErrorClass::provenance,
                      "answer group references unknown question " + g.question_id);
            }
            q = it->second;
        }
        for (const auto& r : g.records) {
            RewardedSample s;
            s.question_id = r.question_id;
            s.sample_index = r.sample_index;
            if (q) {
                s.prompt = q->prompt;
            }
            s.answer = r.answer;
            s.reward = *r.reward;
            s.length = r.length;
            s.truncated = r.truncated;
            flat.push_back(std::move(s));
        }
    }
    auto survivors = filter_length_bias(flat, params.max_positive_length);
    if (survivors.empty()) {
        raise(ErrorClass::empty_dataset, "all samples were filtered out; nothing to train on");
    }

    RlDataset ds;
    ds.samples = std::move(survivors);
    ds.filter_params = params;
    ds.provenance = provenance;
    for (const auto& s : ds.samples) {
        ds.counts.total += 1;
        if (s.reward == 1) {
            ds.counts.positive += 1;
        } else {
            ds.counts.negative += 1;
        }
    }
    return ds;
}

} // namespace rlpipe::data
