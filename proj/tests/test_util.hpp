#pragma once

// Shared helpers for the unit and acceptance suites: exact enumeration of
// the decoding chain and a chi-square critical value.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rlpipe/decode.hpp"
#include "rlpipe/model.hpp"

namespace testutil {

struct Outcome {
    std::vector<int> tokens;
    double prob = 0.0;
};

inline void enumerate_rec(const rlpipe::model::ModelState& m,
                          const std::vector<int>& prompt, std::vector<int>& prefix,
                          double prob, const rlpipe::decode::DecodeConfig& cfg,
                          std::vector<Outcome>& out) {
    if (!prefix.empty() &&
        (prefix.back() == cfg.eos_token ||
         static_cast<int>(prefix.size()) == cfg.max_new_tokens)) {
        out.push_back({prefix, prob});
        return;
    }
    rlpipe::model::InferenceSession session(m);
    std::span<const double> logits;
    for (int t : prompt) {
        logits = session.feed(t);
    }
    for (int t : prefix) {
        logits = session.feed(t);
    }
    const std::vector<double> dist = rlpipe::decode::transform_distribution(logits, cfg);
    for (int id = 0; id < static_cast<int>(dist.size()); ++id) {
        if (dist[static_cast<size_t>(id)] <= 0.0) {
            continue;
        }
        prefix.push_back(id);
        enumerate_rec(m, prompt, prefix, prob * dist[static_cast<size_t>(id)], cfg, out);
        prefix.pop_back();
    }
}

// All possible answers (with exact probabilities) of sample_answer under the
// given config; feasible for tiny vocabularies and short budgets.
inline std::vector<Outcome> enumerate_decode(const rlpipe::model::ModelState& m,
                                             const std::vector<int>& prompt,
                                             const rlpipe::decode::DecodeConfig& cfg) {
    std::vector<Outcome> out;
    std::vector<int> prefix;
    enumerate_rec(m, prompt, prefix, 1.0, cfg, out);
    return out;
}

inline std::string outcome_key(const std::vector<int>& tokens) {
    std::string key;
    for (int t : tokens) {
        key += std::to_string(t);
        key += ',';
    }
    return key;
}

// Wilson-Hilferty approximation of the chi-square quantile.
inline double chi_square_critical(int dof, double z_alpha) {
    const double d = static_cast<double>(dof);
    const double term = 1.0 - 2.0 / (9.0 * d) + z_alpha * std::sqrt(2.0 / (9.0 * d));
    return d * term * term * term;
}

inline constexpr double kZ999 = 3.090232306167813;  // upper 0.001 normal quantile

struct ChiSquare {
    double statistic = 0.0;
    double critical = 0.0;
    int dof = 0;
    bool pass = false;
};

// Pearson statistic with tail merging: outcomes with expected count < 5 pool
// into one bucket so the asymptotic distribution applies.
inline ChiSquare chi_square_test(const std::vector<Outcome>& outcomes,
                                 const std::map<std::string, long>& counts, long draws) {
    double stat = 0.0;
    int buckets = 0;
    double tail_expected = 0.0;
    long tail_observed = 0;
    for (const auto& o : outcomes) {
        const double expected = o.prob * static_cast<double>(draws);
        long observed = 0;
        const auto it = counts.find(outcome_key(o.tokens));
        if (it != counts.end()) {
            observed = it->second;
        }
        if (expected < 5.0) {
            tail_expected += expected;
            tail_observed += observed;
            continue;
        }
        stat += (observed - expected) * (observed - expected) / expected;
        ++buckets;
    }
    if (tail_expected > 0.0) {
        stat += (tail_observed - tail_expected) * (tail_observed - tail_expected) /
                tail_expected;
        ++buckets;
    }
    ChiSquare result;
    result.statistic = stat;
    result.dof = buckets - 1;
    result.critical = chi_square_critical(result.dof, kZ999);
    result.pass = stat < result.critical;
    return result;
}

} // namespace testutil
