#include "rlpipe/losses.hpp"

#include <cmath>

#include "rlpipe/errors.hpp"

namespace rlpipe::train {

double policy_value_from_logprobs(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) {
        raise(ErrorClass::config, "policy value of an empty answer");
    }
    double sum = 0.0;
    for (double lp : token_logprobs) {
        sum += lp;
    }
    return std::exp(sum / static_cast<double>(token_logprobs.size()));
}

namespace {

model::OwnedStream sample_stream(const TokenSequence& prompt, const TokenSequence& answer) {
    std::vector<int> tokens;
    tokens.reserve(static_cast<size_t>(prompt.size() + answer.size()));
    tokens.insert(tokens.end(), prompt.tokens.begin(), prompt.tokens.end());
    tokens.insert(tokens.end(), answer.tokens.begin(), answer.tokens.end());
    return model::make_plain_stream(tokens);
}

void check_sample(const model::ModelState& m, const TokenSequence& prompt,
                  const TokenSequence& answer) {
    if (answer.size() < 1) {
        raise(ErrorClass::config, "policy value of an empty answer");
    }
    if (prompt.size() < 1) {
        raise(ErrorClass::config, "policy value needs a non-empty prompt");
    }
    if (prompt.size() + answer.size() > m.arch().context_len) {
        raise(ErrorClass::config, "prompt+answer exceeds context length");
    }
}

} // namespace

double policy_value(const model::ModelState& m, const TokenSequence& prompt,
                    const TokenSequence& answer) {
    check_sample(m, prompt, answer);
    TokenSequence joined;
    joined.tokens.reserve(static_cast<size_t>(prompt.size() + answer.size()));
    joined.tokens.insert(joined.tokens.end(), prompt.tokens.begin(), prompt.tokens.end());
    joined.tokens.insert(joined.tokens.end(), answer.tokens.begin(), answer.tokens.end());
    joined.role_split = prompt.size();
    const std::vector<double> lp = model::forward_logprobs(m, joined);
    return policy_value_from_logprobs(
        std::span<const double>(lp).subspan(static_cast<size_t>(prompt.size())));
}

namespace {

void check_rewards(std::span<const int> rewards, std::span<const double> pi) {
    if (rewards.empty() || rewards.size() != pi.size()) {
        raise(ErrorClass::config, "reward/policy-value size mismatch");
    }
    for (int r : rewards) {
        if (r != 1 && r != -1) {
            raise(ErrorClass::config, "reward must be +1 or -1");
        }
    }
}

} // namespace

double rl_loss_value(std::span<const int> rewards, std::span<const double> pi) {
    check_rewards(rewards, pi);
    double sum = 0.0;
    for (size_t i = 0; i < rewards.size(); ++i) {
        sum += static_cast<double>(rewards[i]) * pi[i];
    }
    return -sum / static_cast<double>(rewards.size());
}

double rl_norm_loss_value(std::span<const int> rewards, std::span<const double> pi) {
    check_rewards(rewards, pi);
    double sum = 0.0;
    for (size_t i = 0; i < rewards.size(); ++i) {
        const double positive = (static_cast<double>(rewards[i]) + 1.0) / 2.0;
        sum += positive * (1.0 - pi[i]) + (1.0 - positive) * pi[i];
    }
    return sum / static_cast<double>(rewards.size());
}

RlLossVariant rl_loss_variant_from_string(const std::string& s) {
    if (s == "rl") {
        return RlLossVariant::rl;
    }
    if (s == "rl_norm") {
        return RlLossVariant::rl_norm;
    }
    raise(ErrorClass::config, "unknown loss variant: " + s);
}

namespace {

std::vector<double> batch_policy_values(const model::ModelState& m,
                                        std::span<const data::RewardedSample> batch) {
    std::vector<double> pi;
    pi.reserve(batch.size());
    for (const auto& s : batch) {
        pi.push_back(policy_value(m, s.prompt, s.answer));
    }
    return pi;
}

std::vector<int> batch_rewards(std::span<const data::RewardedSample> batch) {
    std::vector<int> r;
    r.reserve(batch.size());
    for (const auto& s : batch) {
        r.push_back(s.reward);
    }
    return r;
}

} // namespace

double rl_loss(const model::ModelState& m, std::span<const data::RewardedSample> batch) {
    const auto pi = batch_policy_values(m, batch);
    const auto rewards = batch_rewards(batch);
    return rl_loss_value(rewards, pi);
}

double rl_norm_loss(const model::ModelState& m, std::span<const data::RewardedSample> batch) {
    const auto pi = batch_policy_values(m, batch);
    const auto rewards = batch_rewards(batch);
    return rl_norm_loss_value(rewards, pi);
}

RlBatchStats rl_batch_gradients(model::TrainGraph& graph,
                                std::span<const data::RewardedSample> batch,
                                RlLossVariant variant, int batch_denominator) {
    if (batch.empty() || batch_denominator < static_cast<int>(batch.size())) {
        raise(ErrorClass::config, "bad RL batch slice");
    }
    if (graph.has_forward()) {
        raise(ErrorClass::config, "rl_batch_gradients needs a fresh graph");
    }
    RlBatchStats stats;
    stats.pi.reserve(batch.size());

    std::vector<std::vector<double>> weights;
    weights.reserve(batch.size());
    std::vector<model::OwnedStream> streams;
    streams.reserve(batch.size());

    for (const auto& s : batch) {
        if (s.reward != 1 && s.reward != -1) {
            raise(ErrorClass::config, "reward must be +1 or -1");
        }
        if (s.answer.size() < 1) {
            raise(ErrorClass::config, "RL sample with empty answer");
        }
        streams.push_back(sample_stream(s.prompt, s.answer));
        const std::vector<double> lp = graph.forward(streams.back().view());
        const int n = s.answer.size();
        const int start = s.prompt.size();
        double lp_sum = 0.0;
        for (int t = 0; t < n; ++t) {
            lp_sum += lp[static_cast<size_t>(start + t)];
        }
        const double pi = std::exp(lp_sum / n);
        stats.pi.push_back(pi);

        // dL/dpi per variant; both reduce to -R/B but are written from their
        // own loss expressions so the gradient identity is a checked fact,
        // not an artifact of shared code.
        const double r = static_cast<double>(s.reward);
        double dl_dpi;
        if (variant == RlLossVariant::rl) {
            dl_dpi = -r / static_cast<double>(batch_denominator);
        } else {
            const double positive = (r + 1.0) / 2.0;
            dl_dpi = (-positive + (1.0 - positive)) / static_cast<double>(batch_denominator);
        }
        // pi = exp(mean of logprobs) => dpi/dlogp_t = pi / n.
        const double w = dl_dpi * pi / n;
        std::vector<double> sample_weights(streams.back().tokens.size(), 0.0);
        for (int t = 0; t < n; ++t) {
            sample_weights[static_cast<size_t>(start + t)] = w;
        }
        weights.push_back(std::move(sample_weights));

        if (s.reward == 1) {
            stats.n_pos += 1;
            stats.mean_pi_pos += pi;
        } else {
            stats.n_neg += 1;
            stats.mean_pi_neg += pi;
        }
    }
    graph.backward(weights);

    const auto rewards = batch_rewards(batch);
    stats.rl_loss = rl_loss_value(rewards, stats.pi);
    stats.rl_norm_loss = rl_norm_loss_value(rewards, stats.pi);
    if (stats.n_pos > 0) {
        stats.mean_pi_pos /= stats.n_pos;
    }
    if (stats.n_neg > 0) {
        stats.mean_pi_neg /= stats.n_neg;
    }
    return stats;
}

double sft_loss(const model::ModelState& m, const PackedBatch& batch) {
    if (batch.masked_tokens == 0) {
        raise(ErrorClass::config, "packed batch has no loss positions");
    }
    model::TrainGraph graph(m);
    double sum = 0.0;
    for (const auto& stream : batch.streams) {
        const std::vector<double> lp = graph.forward(stream.view());
        for (size_t t = 0; t < stream.tokens.size(); ++t) {
            if (stream.loss_mask[t]) {
                sum -= lp[t];
            }
        }
    }
    return sum / static_cast<double>(batch.masked_tokens);
}

SftBatchStats sft_batch_gradients(model::TrainGraph& graph,
                                  std::span<const PackedStream> streams,
                                  size_t mask_denominator) {
    if (mask_denominator == 0) {
        raise(ErrorClass::config, "packed batch has no loss positions");
    }
    SftBatchStats stats;
    std::vector<std::vector<double>> weights;
    weights.reserve(streams.size());
    const double w = -1.0 / static_cast<double>(mask_denominator);
    for (const auto& stream : streams) {
        const std::vector<double> lp = graph.forward(stream.view());
        std::vector<double> stream_weights(stream.tokens.size(), 0.0);
        for (size_t t = 0; t < stream.tokens.size(); ++t) {
            if (stream.loss_mask[t]) {
                stream_weights[t] = w;
                stats.loss_sum -= lp[t];
                stats.masked_tokens += 1;
            }
        }
        weights.push_back(std::move(stream_weights));
    }
    graph.backward(weights);
    return stats;
}

} // namespace rlpipe::train
