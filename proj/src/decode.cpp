#include "rlpipe/decode.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "rlpipe/errors.hpp"
#include "rlpipe/hash.hpp"
#include "rlpipe/rng.hpp"

namespace rlpipe::decode {

namespace {
std::atomic<bool> g_disabled{false};

bool env_disabled() {
    static const bool v = [] {
        const char* e = std::getenv("RLPIPE_DISABLE_DECODER");
        return e != nullptr && e[0] == '1';
    }();
    return v;
}
} // namespace

void set_decoding_disabled(bool disabled) { g_disabled.store(disabled); }

bool decoding_disabled() { return g_disabled.load() || env_disabled(); }

std::vector<double> transform_distribution(std::span<const double> logits,
                                           const DecodeConfig& cfg) {
    const int n = static_cast<int>(logits.size());
    if (n == 0) {
        raise(ErrorClass::config, "transform_distribution on empty logits");
    }
    const double temp = std::max(cfg.temperature, 1e-12);

    // Softmax of logits / temperature.
    double maxl = -std::numeric_limits<double>::infinity();
    for (double z : logits) {
        maxl = std::max(maxl, z / temp);
    }
    std::vector<double> probs(static_cast<size_t>(n));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        probs[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] / temp - maxl);
        sum += probs[static_cast<size_t>(i)];
    }
    for (double& p : probs) {
        p /= sum;
    }

    // Order by (probability desc, id asc); ids ascending in, stable sort out.
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&probs](int a, int b) {
        return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
    });

    const int k = std::clamp(cfg.top_k, 1, n);
    const double top_p = std::clamp(cfg.top_p, 1e-12, 1.0);

    // Smallest descending prefix of the top-k set with raw mass >= top_p.
    int kept = k;
    double mass = 0.0;
    for (int r = 0; r < k; ++r) {
        mass += probs[static_cast<size_t>(order[static_cast<size_t>(r)])];
        if (mass >= top_p) {
            kept = r + 1;
            break;
        }
    }

    std::vector<double> out(static_cast<size_t>(n), 0.0);
    double kept_mass = 0.0;
    for (int r = 0; r < kept; ++r) {
        kept_mass += probs[static_cast<size_t>(order[static_cast<size_t>(r)])];
    }
    for (int r = 0; r < kept; ++r) {
        const int id = order[static_cast<size_t>(r)];
        out[static_cast<size_t>(id)] = probs[static_cast<size_t>(id)] / kept_mass;
    }
    return out;
}

uint64_t sample_seed(uint64_t base, std::string_view question_id, int sample_index) {
    uint64_t h = fnv1a64(question_id);
    return derive_seed(base ^ h, "decode-sample", static_cast<uint64_t>(sample_index));
}

SampledAnswer sample_answer(const model::ModelState& m, const TokenSequence& prompt,
                            const DecodeConfig& cfg) {
    if (decoding_disabled()) {
        raise(ErrorClass::internal, "decoding is disabled in this process");
    }
    if (prompt.size() < 1) {
        raise(ErrorClass::config, "empty prompt");
    }
    const int room = m.arch().context_len - prompt.size();
    if (room < 1) {
        raise(ErrorClass::config, "prompt leaves no room for generation");
    }
    validate_sequence(prompt, m.arch().vocab_size, m.arch().context_len);

    const int budget = std::min(cfg.max_new_tokens, room);
    Rng rng(cfg.seed);
    model::InferenceSession session(m);
    std::span<const double> logits;
    for (int t = 0; t < prompt.size(); ++t) {
        logits = session.feed(prompt.tokens[static_cast<size_t>(t)]);
    }

    SampledAnswer result;
    result.answer.role_split = 0;
    result.truncated = true;
    for (int step = 0; step < budget; ++step) {
        const std::vector<double> dist = transform_distribution(logits, cfg);
        const double u = rng.next_double();
        double cum = 0.0;
        int chosen = -1;
        for (int id = 0; id < static_cast<int>(dist.size()); ++id) {
            cum += dist[static_cast<size_t>(id)];
            if (u < cum) {
                chosen = id;
                break;
            }
        }
        if (chosen < 0) {
            // Renormalization slack; take the highest-id kept token.
            for (int id = static_cast<int>(dist.size()) - 1; id >= 0; --id) {
                if (dist[static_cast<size_t>(id)] > 0.0) {
                    chosen = id;
                    break;
                }
            }
        }
        result.answer.tokens.push_back(chosen);
        if (chosen == cfg.eos_token) {
            result.truncated = false;
            break;
        }
        if (step + 1 < budget) {
            logits = session.feed(chosen);
        }
    }
    return result;
}

} // namespace rlpipe::decode
