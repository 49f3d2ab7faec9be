#include "rlpipe/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "rlpipe/errors.hpp"

namespace rlpipe::data {

std::vector<QuestionGroup> collect_answers(const model::ModelState& m,
                                           std::span<const tasks::Question> questions,
                                           const CollectConfig& cfg,
                                           std::span<const QuestionGroup> reuse) {
    if (cfg.k < 1) {
        raise(ErrorClass::config, "sample count per question must be >= 1");
    }

    // Completed groups from earlier runs, keyed by question id. Only groups
    // with exactly k records count as complete.
    std::unordered_map<std::string, const QuestionGroup*> done;
    std::vector<QuestionGroup> persisted;
    if (!cfg.partial_path.empty()) {
        persisted = load_partial_groups(cfg.partial_path, cfg.header);
    }
    auto note_done = [&done, &cfg](const QuestionGroup& g) {
        if (static_cast<int>(g.records.size()) == cfg.k) {
            done.emplace(g.question_id, &g);
        }
    };
    for (const auto& g : persisted) {
        note_done(g);
    }
    for (const auto& g : reuse) {
        note_done(g);
    }

    std::vector<QuestionGroup> out(questions.size());
    std::vector<const tasks::Question*> pending;
    std::vector<size_t> pending_slot;
    for (size_t i = 0; i < questions.size(); ++i) {
        const auto it = done.find(questions[i].id);
        if (it != done.end()) {
            out[i] = *it->second;
        } else {
            pending.push_back(&questions[i]);
            pending_slot.push_back(i);
        }
    }

    if (!pending.empty()) {
        std::atomic<size_t> next{0};
        std::mutex io_mutex;
        std::exception_ptr failure;
        const int workers = std::max(1, std::min<int>(cfg.workers,
                                                      static_cast<int>(pending.size())));
        auto worker_fn = [&]() {
            try {
                while (true) {
                    const size_t idx = next.fetch_add(1);
                    if (idx >= pending.size()) {
                        return;
                    }
                    const tasks::Question& q = *pending[idx];
                    QuestionGroup g;
                    g.question_id = q.id;
                    g.records.reserve(static_cast<size_t>(cfg.k));
                    for (int s = 0; s < cfg.k; ++s) {
                        decode::DecodeConfig dc = cfg.decode;
                        dc.seed = decode::sample_seed(cfg.base_seed, q.id, s);
                        const decode::SampledAnswer ans = decode::sample_answer(m, q.prompt, dc);
                        AnswerRecord r;
                        r.question_id = q.id;
                        r.sample_index = s;
                        r.answer = ans.answer;
                        r.truncated = ans.truncated;
                        r.length = ans.answer.size();
                        g.records.push_back(std::move(r));
                    }
                    {
                        std::lock_guard<std::mutex> lock(io_mutex);
                        if (!cfg.partial_path.empty()) {
                            append_partial_group(cfg.partial_path, g, cfg.header);
                        }
                        out[pending_slot[idx]] = std::move(g);
                    }
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(io_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(pending.size());  // drain remaining work
            }
        };
        if (workers == 1) {
            worker_fn();
        } else {
            std::vector<std::thread> pool;
            pool.reserve(static_cast<size_t>(workers));
            for (int w = 0; w < workers; ++w) {
                pool.emplace_back(worker_fn);
            }
            for (auto& t : pool) {
                t.join();
            }
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }

    std::sort(out.begin(), out.end(), [](const QuestionGroup& a, const QuestionGroup& b) {
        return a.question_id < b.question_id;
    });
    for (auto& g : out) {
        g.recompute_stats();
    }
    return out;
}

} // namespace rlpipe::data
