#include "rlpipe/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "rlpipe/checkpoint.hpp"
#include "rlpipe/errors.hpp"
#include "rlpipe/optimizer.hpp"
#include "rlpipe/rng.hpp"

namespace rlpipe::train {

using nlohmann::json;

namespace {

std::vector<size_t> epoch_order(size_t n, uint64_t shuffle_seed, int64_t epoch) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    Rng rng(derive_seed(shuffle_seed, "epoch", static_cast<uint64_t>(epoch)));
    for (size_t i = n; i > 1; --i) {
        const size_t j = rng.uniform_below(i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

std::ofstream open_metrics(const std::string& dir, bool resuming, std::string* path_out) {
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/metrics.jsonl";
    std::ofstream out(path, resuming ? (std::ios::app | std::ios::binary)
                                     : (std::ios::trunc | std::ios::binary));
    if (!out.is_open()) {
        raise(ErrorClass::config, "cannot write metrics log: " + path);
    }
    *path_out = path;
    return out;
}

std::string step_checkpoint_path(const std::string& dir, int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt-step-%06lld.bin", static_cast<long long>(step));
    return dir + "/" + std::string(buf);
}

// Gradient chunks are reduced in chunk order, so the accumulated gradient is
// identical for any worker count. chunk_fn(chunk_index, worker_index).
template <class ChunkFn>
std::vector<double> run_chunks(size_t n_chunks, int workers, size_t param_count,
                               const ChunkFn& chunk_fn) {
    std::vector<std::vector<double>> chunk_grads(n_chunks);
    const int use = std::max(1, std::min<int>(workers, static_cast<int>(n_chunks)));
    if (use == 1) {
        for (size_t c = 0; c < n_chunks; ++c) {
            chunk_grads[c] = chunk_fn(c, 0);
        }
    } else {
        std::atomic<size_t> next{0};
        std::mutex failure_mutex;
        std::exception_ptr failure;
        auto worker = [&](int wid) {
            try {
                while (true) {
                    const size_t c = next.fetch_add(1);
                    if (c >= n_chunks) {
                        return;
                    }
                    chunk_grads[c] = chunk_fn(c, wid);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(n_chunks);
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < use; ++w) {
            pool.emplace_back(worker, w);
        }
        for (auto& t : pool) {
            t.join();
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }
    std::vector<double> total(param_count, 0.0);
    for (size_t c = 0; c < n_chunks; ++c) {
        for (size_t i = 0; i < param_count; ++i) {
            total[i] += chunk_grads[c][i];
        }
    }
    return total;
}

struct ResumeState {
    int64_t start_step = 0;
    bool resumed = false;
};

ResumeState apply_resume(model::ModelState& m, model::OptimizerState& opt,
                         const std::string& resume_from, uint64_t shuffle_seed) {
    ResumeState rs;
    if (resume_from.empty()) {
        return rs;
    }
    model::Checkpoint ck = model::load_checkpoint(resume_from, &m.arch());
    if (!ck.opt) {
        raise(ErrorClass::config, "checkpoint has no optimizer state; cannot resume: " +
                                      resume_from);
    }
    if (ck.rng_state[0] != shuffle_seed) {
        raise(ErrorClass::provenance,
              "checkpoint was trained with a different shuffle seed: " + resume_from);
    }
    m = std::move(ck.model);
    opt = std::move(*ck.opt);
    rs.start_step = ck.step;
    rs.resumed = true;
    return rs;
}

void save_diag_and_rethrow(const std::string& dir, model::ModelState& m,
                           model::OptimizerState& opt, int64_t step, uint64_t seed,
                           const Error& e) {
    const std::array<uint64_t, 4> rng_state{seed, 0, 0, 0};
    model::save_checkpoint(dir + "/ckpt-diagnostic.bin", m, &opt, step, rng_state);
    throw e;
}

} // namespace

TrainResult train_sft(model::ModelState& m, const std::vector<GoldSample>& data,
                      const SftConfig& cfg) {
    if (data.empty()) {
        raise(ErrorClass::empty_dataset, "SFT dataset is empty");
    }
    if (cfg.batch_samples < 1 || cfg.epochs < 1) {
        raise(ErrorClass::config, "SFT batch and epochs must be >= 1");
    }
    for (const auto& s : data) {
        if (s.prompt.size() + s.answer.size() > m.arch().context_len) {
            raise(ErrorClass::config, "SFT sample exceeds context length");
        }
    }

    const int64_t n = static_cast<int64_t>(data.size());
    const int64_t steps_per_epoch = (n + cfg.batch_samples - 1) / cfg.batch_samples;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    const LrSchedule sched{cfg.lr_max, cfg.lr_min, total_steps, cfg.warmup_ratio};

    model::OptimizerState opt = model::OptimizerState::init(
        m, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.weight_decay);
    const ResumeState rs = apply_resume(m, opt, cfg.resume_from, cfg.shuffle_seed);
    const std::array<uint64_t, 4> rng_state{cfg.shuffle_seed, 0, 0, 0};

    TrainResult result;
    std::ofstream metrics = open_metrics(cfg.out_dir, rs.resumed, &result.metrics_path);
    result.init_checkpoint = cfg.out_dir + "/ckpt-init.bin";
    if (!rs.resumed) {
        model::save_checkpoint(result.init_checkpoint, m, &opt, 0, rng_state);
    }

    const int workers = std::max(1, cfg.workers);
    std::vector<std::unique_ptr<model::TrainGraph>> graphs;
    for (int w = 0; w < workers; ++w) {
        graphs.push_back(std::make_unique<model::TrainGraph>(m));
    }

    for (int64_t step = rs.start_step; step < total_steps; ++step) {
        const int64_t epoch = step / steps_per_epoch;
        const int64_t pos_in_epoch = step % steps_per_epoch;
        const std::vector<size_t> order = epoch_order(data.size(), cfg.shuffle_seed, epoch);
        const int64_t lo = pos_in_epoch * cfg.batch_samples;
        const int64_t hi = std::min<int64_t>(n, lo + cfg.batch_samples);

        std::vector<PackItem> items;
        items.reserve(static_cast<size_t>(hi - lo));
        for (int64_t i = lo; i < hi; ++i) {
            const GoldSample& s = data[order[static_cast<size_t>(i)]];
            items.push_back(PackItem{static_cast<int>(i - lo), s.prompt.tokens, s.answer.tokens});
        }
        const PackedBatch batch = pack(items, m.arch().context_len);

        const size_t n_streams = batch.streams.size();
        const size_t chunk = static_cast<size_t>(std::max(1, cfg.micro_batch_streams));
        const size_t n_chunks = (n_streams + chunk - 1) / chunk;
        std::vector<double> chunk_loss(n_chunks, 0.0);

        auto chunk_fn = [&](size_t c, int wid) {
            model::TrainGraph& graph = *graphs[static_cast<size_t>(wid)];
            graph.reset();
            const size_t lo_s = c * chunk;
            const size_t hi_s = std::min(n_streams, lo_s + chunk);
            const SftBatchStats stats = sft_batch_gradients(
                graph,
                std::span<const PackedStream>(batch.streams.data() + lo_s, hi_s - lo_s),
                batch.masked_tokens);
            chunk_loss[c] = stats.loss_sum;
            return graph.grads();
        };

        std::vector<double> grads =
            run_chunks(n_chunks, workers, m.param_count(), chunk_fn);
        double loss = 0.0;
        for (double l : chunk_loss) {
            loss += l;
        }
        loss /= static_cast<double>(batch.masked_tokens);

        const double grad_norm = model::global_grad_norm(grads);
        const double lr = lr_at(sched, step);
        try {
            if (!std::isfinite(loss)) {
                raise(ErrorClass::numeric, "non-finite SFT loss");
            }
            model::clip_grad_norm(grads, cfg.optim.grad_clip);
            model::adamw_step(m, opt, grads, lr);
        } catch (const Error& e) {
            if (e.cls() == ErrorClass::numeric) {
                save_diag_and_rethrow(cfg.out_dir, m, opt, step, cfg.shuffle_seed, e);
            }
            throw;
        }

        if (step == rs.start_step) {
            result.first_loss = loss;
        }
        result.final_loss = loss;
        result.steps = step + 1;

        json line;
        line["step"] = step + 1;
        line["lr"] = lr;
        line["loss"] = loss;
        line["grad_norm"] = grad_norm;
        line["occupancy"] = batch.occupancy();
        metrics << line.dump() << "\n";
        metrics.flush();
        if (cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == total_steps)) {
            std::printf("sft step %lld/%lld loss %.4f lr %.2e\n",
                        static_cast<long long>(step + 1), static_cast<long long>(total_steps),
                        loss, lr);
            std::fflush(stdout);
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < total_steps) {
            model::save_checkpoint(step_checkpoint_path(cfg.out_dir, step + 1), m, &opt,
                                   step + 1, rng_state);
        }
    }

    result.final_checkpoint = cfg.out_dir + "/ckpt-final.bin";
    model::save_checkpoint(result.final_checkpoint, m, &opt, total_steps, rng_state);
    return result;
}

TrainResult train_rl(model::ModelState& m, const data::RlDataset& dataset,
                     const RlConfig& cfg) {
    if (dataset.samples.empty()) {
        raise(ErrorClass::empty_dataset, "RL dataset is empty");
    }
    if (dataset.counts.positive == 0 || dataset.counts.negative == 0) {
        raise(ErrorClass::config, "RL dataset needs both positive and negative rewards");
    }
    if (cfg.steps < 1 || cfg.batch_samples < 1) {
        raise(ErrorClass::config, "RL steps and batch must be >= 1");
    }
    for (const auto& s : dataset.samples) {
        if (s.prompt.size() < 1) {
            raise(ErrorClass::config, "RL dataset sample is missing its prompt");
        }
        if (s.prompt.size() + s.answer.size() > m.arch().context_len) {
            raise(ErrorClass::config, "RL sample exceeds context length");
        }
    }

    const int64_t n = static_cast<int64_t>(dataset.samples.size());
    const int64_t batch = std::min<int64_t>(cfg.batch_samples, n);
    const int64_t batches_per_epoch = std::max<int64_t>(1, n / batch);
    const LrSchedule sched{cfg.lr_max, cfg.lr_min, cfg.steps, cfg.warmup_ratio};

    model::OptimizerState opt = model::OptimizerState::init(
        m, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.weight_decay);
    const ResumeState rs = apply_resume(m, opt, cfg.resume_from, cfg.shuffle_seed);
    const std::array<uint64_t, 4> rng_state{cfg.shuffle_seed, 0, 0, 0};

    TrainResult result;
    std::ofstream metrics = open_metrics(cfg.out_dir, rs.resumed, &result.metrics_path);
    result.init_checkpoint = cfg.out_dir + "/ckpt-init.bin";
    if (!rs.resumed) {
        model::save_checkpoint(result.init_checkpoint, m, &opt, 0, rng_state);
    }

    const int workers = std::max(1, cfg.workers);
    std::vector<std::unique_ptr<model::TrainGraph>> graphs;
    for (int w = 0; w < workers; ++w) {
        graphs.push_back(std::make_unique<model::TrainGraph>(m));
    }

    for (int64_t step = rs.start_step; step < cfg.steps; ++step) {
        const int64_t epoch = step / batches_per_epoch;
        const int64_t pos_in_epoch = step % batches_per_epoch;
        const std::vector<size_t> order =
            epoch_order(dataset.samples.size(), cfg.shuffle_seed, epoch);
        const int64_t lo = pos_in_epoch * batch;

        std::vector<data::RewardedSample> slice;
        slice.reserve(static_cast<size_t>(batch));
        for (int64_t i = lo; i < lo + batch; ++i) {
            slice.push_back(dataset.samples[order[static_cast<size_t>(i % n)]]);
        }

        const size_t chunk = static_cast<size_t>(std::max(1, cfg.micro_batch_samples));
        const size_t n_chunks = (slice.size() + chunk - 1) / chunk;
        std::vector<RlBatchStats> chunk_stats(n_chunks);

        auto chunk_fn = [&](size_t c, int wid) {
            model::TrainGraph& graph = *graphs[static_cast<size_t>(wid)];
            graph.reset();
            const size_t lo_s = c * chunk;
            const size_t hi_s = std::min(slice.size(), lo_s + chunk);
            chunk_stats[c] = rl_batch_gradients(
                graph, std::span<const data::RewardedSample>(slice.data() + lo_s, hi_s - lo_s),
                cfg.variant, static_cast<int>(slice.size()));
            return graph.grads();
        };

        std::vector<double> grads =
            run_chunks(n_chunks, workers, m.param_count(), chunk_fn);

        // Merge chunk statistics in fixed order.
        std::vector<int> rewards;
        std::vector<double> pis;
        double pi_pos_sum = 0.0, pi_neg_sum = 0.0;
        int n_pos = 0, n_neg = 0;
        for (size_t c = 0; c < n_chunks; ++c) {
            const auto& st = chunk_stats[c];
            pi_pos_sum += st.mean_pi_pos * st.n_pos;
            pi_neg_sum += st.mean_pi_neg * st.n_neg;
            n_pos += st.n_pos;
            n_neg += st.n_neg;
            for (double p : st.pi) {
                pis.push_back(p);
            }
        }
        for (size_t i = 0; i < slice.size(); ++i) {
            rewards.push_back(slice[i].reward);
        }
        const double loss = rl_loss_value(rewards, pis);
        const double norm_loss = rl_norm_loss_value(rewards, pis);

        const double grad_norm = model::global_grad_norm(grads);
        const double lr = lr_at(sched, step);
        try {
            if (!std::isfinite(loss) || !std::isfinite(norm_loss)) {
                raise(ErrorClass::numeric, "non-finite RL loss");
            }
            model::clip_grad_norm(grads, cfg.optim.grad_clip);
            model::adamw_step(m, opt, grads, lr);
        } catch (const Error& e) {
            if (e.cls() == ErrorClass::numeric) {
                save_diag_and_rethrow(cfg.out_dir, m, opt, step, cfg.shuffle_seed, e);
            }
            throw;
        }

        if (step == rs.start_step) {
            result.first_loss = loss;
        }
        result.final_loss = loss;
        result.steps = step + 1;

        json line;
        line["step"] = step + 1;
        line["lr"] = lr;
        line["loss"] = loss;
        line["rl_norm_loss"] = norm_loss;
        line["grad_norm"] = grad_norm;
        line["mean_pi_pos"] = n_pos > 0 ? pi_pos_sum / n_pos : 0.0;
        line["mean_pi_neg"] = n_neg > 0 ? pi_neg_sum / n_neg : 0.0;
        metrics << line.dump() << "\n";
        metrics.flush();
        if (cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            std::printf("rl step %lld/%lld loss %.4f norm %.4f pi+ %.3f pi- %.3f\n",
                        static_cast<long long>(step + 1), static_cast<long long>(cfg.steps),
                        loss, norm_loss, n_pos > 0 ? pi_pos_sum / n_pos : 0.0,
                        n_neg > 0 ? pi_neg_sum / n_neg : 0.0);
            std::fflush(stdout);
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.steps) {
            model::save_checkpoint(step_checkpoint_path(cfg.out_dir, step + 1), m, &opt,
                                   step + 1, rng_state);
        }
    }

    result.final_checkpoint = cfg.out_dir + "/ckpt-final.bin";
    model::save_checkpoint(result.final_checkpoint, m, &opt, cfg.steps, rng_state);
    return result;
}

} // namespace rlpipe::train
