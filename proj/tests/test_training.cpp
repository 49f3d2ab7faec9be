#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "rlpipe/errors.hpp"
#include "rlpipe/gradcheck.hpp"
#include "rlpipe/losses.hpp"
#include "rlpipe/pack.hpp"
#include "rlpipe/rng.hpp"
#include "rlpipe/trainer.hpp"

using namespace rlpipe;
using data::RewardedSample;
using model::Arch;
using model::ModelState;
using model::Precision;
using train::PackItem;

namespace fs = std::filesystem;

namespace {

Arch tiny_arch(int context = 64) {
    Arch a;
    a.vocab_size = 9;
    a.context_len = context;
    a.layers = 1;
    a.hidden_dim = 12;
    a.heads = 2;
    return a;
}

std::vector<int> rand_tokens(Rng& rng, int len, int vocab) {
    std::vector<int> t(static_cast<size_t>(len));
    for (int& v : t) {
        v = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(vocab)));
    }
    return t;
}

RewardedSample make_sample(Rng& rng, int vocab, int prompt_len, int answer_len, int reward) {
    RewardedSample s;
    s.question_id = "q";
    s.prompt.tokens = rand_tokens(rng, prompt_len, vocab);
    s.prompt.role_split = prompt_len;
    s.answer.tokens = rand_tokens(rng, answer_len, vocab);
    s.reward = reward;
    s.length = answer_len;
    return s;
}

} // namespace

TEST_CASE("pack: first-fit-decreasing oracle cases") {
    std::vector<int> p = {1};  // shared one-token prompt
    std::vector<int> a9(9, 2), a19(19, 2), a29(29, 2);
    std::vector<PackItem> items = {{0, p, a9}, {1, p, a19}, {2, p, a29}};
    const train::PackedBatch batch = pack(items, 64);
    // Lengths 10, 20, 30 fit one stream of 64 with occupancy 60/64.
    REQUIRE(batch.streams.size() == 1);
    CHECK(batch.streams[0].used == 60);
    CHECK(batch.occupancy() == doctest::Approx(60.0 / 64.0));
    CHECK(batch.total_tokens == 60);
    CHECK(batch.masked_tokens == 9 + 19 + 29);

    // Exactly-capacity sample fills one stream.
    std::vector<int> a63(63, 2);
    std::vector<PackItem> tight = {{0, p, a63}};
    const train::PackedBatch one = pack(tight, 64);
    REQUIRE(one.streams.size() == 1);
    CHECK(one.streams[0].used == 64);
    CHECK(one.occupancy() == doctest::Approx(1.0));

    // Oversize is a length error.
    std::vector<int> a64(64, 2);
    std::vector<PackItem> over = {{0, p, a64}};
    CHECK_THROWS_AS(pack(over, 64), Error);
}

TEST_CASE("pack conserves tokens and masks exactly the answer positions") {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::vector<int>> prompts, answers;
        std::vector<PackItem> items;
        size_t prompt_tokens = 0, answer_tokens = 0;
        const int n = 1 + static_cast<int>(rng.uniform_below(12));
        for (int i = 0; i < n; ++i) {
            prompts.push_back(rand_tokens(rng, 1 + static_cast<int>(rng.uniform_below(6)), 9));
            answers.push_back(rand_tokens(rng, 1 + static_cast<int>(rng.uniform_below(20)), 9));
            prompt_tokens += prompts.back().size();
            answer_tokens += answers.back().size();
        }
        for (int i = 0; i < n; ++i) {
            items.push_back({i, prompts[static_cast<size_t>(i)], answers[static_cast<size_t>(i)]});
        }
        const train::PackedBatch batch = pack(items, 32);
        CHECK(batch.total_tokens == prompt_tokens + answer_tokens);
        CHECK(batch.masked_tokens == answer_tokens);
        // Every sample id appears exactly once across streams.
        std::set<int> seen;
        size_t mask_count = 0;
        for (const auto& s : batch.streams) {
            CHECK(s.used <= 32);
            for (int id : s.segment_sample) {
                CHECK(seen.insert(id).second);
            }
            for (uint8_t b : s.loss_mask) {
                mask_count += b;
            }
            // No segment crosses the stream boundary by construction; check
            // positions restart within the stream.
            for (size_t t = 1; t < s.pos.size(); ++t) {
                if (s.segment[t] == s.segment[t - 1]) {
                    CHECK(s.pos[t] == s.pos[t - 1] + 1);
                } else {
                    CHECK(s.pos[t] == 0);
                }
            }
        }
        CHECK(seen.size() == static_cast<size_t>(n));
        CHECK(mask_count == answer_tokens);
    }
}

TEST_CASE("sft_loss: uniform model gives log V; saturated model gives ~0") {
    const Arch a = tiny_arch();
    ModelState uniform = ModelState::init(a, 3, Precision::high);
    uniform.fill_params(0.0);

    Rng rng(9);
    std::vector<int> prompt = rand_tokens(rng, 4, a.vocab_size);
    std::vector<int> answer = rand_tokens(rng, 12, a.vocab_size);
    std::vector<PackItem> items = {{0, prompt, answer}};
    const train::PackedBatch batch = pack(items, a.context_len);
    CHECK(train::sft_loss(uniform, batch) ==
          doctest::Approx(std::log(a.vocab_size)).epsilon(1e-9));

    // Model that puts essentially all mass on token 5 everywhere; an answer
    // of all 5s has (near-)zero loss.
    ModelState hot = ModelState::init(a, 3, Precision::high);
    hot.fill_params(0.0);
    for (const auto& v : hot.layout()) {
        if (v.name == "lnf.b") {
            for (size_t i = 0; i < v.count; ++i) {
                hot.set_param(v.offset + i, 1.0);
            }
        }
        if (v.name == "lm_head") {
            for (size_t i = 0; i < static_cast<size_t>(a.hidden_dim); ++i) {
                hot.set_param(v.offset + 5 * a.hidden_dim + i, 8.0);
            }
        }
    }
    std::vector<int> fives(10, 5);
    std::vector<PackItem> hot_items = {{0, prompt, fives}};
    const train::PackedBatch hot_batch = pack(hot_items, a.context_len);
    CHECK(train::sft_loss(hot, hot_batch) < 1e-9);

    // All-false mask is a degenerate batch.
    train::PackedBatch empty_mask = hot_batch;
    empty_mask.masked_tokens = 0;
    CHECK_THROWS_AS(train::sft_loss(hot, empty_mask), Error);
}

TEST_CASE("packing equivalence: packed loss equals unpacked token-weighted loss") {
    Rng rng(31);
    const Arch a = tiny_arch(48);
    for (int trial = 0; trial < 10; ++trial) {
        const ModelState m = ModelState::init(a, 100 + static_cast<uint64_t>(trial),
                                              Precision::high);
        const int n = 2 + static_cast<int>(rng.uniform_below(8));
        std::vector<std::vector<int>> prompts, answers;
        std::vector<PackItem> items;
        for (int i = 0; i < n; ++i) {
            prompts.push_back(rand_tokens(rng, 2 + static_cast<int>(rng.uniform_below(5)), 9));
            answers.push_back(rand_tokens(rng, 1 + static_cast<int>(rng.uniform_below(14)), 9));
        }
        for (int i = 0; i < n; ++i) {
            items.push_back({i, prompts[static_cast<size_t>(i)], answers[static_cast<size_t>(i)]});
        }
        const train::PackedBatch packed = pack(items, a.context_len);
        const double packed_loss = train::sft_loss(m, packed);

        // Reference: process each sample alone; token-weighted mean.
        double total_nll = 0;
        size_t total_tokens = 0;
        for (int i = 0; i < n; ++i) {
            std::vector<PackItem> single = {items[static_cast<size_t>(i)]};
            const train::PackedBatch one = pack(single, a.context_len);
            const double loss_i = train::sft_loss(m, one);
            total_nll += loss_i * static_cast<double>(one.masked_tokens);
            total_tokens += one.masked_tokens;
        }
        CHECK(packed_loss == doctest::Approx(total_nll / static_cast<double>(total_tokens))
                                 .epsilon(1e-6));
        CHECK(packed.masked_tokens == total_tokens);
    }
}

TEST_CASE("policy value: hand cases and length invariance") {
    // Pure log-space composition.
    const std::vector<double> two = {std::log(0.9), std::log(0.4)};
    CHECK(train::policy_value_from_logprobs(two) == doctest::Approx(0.6).epsilon(1e-12));
    const std::vector<double> one = {std::log(0.5)};
    CHECK(train::policy_value_from_logprobs(one) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(train::policy_value_from_logprobs(std::vector<double>{}), Error);

    // No underflow in log space at extreme lengths.
    const std::vector<double> long_half(10000, std::log(0.5));
    CHECK(train::policy_value_from_logprobs(long_half) == doctest::Approx(0.5).epsilon(1e-9));

    // Uniform model: policy value is 1/V independent of answer length.
    const Arch a = tiny_arch(80);
    ModelState uniform = ModelState::init(a, 5, Precision::high);
    uniform.fill_params(0.0);
    Rng rng(41);
    TokenSequence prompt;
    prompt.tokens = rand_tokens(rng, 3, a.vocab_size);
    prompt.role_split = 3;
    for (int len : {1, 2, 7, 40, 64}) {
        TokenSequence answer;
        answer.tokens = rand_tokens(rng, len, a.vocab_size);
        CHECK(train::policy_value(uniform, prompt, answer) ==
              doctest::Approx(1.0 / a.vocab_size).epsilon(1e-9));
    }
    TokenSequence empty;
    CHECK_THROWS_AS(train::policy_value(uniform, prompt, empty), Error);
}

TEST_CASE("rl losses: hand substitution and bounds") {
    const std::vector<int> rewards = {1, -1};
    const std::vector<double> pi = {0.6, 0.2};
    CHECK(train::rl_loss_value(rewards, pi) == doctest::Approx(-0.2));
    CHECK(train::rl_norm_loss_value(rewards, pi) == doctest::Approx(0.3));

    const std::vector<int> single = {1};
    const std::vector<double> point6 = {0.6};
    CHECK(train::rl_loss_value(single, point6) == doctest::Approx(-0.6));
    const std::vector<double> point1 = {1.0};
    CHECK(train::rl_norm_loss_value(single, point1) == doctest::Approx(0.0));

    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_below(16));
        std::vector<int> r(static_cast<size_t>(n));
        std::vector<double> p(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            r[static_cast<size_t>(i)] = rng.uniform_below(2) == 0 ? 1 : -1;
            p[static_cast<size_t>(i)] = 1e-9 + rng.next_double() * (1.0 - 1e-9);
        }
        const double loss = train::rl_loss_value(r, p);
        const double norm = train::rl_norm_loss_value(r, p);
        CHECK(loss >= -1.0);
        CHECK(loss <= 1.0);
        CHECK(norm >= 0.0);
        CHECK(norm <= 1.0);
    }
    CHECK_THROWS_AS(train::rl_loss_value(std::vector<int>{2}, std::vector<double>{0.5}), Error);
}

TEST_CASE("gradient identity: rl and rl_norm gradients agree and match FD") {
    Rng rng(55);
    const Arch a = tiny_arch(32);
    for (int trial = 0; trial < 5; ++trial) {
        ModelState m = ModelState::init(a, 200 + static_cast<uint64_t>(trial), Precision::high);
        std::vector<RewardedSample> batch;
        const int n = 2 + static_cast<int>(rng.uniform_below(4));
        for (int i = 0; i < n; ++i) {
            batch.push_back(make_sample(rng, a.vocab_size, 2 + static_cast<int>(rng.uniform_below(3)),
                                        1 + static_cast<int>(rng.uniform_below(8)),
                                        rng.uniform_below(2) == 0 ? 1 : -1));
        }

        model::TrainGraph g_rl(m);
        const train::RlBatchStats s_rl =
            train::rl_batch_gradients(g_rl, batch, train::RlLossVariant::rl, n);
        const std::vector<double> grad_rl = g_rl.grads();

        model::TrainGraph g_norm(m);
        const train::RlBatchStats s_norm =
            train::rl_batch_gradients(g_norm, batch, train::RlLossVariant::rl_norm, n);
        const std::vector<double> grad_norm = g_norm.grads();

        double max_rel = 0;
        for (size_t i = 0; i < grad_rl.size(); ++i) {
            const double denom = std::max({std::abs(grad_rl[i]), std::abs(grad_norm[i]), 1e-12});
            max_rel = std::max(max_rel, std::abs(grad_rl[i] - grad_norm[i]) / denom);
        }
        CHECK(max_rel < 1e-6);

        // Both value functions against finite differences of their own
        // formulas (independent of the shared gradient path).
        auto loss_rl = [&batch](const ModelState& state) {
            return train::rl_loss(state, batch);
        };
        auto loss_norm = [&batch](const ModelState& state) {
            return train::rl_norm_loss(state, batch);
        };
        const model::FdReport fd_rl = model::finite_diff_compare(m, loss_rl, grad_rl, 1e-4);
        const model::FdReport fd_norm =
            model::finite_diff_compare(m, loss_norm, grad_norm, 1e-4);
        CHECK(fd_rl.max_rel_err < 1e-3);
        CHECK(fd_norm.max_rel_err < 1e-3);

        CHECK(s_rl.rl_loss == doctest::Approx(s_norm.rl_loss));
        CHECK(s_rl.rl_norm_loss >= 0.0);
    }
}

TEST_CASE("train_sft: loss descends and resume reproduces the run exactly") {
    const Arch a = tiny_arch(48);
    Rng rng(3);
    std::vector<train::GoldSample> gold;
    for (int i = 0; i < 24; ++i) {
        train::GoldSample s;
        s.question_id = "g" + std::to_string(i);
        s.prompt.tokens = rand_tokens(rng, 3, a.vocab_size);
        s.prompt.role_split = 3;
        // Learnable structure: answer repeats one token.
        const int tok = static_cast<int>(rng.uniform_below(a.vocab_size));
        s.answer.tokens.assign(6, tok);
        gold.push_back(std::move(s));
    }

    train::SftConfig cfg;
    cfg.batch_samples = 8;
    cfg.epochs = 4;
    cfg.lr_max = 3e-3;
    cfg.lr_min = 1e-5;
    cfg.warmup_ratio = 0.1;
    cfg.micro_batch_streams = 1;
    cfg.log_every = 0;
    cfg.checkpoint_every = 6;
    cfg.shuffle_seed = 11;
    cfg.out_dir = "/tmp/rlpipe_test_sft";
    fs::remove_all(cfg.out_dir);

    ModelState m = ModelState::init(a, 9, Precision::standard);
    const train::TrainResult r = train_sft(m, gold, cfg);
    CHECK(r.final_loss < r.first_loss);
    CHECK(r.steps == 12);

    // Resume from the step-6 checkpoint into a fresh directory.
    ModelState m2 = ModelState::init(a, 9, Precision::standard);
    train::SftConfig cfg2 = cfg;
    cfg2.out_dir = "/tmp/rlpipe_test_sft_resume";
    cfg2.resume_from = cfg.out_dir + "/ckpt-step-000006.bin";
    fs::remove_all(cfg2.out_dir);
    const train::TrainResult r2 = train_sft(m2, gold, cfg2);
    CHECK(m2.content_hash() == m.content_hash());
    CHECK(r2.final_loss == doctest::Approx(r.final_loss).epsilon(1e-12));

    // Metrics tail of the resumed run equals the uninterrupted run's tail.
    auto read_lines = [](const std::string& path) {
        std::vector<std::string> lines;
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) {
            lines.push_back(line);
        }
        return lines;
    };
    const auto full = read_lines(cfg.out_dir + "/metrics.jsonl");
    const auto resumed = read_lines(cfg2.out_dir + "/metrics.jsonl");
    REQUIRE(full.size() == 12);
    REQUIRE(resumed.size() == 6);
    for (size_t i = 0; i < resumed.size(); ++i) {
        CHECK(resumed[i] == full[6 + i]);
    }

    // Worker count must not change the trajectory.
    ModelState m3 = ModelState::init(a, 9, Precision::standard);
    train::SftConfig cfg3 = cfg;
    cfg3.out_dir = "/tmp/rlpipe_test_sft_w2";
    cfg3.workers = 2;
    fs::remove_all(cfg3.out_dir);
    train_sft(m3, gold, cfg3);
    CHECK(m3.content_hash() == m.content_hash());

    fs::remove_all(cfg.out_dir);
    fs::remove_all(cfg2.out_dir);
    fs::remove_all(cfg3.out_dir);
}

TEST_CASE("train_rl: runs, keeps the monitor non-negative, moves pi the right way") {
    const Arch a = tiny_arch(48);
    Rng rng(13);
    data::RlDataset ds;
    for (int i = 0; i < 24; ++i) {
        RewardedSample s = make_sample(rng, a.vocab_size, 3, 6, i % 2 == 0 ? 1 : -1);
        s.question_id = "q" + std::to_string(i);
        ds.samples.push_back(std::move(s));
    }
    ds.counts.total = 24;
    ds.counts.positive = 12;
    ds.counts.negative = 12;

    train::RlConfig cfg;
    cfg.steps = 10;
    cfg.batch_samples = 8;
    cfg.lr_max = 1e-3;
    cfg.lr_min = 1e-5;
    cfg.micro_batch_samples = 3;
    cfg.log_every = 0;
    cfg.shuffle_seed = 5;
    cfg.out_dir = "/tmp/rlpipe_test_rl";
    fs::remove_all(cfg.out_dir);

    ModelState m = ModelState::init(a, 10, Precision::standard);
    const train::TrainResult r = train_rl(m, ds, cfg);
    CHECK(r.steps == 10);

    std::ifstream in(cfg.out_dir + "/metrics.jsonl");
    std::string line;
    double first_pi_pos = -1, last_pi_pos = 0, first_pi_neg = -1, last_pi_neg = 0;
    int lines = 0;
    while (std::getline(in, line)) {
        const nlohmann::json j = nlohmann::json::parse(line);
        CHECK(j.at("rl_norm_loss").get<double>() >= 0.0);
        if (first_pi_pos < 0) {
            first_pi_pos = j.at("mean_pi_pos").get<double>();
            first_pi_neg = j.at("mean_pi_neg").get<double>();
        }
        last_pi_pos = j.at("mean_pi_pos").get<double>();
        last_pi_neg = j.at("mean_pi_neg").get<double>();
        ++lines;
    }
    CHECK(lines == 10);
    // Direction of motion on this synthetic set.
    CHECK(last_pi_pos > first_pi_pos);
    CHECK(last_pi_neg < first_pi_neg);

    // Mixed-sign precondition.
    data::RlDataset all_pos = ds;
    for (auto& s : all_pos.samples) {
        s.reward = 1;
    }
    all_pos.counts.positive = 24;
    all_pos.counts.negative = 0;
    ModelState m2 = ModelState::init(a, 10, Precision::standard);
    CHECK_THROWS_AS(train_rl(m2, all_pos, cfg), Error);

    fs::remove_all(cfg.out_dir);
}

TEST_CASE("optimizing rl vs rl_norm yields the same parameter trajectory") {
    const Arch a = tiny_arch(48);
    Rng rng(17);
    data::RlDataset ds;
    for (int i = 0; i < 12; ++i) {
        RewardedSample s = make_sample(rng, a.vocab_size, 3, 5, i % 3 == 0 ? 1 : -1);
        s.question_id = "q" + std::to_string(i);
        ds.samples.push_back(std::move(s));
    }
    ds.counts.total = 12;
    ds.counts.positive = 4;
    ds.counts.negative = 8;

    auto run = [&](train::RlLossVariant variant, const std::string& dir) {
        train::RlConfig cfg;
        cfg.steps = 5;
        cfg.batch_samples = 6;
        cfg.lr_max = 1e-3;
        cfg.lr_min = 1e-5;
        cfg.variant = variant;
        cfg.log_every = 0;
        cfg.shuffle_seed = 5;
        cfg.out_dir = dir;
        fs::remove_all(dir);
        ModelState m = ModelState::init(a, 30, Precision::high);
        train_rl(m, ds, cfg);
        fs::remove_all(dir);
        return m.params_as_double();
    };
    const auto params_rl = run(train::RlLossVariant::rl, "/tmp/rlpipe_var_a");
    const auto params_norm = run(train::RlLossVariant::rl_norm, "/tmp/rlpipe_var_b");
    REQUIRE(params_rl.size() == params_norm.size());
    double max_rel = 0;
    for (size_t i = 0; i < params_rl.size(); ++i) {
        const double denom = std::max({std::abs(params_rl[i]), std::abs(params_norm[i]), 1e-12});
        max_rel = std::max(max_rel, std::abs(params_rl[i] - params_norm[i]) / denom);
    }
    CHECK(max_rel < 1e-6);
}
