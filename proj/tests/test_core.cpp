#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "rlpipe/checkpoint.hpp"
#include "rlpipe/errors.hpp"
#include "rlpipe/hash.hpp"
#include "rlpipe/optimizer.hpp"
#include "rlpipe/rng.hpp"
#include "rlpipe/schedule.hpp"
#include "rlpipe/tokens.hpp"

using namespace rlpipe;

TEST_CASE("rng determinism and uniform bounds") {
    Rng a(123), b(123), c(124);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    bool differs = false;
    Rng a2(123);
    for (int i = 0; i < 10; ++i) {
        if (a2.next_u64() != c.next_u64()) {
            differs = true;
        }
    }
    CHECK(differs);

    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        const double d = r.next_double();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
        CHECK(r.uniform_below(17) < 17);
    }
}

TEST_CASE("uniform_below covers the range without obvious bias") {
    Rng r(99);
    std::array<int, 5> counts{};
    for (int i = 0; i < 50000; ++i) {
        counts[r.uniform_below(5)]++;
    }
    for (int c : counts) {
        CHECK(c > 9000);
        CHECK(c < 11000);
    }
}

TEST_CASE("derive_seed separates tags and indices") {
    std::set<uint64_t> seeds;
    for (int i = 0; i < 100; ++i) {
        seeds.insert(derive_seed(42, "a", static_cast<uint64_t>(i)));
    }
    seeds.insert(derive_seed(42, "b", 0));
    seeds.insert(derive_seed(43, "a", 0));
    CHECK(seeds.size() == 102);
}

TEST_CASE("fnv1a64 known value and hex") {
    // Standard FNV-1a test vector.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(to_hex(0xcbf29ce484222325ULL) == "cbf29ce484222325");
}

TEST_CASE("token names and validation") {
    CHECK(std::string(vocab::token_name(vocab::kThink)) == "<think>");
    CHECK(vocab::digit_value(vocab::digit(7)) == 7);
    CHECK(vocab::is_digit(vocab::digit(0)));
    CHECK(!vocab::is_digit(vocab::kPlus));

    TokenSequence seq;
    seq.tokens = {vocab::kBos, vocab::digit(3), vocab::kThink};
    seq.role_split = 3;
    CHECK_NOTHROW(validate_sequence(seq, vocab::kAlphabetSize, 16));
    seq.tokens.push_back(99);
    CHECK_THROWS_AS(validate_sequence(seq, vocab::kAlphabetSize, 16), Error);
}

TEST_CASE("lr schedule endpoints and shape") {
    LrSchedule s{1e-3, 1e-7, 1000, 0.0};
    CHECK(lr_at(s, 0) == doctest::Approx(1e-3));
    CHECK(lr_at(s, 1000) == doctest::Approx(1e-7));
    // Closed form: cos(pi/2) = 0 at the midpoint.
    CHECK(lr_at(s, 500) == doctest::Approx((1e-3 + 1e-7) / 2));

    LrSchedule w{6e-5, 1e-7, 2000, 0.05};
    CHECK(w.warmup_steps() == 100);
    CHECK(lr_at(w, 0) == doctest::Approx(0.0));
    CHECK(lr_at(w, 100) == doctest::Approx(6e-5));
    CHECK(lr_at(w, 2000) == doctest::Approx(1e-7));
    double prev = lr_at(w, 100);
    for (int64_t step = 101; step <= 2000; ++step) {
        const double cur = lr_at(w, step);
        CHECK(cur <= prev + 1e-18);
        prev = cur;
    }
    CHECK_THROWS_AS(lr_at(w, 2001), Error);
    CHECK_THROWS_AS(lr_at(w, -1), Error);
}

TEST_CASE("lr schedule endpoint properties over random shapes") {
    Rng r(5);
    for (int trial = 0; trial < 50; ++trial) {
        LrSchedule s;
        s.lr_max = 1e-5 + r.next_double() * 1e-2;
        s.lr_min = s.lr_max * r.next_double() * 0.1;
        s.total_steps = 10 + static_cast<int64_t>(r.uniform_below(5000));
        s.warmup_ratio = r.next_double() * 0.3;
        CHECK(lr_at(s, s.total_steps) == doctest::Approx(s.lr_min));
        const int64_t warmup = s.warmup_steps();
        if (warmup > 0 && warmup < s.total_steps) {
            CHECK(lr_at(s, warmup) == doctest::Approx(s.lr_max));
        }
        double prev = lr_at(s, warmup);
        for (int64_t step = warmup + 1; step <= s.total_steps; ++step) {
            const double cur = lr_at(s, step);
            CHECK(cur <= prev + 1e-18);
            prev = cur;
        }
    }
}

namespace {

// Hand-rolled AdamW recurrence on a single scalar, independent of the
// production implementation.
double adamw_scalar_oracle(double theta, std::span<const double> grads, double lr,
                           double beta1, double beta2, double wd, double eps) {
    double m = 0.0, v = 0.0;
    for (size_t t = 0; t < grads.size(); ++t) {
        const double g = grads[t];
        m = beta1 * m + (1 - beta1) * g;
        v = beta2 * v + (1 - beta2) * g * g;
        const double mhat = m / (1 - std::pow(beta1, static_cast<double>(t + 1)));
        const double vhat = v / (1 - std::pow(beta2, static_cast<double>(t + 1)));
        theta -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta);
    }
    return theta;
}

model::ModelState tiny_model(model::Precision p, uint64_t seed = 3) {
    model::Arch a;
    a.vocab_size = 8;
    a.context_len = 8;
    a.layers = 1;
    a.hidden_dim = 8;
    a.heads = 2;
    return model::ModelState::init(a, seed, p);
}

} // namespace

TEST_CASE("adamw fixed points and decoupled decay") {
    model::ModelState m = tiny_model(model::Precision::high);
    const std::vector<double> before = m.params_as_double();
    model::OptimizerState opt = model::OptimizerState::init(m, 0.9, 0.95, 0.0);
    std::vector<double> zeros(m.param_count(), 0.0);

    adamw_step(m, opt, zeros, 1e-2);
    const std::vector<double> after = m.params_as_double();
    for (size_t i = 0; i < before.size(); ++i) {
        CHECK(after[i] == doctest::Approx(before[i]));
    }
    CHECK(opt.step == 1);

    // Zero grads with weight decay: pure multiplicative shrink.
    model::OptimizerState opt_wd = model::OptimizerState::init(m, 0.9, 0.95, 0.1);
    const std::vector<double> base = m.params_as_double();
    adamw_step(m, opt_wd, zeros, 0.5);
    const std::vector<double> decayed = m.params_as_double();
    for (size_t i = 0; i < base.size(); ++i) {
        CHECK(decayed[i] == doctest::Approx(base[i] * (1.0 - 0.5 * 0.1)));
    }
}

TEST_CASE("adamw matches the scalar recurrence oracle") {
    model::ModelState m = tiny_model(model::Precision::high);
    model::OptimizerState opt = model::OptimizerState::init(m, 0.9, 0.95, 0.07);
    const size_t probe = 11;
    const double theta0 = m.param(probe);

    const std::vector<double> grad_seq = {0.3, -1.2, 0.05};
    for (double g : grad_seq) {
        std::vector<double> grads(m.param_count(), 0.0);
        grads[probe] = g;
        adamw_step(m, opt, grads, 1e-2);
    }
    // Other coordinates saw zero grads and only decay; the probed coordinate
    // must follow the scalar recurrence with decay folded in.
    double expect = theta0;
    {
        double mm = 0.0, vv = 0.0;
        for (size_t t = 0; t < grad_seq.size(); ++t) {
            const double g = grad_seq[t];
            mm = 0.9 * mm + 0.1 * g;
            vv = 0.95 * vv + 0.05 * g * g;
            const double mhat = mm / (1 - std::pow(0.9, static_cast<double>(t + 1)));
            const double vhat = vv / (1 - std::pow(0.95, static_cast<double>(t + 1)));
            expect -= 1e-2 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.07 * expect);
        }
    }
    CHECK(m.param(probe) == doctest::Approx(expect).epsilon(1e-12));

    // Pure single-scalar oracle as well (no decay interference).
    CHECK(adamw_scalar_oracle(1.0, std::vector<double>{0.0, 0.0}, 0.1, 0.9, 0.95, 0.0, 1e-8) ==
          doctest::Approx(1.0));
}

TEST_CASE("adamw rejects non-finite gradients without touching state") {
    model::ModelState m = tiny_model(model::Precision::standard);
    model::OptimizerState opt = model::OptimizerState::init(m, 0.9, 0.95, 0.0);
    const std::vector<double> before = m.params_as_double();
    std::vector<double> grads(m.param_count(), 0.0);
    grads[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adamw_step(m, opt, grads, 1e-3), Error);
    CHECK(opt.step == 0);
    CHECK(m.params_as_double() == before);
}

TEST_CASE("grad clipping scales to the target norm") {
    std::vector<double> g = {3.0, 4.0};
    model::clip_grad_norm(g, 1.0);
    CHECK(model::global_grad_norm(g) == doctest::Approx(1.0));
    std::vector<double> small = {0.3, 0.4};
    model::clip_grad_norm(small, 1.0);
    CHECK(small[0] == doctest::Approx(0.3));
}

TEST_CASE("checkpoint round trip preserves everything") {
    const std::string path = "/tmp/rlpipe_test_ckpt.bin";
    model::ModelState m = tiny_model(model::Precision::standard, 17);
    model::OptimizerState opt = model::OptimizerState::init(m, 0.9, 0.95, 0.1);
    std::vector<double> grads(m.param_count(), 0.01);
    adamw_step(m, opt, grads, 1e-3);

    const std::array<uint64_t, 4> rng_state{1, 2, 3, 4};
    model::save_checkpoint(path, m, &opt, 7, rng_state);

    const model::Checkpoint ck = model::load_checkpoint(path);
    CHECK(ck.step == 7);
    CHECK(ck.rng_state == rng_state);
    CHECK(ck.model.precision() == model::Precision::standard);
    CHECK(ck.model.params_as_double() == m.params_as_double());
    REQUIRE(ck.opt.has_value());
    CHECK(ck.opt->step == 1);
    CHECK(ck.opt->weight_decay == doctest::Approx(0.1));
    CHECK(ck.opt->m32 == opt.m32);
    CHECK(ck.opt->v32 == opt.v32);
    CHECK(ck.checkpoint_id == model::checkpoint_id_of(path));

    // Arch mismatch is a provenance error.
    model::Arch other = m.arch();
    other.hidden_dim = 16;
    CHECK_THROWS_AS(model::load_checkpoint(path, &other), Error);
    std::filesystem::remove(path);
}

TEST_CASE("error classes map to distinct exit codes") {
    std::set<int> codes;
    for (ErrorClass c : {ErrorClass::config, ErrorClass::provenance, ErrorClass::contamination,
                         ErrorClass::numeric, ErrorClass::empty_dataset}) {
        codes.insert(exit_code(c));
        CHECK(exit_code(c) != 0);
        CHECK(exit_code(c) != 1);
    }
    CHECK(codes.size() == 5);
    const Error e(ErrorClass::config, "boom");
    CHECK(e.diagnostic() ==
          "rlpipe: error class=config code=2 msg=\"boom\"");
}
