#include "rlpipe/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "model_engine.hpp"
#include "rlpipe/errors.hpp"
#include "rlpipe/hash.hpp"
#include "rlpipe/rng.hpp"

namespace rlpipe::model {

const char* to_string(Precision p) {
    return p == Precision::high ? "high" : "standard";
}

Precision precision_from_string(const std::string& s) {
    if (s == "high") {
        return Precision::high;
    }
    if (s == "standard") {
        return Precision::standard;
    }
    raise(ErrorClass::config, "unknown precision mode: " + s);
}

void validate_arch(const Arch& a) {
    if (a.vocab_size < 2 || a.context_len < 2 || a.layers < 1 || a.hidden_dim < 1 ||
        a.heads < 1) {
        raise(ErrorClass::config, "arch fields must be positive (vocab >= 2, context >= 2)");
    }
    if (a.hidden_dim % a.heads != 0) {
        raise(ErrorClass::config, "hidden_dim must be divisible by heads");
    }
}

namespace detail {

std::vector<ParamView> make_layout(const Arch& a) {
    const Offsets off = Offsets::make(a);
    const size_t h = static_cast<size_t>(a.hidden_dim);
    const size_t v = static_cast<size_t>(a.vocab_size);
    std::vector<ParamView> out;
    out.push_back({"wte", off.wte, v * h});
    out.push_back({"wpe", off.wpe, static_cast<size_t>(a.context_len) * h});
    for (int l = 0; l < a.layers; ++l) {
        const auto& lo = off.layer[static_cast<size_t>(l)];
        const std::string suffix = "." + std::to_string(l);
        out.push_back({"ln1.g" + suffix, lo.ln1_g, h});
        out.push_back({"ln1.b" + suffix, lo.ln1_b, h});
        out.push_back({"attn.wq" + suffix, lo.wq, h * h});
        out.push_back({"attn.wk" + suffix, lo.wk, h * h});
        out.push_back({"attn.wv" + suffix, lo.wv, h * h});
        out.push_back({"attn.wo" + suffix, lo.wo, h * h});
        out.push_back({"ln2.g" + suffix, lo.ln2_g, h});
        out.push_back({"ln2.b" + suffix, lo.ln2_b, h});
        out.push_back({"mlp.fc1" + suffix, lo.fc1, 4 * h * h});
        out.push_back({"mlp.fc2" + suffix, lo.fc2, 4 * h * h});
    }
    out.push_back({"lnf.g", off.lnf_g, h});
    out.push_back({"lnf.b", off.lnf_b, h});
    out.push_back({"lm_head", off.lm_head, v * h});
    return out;
}

} // namespace detail

ModelState ModelState::init(const Arch& arch, uint64_t seed, Precision precision) {
    validate_arch(arch);
    ModelState m;
    m.arch_ = arch;
    m.precision_ = precision;
    m.layout_ = detail::make_layout(arch);
    const detail::Offsets off = detail::Offsets::make(arch);
    m.count_ = off.total;

    std::vector<double> vals(m.count_, 0.0);
    Rng rng(seed);
    const double std_base = 0.02;
    const double std_head = 0.02 / static_cast<double>(arch.hidden_dim);
    auto fill_gauss = [&](size_t offset, size_t count, double sd) {
        for (size_t i = 0; i < count; ++i) {
            vals[offset + i] = sd * rng.next_gaussian();
        }
    };
    const size_t h = static_cast<size_t>(arch.hidden_dim);
    fill_gauss(off.wte, static_cast<size_t>(arch.vocab_size) * h, std_base);
    fill_gauss(off.wpe, static_cast<size_t>(arch.context_len) * h, std_base);
    for (const auto& lo : off.layer) {
        std::fill_n(vals.begin() + static_cast<long>(lo.ln1_g), h, 1.0);
        fill_gauss(lo.wq, h * h, std_base);
        fill_gauss(lo.wk, h * h, std_base);
        fill_gauss(lo.wv, h * h, std_base);
        fill_gauss(lo.wo, h * h, std_base);
        std::fill_n(vals.begin() + static_cast<long>(lo.ln2_g), h, 1.0);
        fill_gauss(lo.fc1, 4 * h * h, std_base);
        fill_gauss(lo.fc2, 4 * h * h, std_base);
    }
    std::fill_n(vals.begin() + static_cast<long>(off.lnf_g), h, 1.0);
    fill_gauss(off.lm_head, static_cast<size_t>(arch.vocab_size) * h, std_head);

    if (precision == Precision::high) {
        m.p64_ = std::move(vals);
    } else {
        m.p32_.resize(m.count_);
        for (size_t i = 0; i < m.count_; ++i) {
            m.p32_[i] = static_cast<float>(vals[i]);
        }
    }
    return m;
}

double ModelState::param(size_t index) const {
    return precision_ == Precision::high ? p64_[index]
                                         : static_cast<double>(p32_[index]);
}

void ModelState::set_param(size_t index, double value) {
    if (precision_ == Precision::high) {
        p64_[index] = value;
    } else {
        p32_[index] = static_cast<float>(value);
    }
}

std::vector<double> ModelState::params_as_double() const {
    std::vector<double> out(count_);
    if (precision_ == Precision::high) {
        out = p64_;
    } else {
        for (size_t i = 0; i < count_; ++i) {
            out[i] = static_cast<double>(p32_[i]);
        }
    }
    return out;
}

void ModelState::set_params_from_double(std::span<const double> values) {
    if (values.size() != count_) {
        raise(ErrorClass::config, "parameter vector size mismatch");
    }
    if (precision_ == Precision::high) {
        p64_.assign(values.begin(), values.end());
    } else {
        p32_.resize(count_);
        for (size_t i = 0; i < count_; ++i) {
            p32_[i] = static_cast<float>(values[i]);
        }
    }
}

void ModelState::fill_params(double value) {
    if (precision_ == Precision::high) {
        std::fill(p64_.begin(), p64_.end(), value);
    } else {
        std::fill(p32_.begin(), p32_.end(), static_cast<float>(value));
    }
}

bool ModelState::params_finite() const {
    if (precision_ == Precision::high) {
        return std::all_of(p64_.begin(), p64_.end(),
                           [](double v) { return std::isfinite(v); });
    }
    return std::all_of(p32_.begin(), p32_.end(),
                       [](float v) { return std::isfinite(v); });
}

uint64_t ModelState::content_hash() const {
    std::string bytes;
    bytes.reserve(count_ * sizeof(double) + 64);
    auto push = [&bytes](const void* p, size_t n) {
        bytes.append(static_cast<const char*>(p), n);
    };
    push(&arch_, sizeof(arch_));
    const int prec = precision_ == Precision::high ? 0 : 1;
    push(&prec, sizeof(prec));
    if (precision_ == Precision::high) {
        push(p64_.data(), p64_.size() * sizeof(double));
    } else {
        push(p32_.data(), p32_.size() * sizeof(float));
    }
    return fnv1a64(bytes);
}

OwnedStream make_plain_stream(std::span<const int> tokens) {
    OwnedStream s;
    s.tokens.assign(tokens.begin(), tokens.end());
    s.pos.resize(tokens.size());
    s.segment.assign(tokens.size(), 0);
    for (size_t i = 0; i < tokens.size(); ++i) {
        s.pos[i] = static_cast<int>(i);
    }
    return s;
}

// ---------------------------------------------------------------------------
// forward_logprobs via the KV session (streaming; no activation storage).

namespace {

template <class F>
std::vector<double> score_sequence(const Arch& arch, const F* params,
                                   std::span<const int> tokens) {
    detail::KvSession<F> session(arch, params);
    std::vector<double> out(tokens.size(), 0.0);
    std::span<const double> logits = session.feed(tokens[0]);
    for (size_t t = 1; t < tokens.size(); ++t) {
        double maxl = logits[0];
        for (double z : logits) {
            maxl = std::max(maxl, z);
        }
        double sum = 0.0;
        for (double z : logits) {
            sum += std::exp(z - maxl);
        }
        out[t] = logits[static_cast<size_t>(tokens[t])] - (maxl + std::log(sum));
        logits = session.feed(tokens[static_cast<size_t>(t)]);
    }
    return out;
}

} // namespace

std::vector<double> forward_logprobs(const ModelState& m, const TokenSequence& seq) {
    if (seq.size() < 2) {
        raise(ErrorClass::config, "forward_logprobs needs a sequence of length >= 2");
    }
    if (seq.size() > m.arch().context_len) {
        raise(ErrorClass::config, "sequence exceeds context length");
    }
    validate_sequence(seq, m.arch().vocab_size, m.arch().context_len);
    if (m.precision() == Precision::high) {
        return score_sequence<double>(m.arch(), m.f64().data(), seq.tokens);
    }
    return score_sequence<float>(m.arch(), m.f32().data(), seq.tokens);
}

// ---------------------------------------------------------------------------
// InferenceSession

struct InferenceSession::Impl {
    const ModelState* model;
    std::unique_ptr<detail::KvSession<float>> s32;
    std::unique_ptr<detail::KvSession<double>> s64;

    explicit Impl(const ModelState& m) : model(&m) {
        if (m.precision() == Precision::high) {
            s64 = std::make_unique<detail::KvSession<double>>(m.arch(), m.f64().data());
        } else {
            s32 = std::make_unique<detail::KvSession<float>>(m.arch(), m.f32().data());
        }
    }
};

InferenceSession::InferenceSession(const ModelState& m)
    : impl_(std::make_unique<Impl>(m)) {}
InferenceSession::~InferenceSession() = default;
InferenceSession::InferenceSession(InferenceSession&&) noexcept = default;
InferenceSession& InferenceSession::operator=(InferenceSession&&) noexcept = default;

void InferenceSession::reset() {
    if (impl_->s64) {
        impl_->s64->reset();
    } else {
        impl_->s32->reset();
    }
}

int InferenceSession::position() const {
    return impl_->s64 ? impl_->s64->position() : impl_->s32->position();
}

std::span<const double> InferenceSession::feed(int token) {
    return impl_->s64 ? impl_->s64->feed(token) : impl_->s32->feed(token);
}

// ---------------------------------------------------------------------------
// TrainGraph

namespace {

template <class F>
struct GraphImpl {
    Arch arch;
    const F* params;
    detail::Engine<F> engine;
    std::vector<detail::StreamCache<F>> caches;
    size_t used = 0;
    std::vector<F> grads;
    bool did_backward = false;

    GraphImpl(const Arch& a, const F* p)
        : arch(a), params(p), engine(a, p),
          grads(detail::Offsets::make(a).total, F(0)) {}

    std::vector<double> forward(const StreamView& sv) {
        if (used == caches.size()) {
            caches.emplace_back();
        }
        std::vector<double> logprobs;
        engine.forward_stream(sv, caches[used], &logprobs);
        ++used;
        return logprobs;
    }

    void backward(const std::vector<std::vector<double>>& weights) {
        if (used == 0) {
            raise(ErrorClass::config, "TrainGraph::backward called before forward");
        }
        if (weights.size() != used) {
            raise(ErrorClass::config, "TrainGraph::backward weight count mismatch");
        }
        for (size_t s = 0; s < used; ++s) {
            if (weights[s].size() != static_cast<size_t>(caches[s].T)) {
                raise(ErrorClass::config, "TrainGraph::backward weight length mismatch");
            }
            engine.backward_stream(caches[s], weights[s], grads.data());
        }
        did_backward = true;
    }

    void reset() {
        used = 0;
        did_backward = false;
        std::fill(grads.begin(), grads.end(), F(0));
    }
};

} // namespace

struct TrainGraph::Impl {
    std::unique_ptr<GraphImpl<float>> g32;
    std::unique_ptr<GraphImpl<double>> g64;

    explicit Impl(const ModelState& m) {
        if (m.precision() == Precision::high) {
            g64 = std::make_unique<GraphImpl<double>>(m.arch(), m.f64().data());
        } else {
            g32 = std::make_unique<GraphImpl<float>>(m.arch(), m.f32().data());
        }
    }
};

TrainGraph::TrainGraph(const ModelState& m) : impl_(std::make_unique<Impl>(m)) {}
TrainGraph::~TrainGraph() = default;
TrainGraph::TrainGraph(TrainGraph&&) noexcept = default;
TrainGraph& TrainGraph::operator=(TrainGraph&&) noexcept = default;

std::vector<double> TrainGraph::forward(const StreamView& sv) {
    if (sv.size() < 1 || sv.tokens.size() != sv.pos.size() ||
        sv.tokens.size() != sv.segment.size()) {
        raise(ErrorClass::config, "malformed stream view");
    }
    const Arch& a = impl_->g64 ? impl_->g64->arch : impl_->g32->arch;
    for (int t = 0; t < sv.size(); ++t) {
        if (sv.tokens[static_cast<size_t>(t)] < 0 ||
            sv.tokens[static_cast<size_t>(t)] >= a.vocab_size) {
            raise(ErrorClass::config, "token id out of vocabulary bounds");
        }
        if (sv.pos[static_cast<size_t>(t)] < 0 ||
            sv.pos[static_cast<size_t>(t)] >= a.context_len) {
            raise(ErrorClass::config, "stream segment exceeds context length");
        }
        if (sv.pos[static_cast<size_t>(t)] > 0 &&
            (t == 0 || sv.segment[static_cast<size_t>(t)] != sv.segment[static_cast<size_t>(t - 1)] ||
             sv.pos[static_cast<size_t>(t)] != sv.pos[static_cast<size_t>(t - 1)] + 1)) {
            raise(ErrorClass::config, "stream positions must be contiguous within segments");
        }
    }
    return impl_->g64 ? impl_->g64->forward(sv) : impl_->g32->forward(sv);
}

size_t TrainGraph::recorded_streams() const {
    return impl_->g64 ? impl_->g64->used : impl_->g32->used;
}

bool TrainGraph::has_forward() const { return recorded_streams() > 0; }

void TrainGraph::backward(const std::vector<std::vector<double>>& weights) {
    if (impl_->g64) {
        impl_->g64->backward(weights);
    } else {
        impl_->g32->backward(weights);
    }
}

std::vector<double> TrainGraph::grads() const {
    if (impl_->g64) {
        return impl_->g64->grads;
    }
    std::vector<double> out(impl_->g32->grads.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<double>(impl_->g32->grads[i]);
    }
    return out;
}

void TrainGraph::reset() {
    if (impl_->g64) {
        impl_->g64->reset();
    } else {
        impl_->g32->reset();
    }
}

} // namespace rlpipe::model
