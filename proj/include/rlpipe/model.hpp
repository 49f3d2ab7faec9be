#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rlpipe/tokens.hpp"

namespace rlpipe::model {

// Decoder-only transformer shape. Parameter shapes are fully determined by
// these fields; they are immutable once a ModelState exists.
struct Arch {
    int vocab_size = vocab::kAlphabetSize;
    int context_len = 256;
    int layers = 2;
    int hidden_dim = 128;
    int heads = 4;

    bool operator==(const Arch&) const = default;
};

// standard = 32-bit compute, high = 64-bit compute (used for gradient checks
// and anywhere bit headroom matters more than speed).
enum class Precision { high, standard };

const char* to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct ParamView {
    std::string name;
    size_t offset = 0;
    size_t count = 0;
};

class ModelState {
public:
    ModelState() = default;

    // Deterministic init: same (arch, seed) gives bit-identical parameters.
    // Weights are N(0, 0.02^2) except the output head, which is scaled down
    // by 1/hidden_dim so a fresh model's next-token distribution is near
    // uniform. LayerNorm gains start at 1, biases at 0.
    static ModelState init(const Arch& arch, uint64_t seed,
                           Precision precision = Precision::standard);

    const Arch& arch() const { return arch_; }
    Precision precision() const { return precision_; }
    size_t param_count() const { return count_; }
    const std::vector<ParamView>& layout() const { return layout_; }

    double param(size_t index) const;
    void set_param(size_t index, double value);
    std::vector<double> params_as_double() const;
    void set_params_from_double(std::span<const double> values);
    void fill_params(double value);
    bool params_finite() const;

    // Fingerprint over arch + parameter bits; equal states hash equal.
    uint64_t content_hash() const;

    // Raw storage for the active precision (the other vector is empty).
    std::vector<float>& f32() { return p32_; }
    const std::vector<float>& f32() const { return p32_; }
    std::vector<double>& f64() { return p64_; }
    const std::vector<double>& f64() const { return p64_; }

private:
    Arch arch_{};
    Precision precision_ = Precision::standard;
    std::vector<ParamView> layout_;
    size_t count_ = 0;
    std::vector<float> p32_;
    std::vector<double> p64_;
};

void validate_arch(const Arch& arch);

// A (possibly packed) token stream. pos restarts at 0 for every segment and
// attention never crosses segment boundaries, so packed training batches and
// individually processed sequences compute identical quantities.
struct StreamView {
    std::span<const int> tokens;
    std::span<const int> pos;
    std::span<const int> segment;

    int size() const { return static_cast<int>(tokens.size()); }
};

// Owning helper for the common single-segment case.
struct OwnedStream {
    std::vector<int> tokens;
    std::vector<int> pos;
    std::vector<int> segment;

    StreamView view() const { return StreamView{tokens, pos, segment}; }
};

OwnedStream make_plain_stream(std::span<const int> tokens);

// Log-probability of each actual token given its strict in-segment prefix.
// Slot t holds log p(tokens[t] | tokens[<t]); slot 0 is 0 (nothing predicts
// the first token). Sequence must have >= 2 tokens and fit the context.
std::vector<double> forward_logprobs(const ModelState& m, const TokenSequence& seq);

// Incremental forward pass with a KV cache; the unit of decoding and
// sequence scoring. Read-only over the model, so any number of sessions may
// run concurrently against one snapshot.
class InferenceSession {
public:
    explicit InferenceSession(const ModelState& m);
    ~InferenceSession();
    InferenceSession(InferenceSession&&) noexcept;
    InferenceSession& operator=(InferenceSession&&) noexcept;

    void reset();
    int position() const;

    // Feeds one token; returns logits over the vocabulary predicting the
    // next token. The span stays valid until the next feed/reset.
    std::span<const double> feed(int token);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Records forward activations for a batch of streams and computes exact
// reverse-mode gradients of any scalar of the form
//     L = sum over recorded positions of w[t] * log p(tokens[t] | prefix),
// which covers every training objective in this project (the per-position
// weights are supplied to backward()).
class TrainGraph {
public:
    explicit TrainGraph(const ModelState& m);
    ~TrainGraph();
    TrainGraph(TrainGraph&&) noexcept;
    TrainGraph& operator=(TrainGraph&&) noexcept;

    // Runs and records one stream; returns per-position log-probabilities
    // (same indexing as forward_logprobs; slots with pos[t]==0 are 0).
    std::vector<double> forward(const StreamView& sv);

    size_t recorded_streams() const;
    bool has_forward() const;

    // weights[s][t] = dL/d(logprob at position t of recorded stream s).
    // Accumulates parameter gradients; callable once per set of forwards.
    void backward(const std::vector<std::vector<double>>& weights);

    // Accumulated gradients, widened to double. Zero until backward ran.
    std::vector<double> grads() const;

    void reset();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace rlpipe::model
