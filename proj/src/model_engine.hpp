#pragma once

// Internal compute kernels for the decoder-only transformer, templated on
// the scalar type (float for standard precision, double for high). Shared by
// model.cpp and the trainers; not part of the public API.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "rlpipe/errors.hpp"
#include "rlpipe/model.hpp"

namespace rlpipe::model::detail {

// Flat parameter layout. Order is fixed and doubles as the checkpoint order.
struct Offsets {
    struct Layer {
        size_t ln1_g, ln1_b;
        size_t wq, wk, wv, wo;
        size_t ln2_g, ln2_b;
        size_t fc1, fc2;
    };

    size_t wte = 0, wpe = 0;
    std::vector<Layer> layer;
    size_t lnf_g = 0, lnf_b = 0;
    size_t lm_head = 0;
    size_t total = 0;

    static Offsets make(const Arch& a) {
        Offsets o;
        const size_t v = static_cast<size_t>(a.vocab_size);
        const size_t c = static_cast<size_t>(a.context_len);
        const size_t h = static_cast<size_t>(a.hidden_dim);
        size_t cur = 0;
        o.wte = cur; cur += v * h;
        o.wpe = cur; cur += c * h;
        o.layer.resize(static_cast<size_t>(a.layers));
        for (auto& l : o.layer) {
            l.ln1_g = cur; cur += h;
            l.ln1_b = cur; cur += h;
            l.wq = cur; cur += h * h;
            l.wk = cur; cur += h * h;
            l.wv = cur; cur += h * h;
            l.wo = cur; cur += h * h;
            l.ln2_g = cur; cur += h;
            l.ln2_b = cur; cur += h;
            l.fc1 = cur; cur += 4 * h * h;
            l.fc2 = cur; cur += 4 * h * h;
        }
        o.lnf_g = cur; cur += h;
        o.lnf_b = cur; cur += h;
        o.lm_head = cur; cur += v * h;
        o.total = cur;
        return o;
    }
};

std::vector<ParamView> make_layout(const Arch& a);

constexpr double kLnEps = 1e-5;

// GELU (tanh approximation). Smooth everywhere, which keeps analytic
// gradients and central finite differences comparable on every coordinate.
template <class F>
inline F gelu(F x) {
    const F k = F(0.7978845608028654);  // sqrt(2/pi)
    const F u = k * (x + F(0.044715) * x * x * x);
    return F(0.5) * x * (F(1) + std::tanh(u));
}

template <class F>
inline F gelu_grad(F x) {
    const F k = F(0.7978845608028654);
    const F u = k * (x + F(0.044715) * x * x * x);
    const F t = std::tanh(u);
    const F du = k * (F(1) + F(3) * F(0.044715) * x * x);
    return F(0.5) * (F(1) + t) + F(0.5) * x * (F(1) - t * t) * du;
}

// y = W x for row-major W[out][in].
template <class F>
inline void matvec(const F* w, const F* x, F* y, int out, int in) {
    for (int o = 0; o < out; ++o) {
        const F* row = w + static_cast<size_t>(o) * in;
        F acc = F(0);
        for (int i = 0; i < in; ++i) {
            acc += row[i] * x[i];
        }
        y[o] = acc;
    }
}

// dx += W^T dy, dW += dy x^T; both walk W rows contiguously.
template <class F>
inline void matvec_backward(const F* w, const F* x, const F* dy,
                            F* dx, F* dw, int out, int in) {
    for (int o = 0; o < out; ++o) {
        const F g = dy[o];
        if (g == F(0)) {
            continue;
        }
        const F* row = w + static_cast<size_t>(o) * in;
        F* drow = dw + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
            dx[i] += row[i] * g;
            drow[i] += x[i] * g;
        }
    }
}

template <class F>
inline void layernorm_forward(const F* x, const F* gamma, const F* beta,
                              F* xhat, F* out, F* rstd_out, int n) {
    F mean = F(0);
    for (int i = 0; i < n; ++i) {
        mean += x[i];
    }
    mean /= F(n);
    F var = F(0);
    for (int i = 0; i < n; ++i) {
        const F d = x[i] - mean;
        var += d * d;
    }
    var /= F(n);
    const F rstd = F(1) / std::sqrt(var + F(kLnEps));
    for (int i = 0; i < n; ++i) {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = xhat[i] * gamma[i] + beta[i];
    }
    *rstd_out = rstd;
}

// dx += layernorm backward; dgamma/dbeta accumulate.
template <class F>
inline void layernorm_backward(const F* dy, const F* xhat, F rstd, const F* gamma,
                               F* dx, F* dgamma, F* dbeta, int n) {
    F m1 = F(0);
    F m2 = F(0);
    for (int i = 0; i < n; ++i) {
        const F g = gamma[i] * dy[i];
        m1 += g;
        m2 += g * xhat[i];
    }
    m1 /= F(n);
    m2 /= F(n);
    for (int i = 0; i < n; ++i) {
        const F g = gamma[i] * dy[i];
        dx[i] += (g - m1 - xhat[i] * m2) * rstd;
        dgamma[i] += dy[i] * xhat[i];
        dbeta[i] += dy[i];
    }
}

// Recorded activations for one stream; everything backward needs.
template <class F>
struct StreamCache {
    std::vector<int> tokens, pos, segment;
    int T = 0;

    struct LayerCache {
        std::vector<F> ln1_xhat, ln1_out, ln1_rstd;
        std::vector<F> q, k, v;
        std::vector<F> att;      // [heads][T][T], post-softmax, masked slots 0
        std::vector<F> att_y;    // concatenated head outputs, pre-projection
        std::vector<F> ln2_xhat, ln2_out, ln2_rstd;
        std::vector<F> h1;       // fc1 pre-activation
    };

    std::vector<LayerCache> layers;
    std::vector<F> lnf_xhat, lnf_out, lnf_rstd;
    std::vector<F> probs;  // [T][V]
};

template <class F>
class Engine {
public:
    Engine(const Arch& arch, const F* params)
        : arch_(arch), off_(Offsets::make(arch)), p_(params) {}

    const Offsets& offsets() const { return off_; }

    // Forward over one stream, recording activations. logprobs_out[t] gets
    // log p(tokens[t] | in-segment prefix) for pos[t] > 0, else 0.
    void forward_stream(const StreamView& sv, StreamCache<F>& cs,
                        std::vector<double>* logprobs_out) const {
        const int T = sv.size();
        const int H = arch_.hidden_dim;
        const int V = arch_.vocab_size;
        const int NH = arch_.heads;
        const int DH = H / NH;
        const F inv_sqrt_dh = F(1) / std::sqrt(F(DH));

        cs.T = T;
        cs.tokens.assign(sv.tokens.begin(), sv.tokens.end());
        cs.pos.assign(sv.pos.begin(), sv.pos.end());
        cs.segment.assign(sv.segment.begin(), sv.segment.end());
        cs.layers.resize(static_cast<size_t>(arch_.layers));

        std::vector<F> x(static_cast<size_t>(T) * H);
        for (int t = 0; t < T; ++t) {
            const F* te = p_ + off_.wte + static_cast<size_t>(sv.tokens[t]) * H;
            const F* pe = p_ + off_.wpe + static_cast<size_t>(sv.pos[t]) * H;
            F* xt = x.data() + static_cast<size_t>(t) * H;
            for (int i = 0; i < H; ++i) {
                xt[i] = te[i] + pe[i];
            }
        }

        for (int l = 0; l < arch_.layers; ++l) {
            auto& lc = cs.layers[static_cast<size_t>(l)];
            const auto& lo = off_.layer[static_cast<size_t>(l)];
            lc.ln1_xhat.resize(x.size());
            lc.ln1_out.resize(x.size());
            lc.ln1_rstd.resize(static_cast<size_t>(T));
            lc.q.resize(x.size());
            lc.k.resize(x.size());
            lc.v.resize(x.size());
            lc.att.assign(static_cast<size_t>(NH) * T * T, F(0));
            lc.att_y.assign(x.size(), F(0));
            lc.ln2_xhat.resize(x.size());
            lc.ln2_out.resize(x.size());
            lc.ln2_rstd.resize(static_cast<size_t>(T));
            lc.h1.resize(static_cast<size_t>(T) * 4 * H);

            for (int t = 0; t < T; ++t) {
                const size_t th = static_cast<size_t>(t) * H;
                layernorm_forward(x.data() + th, p_ + lo.ln1_g, p_ + lo.ln1_b,
                                  lc.ln1_xhat.data() + th, lc.ln1_out.data() + th,
                                  &lc.ln1_rstd[static_cast<size_t>(t)], H);
                matvec(p_ + lo.wq, lc.ln1_out.data() + th, lc.q.data() + th, H, H);
                matvec(p_ + lo.wk, lc.ln1_out.data() + th, lc.k.data() + th, H, H);
                matvec(p_ + lo.wv, lc.ln1_out.data() + th, lc.v.data() + th, H, H);

                const int seg_start = t - sv.pos[t];
                for (int h = 0; h < NH; ++h) {
                    const size_t hs = static_cast<size_t>(h) * DH;
                    F* att_row = lc.att.data() +
                                 (static_cast<size_t>(h) * T + static_cast<size_t>(t)) * T;
                    F maxs = -std::numeric_limits<F>::infinity();
                    for (int j = seg_start; j <= t; ++j) {
                        const F* qv = lc.q.data() + th + hs;
                        const F* kv = lc.k.data() + static_cast<size_t>(j) * H + hs;
                        F s = F(0);
                        for (int d = 0; d < DH; ++d) {
                            s += qv[d] * kv[d];
                        }
                        s *= inv_sqrt_dh;
                        att_row[j] = s;
                        if (s > maxs) {
                            maxs = s;
                        }
                    }
                    F denom = F(0);
                    for (int j = seg_start; j <= t; ++j) {
                        att_row[j] = std::exp(att_row[j] - maxs);
                        denom += att_row[j];
                    }
                    const F inv = F(1) / denom;
                    F* yt = lc.att_y.data() + th + hs;
                    for (int j = seg_start; j <= t; ++j) {
                        att_row[j] *= inv;
                        const F a = att_row[j];
                        const F* vv = lc.v.data() + static_cast<size_t>(j) * H + hs;
                        for (int d = 0; d < DH; ++d) {
                            yt[d] += a * vv[d];
                        }
                    }
                }
            }

            std::vector<F> tmp(static_cast<size_t>(H));
            std::vector<F> tmp4(static_cast<size_t>(4) * H);
            for (int t = 0; t < T; ++t) {
                const size_t th = static_cast<size_t>(t) * H;
                matvec(p_ + lo.wo, lc.att_y.data() + th, tmp.data(), H, H);
                F* xt = x.data() + th;
                for (int i = 0; i < H; ++i) {
                    xt[i] += tmp[i];
                }
                layernorm_forward(xt, p_ + lo.ln2_g, p_ + lo.ln2_b,
                                  lc.ln2_xhat.data() + th, lc.ln2_out.data() + th,
                                  &lc.ln2_rstd[static_cast<size_t>(t)], H);
                F* h1t = lc.h1.data() + static_cast<size_t>(t) * 4 * H;
                matvec(p_ + lo.fc1, lc.ln2_out.data() + th, h1t, 4 * H, H);
                for (int i = 0; i < 4 * H; ++i) {
                    tmp4[static_cast<size_t>(i)] = gelu(h1t[i]);
                }
                matvec(p_ + lo.fc2, tmp4.data(), tmp.data(), H, 4 * H);
                for (int i = 0; i < H; ++i) {
                    xt[i] += tmp[i];
                }
            }
        }

        cs.lnf_xhat.resize(x.size());
        cs.lnf_out.resize(x.size());
        cs.lnf_rstd.resize(static_cast<size_t>(T));
        cs.probs.resize(static_cast<size_t>(T) * V);
        if (logprobs_out) {
            logprobs_out->assign(static_cast<size_t>(T), 0.0);
        }

        std::vector<F> logits(static_cast<size_t>(V));
        std::vector<double> lse(static_cast<size_t>(T));
        for (int t = 0; t < T; ++t) {
            const size_t th = static_cast<size_t>(t) * H;
            layernorm_forward(x.data() + th, p_ + off_.lnf_g, p_ + off_.lnf_b,
                              cs.lnf_xhat.data() + th, cs.lnf_out.data() + th,
                              &cs.lnf_rstd[static_cast<size_t>(t)], H);
            matvec(p_ + off_.lm_head, cs.lnf_out.data() + th, logits.data(), V, H);
            F maxl = logits[0];
            for (int j = 1; j < V; ++j) {
                maxl = std::max(maxl, logits[static_cast<size_t>(j)]);
            }
            F sum = F(0);
            F* pt = cs.probs.data() + static_cast<size_t>(t) * V;
            for (int j = 0; j < V; ++j) {
                pt[j] = std::exp(logits[static_cast<size_t>(j)] - maxl);
                sum += pt[j];
            }
            const F inv = F(1) / sum;
            for (int j = 0; j < V; ++j) {
                pt[j] *= inv;
            }
            lse[static_cast<size_t>(t)] =
                static_cast<double>(maxl) + std::log(static_cast<double>(sum));
            if (logprobs_out && t + 1 < T && sv.pos[t + 1] > 0) {
                const double z = static_cast<double>(logits[static_cast<size_t>(sv.tokens[t + 1])]);
                (*logprobs_out)[static_cast<size_t>(t + 1)] = z - lse[static_cast<size_t>(t)];
            }
        }
    }

    // Reverse pass for one recorded stream. weights[t] = dL/d(logprob at t).
    // Parameter gradients accumulate into grads (length offsets().total).
    void backward_stream(const StreamCache<F>& cs, std::span<const double> weights,
                         F* grads) const {
        const int T = cs.T;
        const int H = arch_.hidden_dim;
        const int V = arch_.vocab_size;
        const int NH = arch_.heads;
        const int DH = H / NH;
        const F inv_sqrt_dh = F(1) / std::sqrt(F(DH));

        // Logit layer: dlogits[j] = w * (delta(j, target) - p[j]).
        std::vector<F> dlnf_out(static_cast<size_t>(T) * H, F(0));
        std::vector<F> dlogits(static_cast<size_t>(V));
        for (int t = 1; t < T; ++t) {
            const double w = weights[static_cast<size_t>(t)];
            if (w == 0.0 || cs.pos[static_cast<size_t>(t)] == 0) {
                continue;
            }
            const int tp = t - 1;
            const int target = cs.tokens[static_cast<size_t>(t)];
            const F* pt = cs.probs.data() + static_cast<size_t>(tp) * V;
            const F wf = F(w);
            for (int j = 0; j < V; ++j) {
                dlogits[static_cast<size_t>(j)] = -wf * pt[j];
            }
            dlogits[static_cast<size_t>(target)] += wf;
            matvec_backward(p_ + off_.lm_head, cs.lnf_out.data() + static_cast<size_t>(tp) * H,
                            dlogits.data(), dlnf_out.data() + static_cast<size_t>(tp) * H,
                            grads + off_.lm_head, V, H);
        }

        std::vector<F> dx(static_cast<size_t>(T) * H, F(0));
        for (int t = 0; t < T; ++t) {
            const size_t th = static_cast<size_t>(t) * H;
            layernorm_backward(dlnf_out.data() + th, cs.lnf_xhat.data() + th,
                               cs.lnf_rstd[static_cast<size_t>(t)], p_ + off_.lnf_g,
                               dx.data() + th, grads + off_.lnf_g, grads + off_.lnf_b, H);
        }

        std::vector<F> dln_out(static_cast<size_t>(T) * H);
        std::vector<F> dh1(static_cast<size_t>(4) * H);
        std::vector<F> h1r(static_cast<size_t>(4) * H);
        std::vector<F> datt_y(static_cast<size_t>(T) * H);
        std::vector<F> dq(static_cast<size_t>(T) * H);
        std::vector<F> dk(static_cast<size_t>(T) * H);
        std::vector<F> dv(static_cast<size_t>(T) * H);
        std::vector<F> datt_row;
        std::vector<F> tmp(static_cast<size_t>(H));

        for (int l = arch_.layers - 1; l >= 0; --l) {
            const auto& lc = cs.layers[static_cast<size_t>(l)];
            const auto& lo = off_.layer[static_cast<size_t>(l)];

            // MLP block: x_out = x_mid + fc2(relu(fc1(ln2(x_mid)))).
            std::fill(dln_out.begin(), dln_out.end(), F(0));
            for (int t = 0; t < T; ++t) {
                const size_t th = static_cast<size_t>(t) * H;
                const F* h1t = lc.h1.data() + static_cast<size_t>(t) * 4 * H;
                for (int i = 0; i < 4 * H; ++i) {
                    h1r[static_cast<size_t>(i)] = gelu(h1t[i]);
                    dh1[static_cast<size_t>(i)] = F(0);
                }
                // d(mlp out) is dx[t] itself (residual add).
                matvec_backward(p_ + lo.fc2, h1r.data(), dx.data() + th,
                                dh1.data(), grads + lo.fc2, H, 4 * H);
                for (int i = 0; i < 4 * H; ++i) {
                    dh1[static_cast<size_t>(i)] *= gelu_grad(h1t[i]);
                }
                matvec_backward(p_ + lo.fc1, lc.ln2_out.data() + th, dh1.data(),
                                dln_out.data() + th, grads + lo.fc1, 4 * H, H);
            }
            for (int t = 0; t < T; ++t) {
                const size_t th = static_cast<size_t>(t) * H;
                layernorm_backward(dln_out.data() + th, lc.ln2_xhat.data() + th,
                                   lc.ln2_rstd[static_cast<size_t>(t)], p_ + lo.ln2_g,
                                   dx.data() + th, grads + lo.ln2_g, grads + lo.ln2_b, H);
            }

            // Attention block: x_mid = x_in + wo(att_y).
            std::fill(datt_y.begin(), datt_y.end(), F(0));
            for (int t = 0; t < T; ++t) {
                const size_t th = static_cast<size_t>(t) * H;
                matvec_backward(p_ + lo.wo, lc.att_y.data() + th, dx.data() + th,
                                datt_y.data() + th, grads + lo.wo, H, H);
            }

            std::fill(dq.begin(), dq.end(), F(0));
            std::fill(dk.begin(), dk.end(), F(0));
            std::fill(dv.begin(), dv.end(), F(0));
            datt_row.assign(static_cast<size_t>(T), F(0));
            for (int t = 0; t < T; ++t) {
                const int seg_start = t - cs.pos[static_cast<size_t>(t)];
                const size_t th = static_cast<size_t>(t) * H;
                for (int h = 0; h < NH; ++h) {
                    const size_t hs = static_cast<size_t>(h) * DH;
                    const F* att_row = lc.att.data() +
                                       (static_cast<size_t>(h) * T + static_cast<size_t>(t)) * T;
                    const F* dyt = datt_y.data() + th + hs;
                    // dv and datt.
                    F dot = F(0);
                    for (int j = seg_start; j <= t; ++j) {
                        const F a = att_row[j];
                        F* dvj = dv.data() + static_cast<size_t>(j) * H + hs;
                        const F* vj = lc.v.data() + static_cast<size_t>(j) * H + hs;
                        F da = F(0);
                        for (int d = 0; d < DH; ++d) {
                            dvj[d] += a * dyt[d];
                            da += dyt[d] * vj[d];
                        }
                        datt_row[static_cast<size_t>(j)] = da;
                        dot += a * da;
                    }
                    // Softmax backward, then scores to q/k.
                    const F* qt = lc.q.data() + th + hs;
                    F* dqt = dq.data() + th + hs;
                    for (int j = seg_start; j <= t; ++j) {
                        const F ds = att_row[j] * (datt_row[static_cast<size_t>(j)] - dot) *
                                     inv_sqrt_dh;
                        if (ds == F(0)) {
                            continue;
                        }
                        const F* kj = lc.k.data() + static_cast<size_t>(j) * H + hs;
                        F* dkj = dk.data() + static_cast<size_t>(j) * H + hs;
                        for (int d = 0; d < DH; ++d) {
                            dqt[d] += ds * kj[d];
                            dkj[d] += ds * qt[d];
                        }
                    }
                }
            }

            std::fill(dln_out.begin(), dln_out.end(), F(0));
            for (int t = 0; t < T; ++t) {
                const size_t th = static_cast<size_t>(t) * H;
                matvec_backward(p_ + lo.wq, lc.ln1_out.data() + th, dq.data() + th,
                                dln_out.data() + th, grads + lo.wq, H, H);
                matvec_backward(p_ + lo.wk, lc.ln1_out.data() + th, dk.data() + th,
                                dln_out.data() + th, grads + lo.wk, H, H);
                matvec_backward(p_ + lo.wv, lc.ln1_out.data() + th, dv.data() + th,
                                dln_out.data() + th, grads + lo.wv, H, H);
            }
            for (int t = 0; t < T; ++t) {
                const size_t th = static_cast<size_t>(t) * H;
                layernorm_backward(dln_out.data() + th, lc.ln1_xhat.data() + th,
                                   lc.ln1_rstd[static_cast<size_t>(t)], p_ + lo.ln1_g,
                                   dx.data() + th, grads + lo.ln1_g, grads + lo.ln1_b, H);
            }
        }

        for (int t = 0; t < T; ++t) {
            const size_t th = static_cast<size_t>(t) * H;
            F* dte = grads + off_.wte + static_cast<size_t>(cs.tokens[static_cast<size_t>(t)]) * H;
            F* dpe = grads + off_.wpe + static_cast<size_t>(cs.pos[static_cast<size_t>(t)]) * H;
            for (int i = 0; i < H; ++i) {
                dte[i] += dx[th + static_cast<size_t>(i)];
                dpe[i] += dx[th + static_cast<size_t>(i)];
            }
        }
    }

private:
    Arch arch_;
    Offsets off_;
    const F* p_;
};

// KV-cache incremental forward; O(context * hidden) memory, no activation
// recording. Backs both decoding and sequence scoring.
template <class F>
class KvSession {
public:
    KvSession(const Arch& arch, const F* params)
        : arch_(arch), off_(Offsets::make(arch)), p_(params) {
        const size_t span = static_cast<size_t>(arch.context_len) * arch.hidden_dim;
        k_.assign(static_cast<size_t>(arch.layers) * span, F(0));
        v_.assign(static_cast<size_t>(arch.layers) * span, F(0));
        logits_.assign(static_cast<size_t>(arch.vocab_size), 0.0);
        x_.assign(static_cast<size_t>(arch.hidden_dim), F(0));
        a_.assign(static_cast<size_t>(arch.hidden_dim), F(0));
        h1_.assign(static_cast<size_t>(4) * arch.hidden_dim, F(0));
        att_.assign(static_cast<size_t>(arch.context_len), F(0));
    }

    void reset() { n_ = 0; }
    int position() const { return n_; }

    std::span<const double> feed(int token) {
        if (token < 0 || token >= arch_.vocab_size) {
            raise(ErrorClass::config, "token id out of vocabulary bounds");
        }
        if (n_ >= arch_.context_len) {
            raise(ErrorClass::config, "inference session exceeded context length");
        }
        const int H = arch_.hidden_dim;
        const int V = arch_.vocab_size;
        const int NH = arch_.heads;
        const int DH = H / NH;
        const int C = arch_.context_len;
        const F inv_sqrt_dh = F(1) / std::sqrt(F(DH));

        const F* te = p_ + off_.wte + static_cast<size_t>(token) * H;
        const F* pe = p_ + off_.wpe + static_cast<size_t>(n_) * H;
        for (int i = 0; i < H; ++i) {
            x_[static_cast<size_t>(i)] = te[i] + pe[i];
        }

        std::vector<F> xhat(static_cast<size_t>(H));
        F rstd;
        for (int l = 0; l < arch_.layers; ++l) {
            const auto& lo = off_.layer[static_cast<size_t>(l)];
            layernorm_forward(x_.data(), p_ + lo.ln1_g, p_ + lo.ln1_b,
                              xhat.data(), a_.data(), &rstd, H);
            F* kt = k_.data() + (static_cast<size_t>(l) * C + n_) * H;
            F* vt = v_.data() + (static_cast<size_t>(l) * C + n_) * H;
            std::vector<F> q(static_cast<size_t>(H));
            matvec(p_ + lo.wq, a_.data(), q.data(), H, H);
            matvec(p_ + lo.wk, a_.data(), kt, H, H);
            matvec(p_ + lo.wv, a_.data(), vt, H, H);

            std::vector<F> y(static_cast<size_t>(H), F(0));
            for (int h = 0; h < NH; ++h) {
                const size_t hs = static_cast<size_t>(h) * DH;
                F maxs = -std::numeric_limits<F>::infinity();
                for (int j = 0; j <= n_; ++j) {
                    const F* kj = k_.data() + (static_cast<size_t>(l) * C + j) * H + hs;
                    F s = F(0);
                    for (int d = 0; d < DH; ++d) {
                        s += q[hs + static_cast<size_t>(d)] * kj[d];
                    }
                    s *= inv_sqrt_dh;
                    att_[static_cast<size_t>(j)] = s;
                    maxs = std::max(maxs, s);
                }
                F denom = F(0);
                for (int j = 0; j <= n_; ++j) {
                    att_[static_cast<size_t>(j)] = std::exp(att_[static_cast<size_t>(j)] - maxs);
                    denom += att_[static_cast<size_t>(j)];
                }
                const F inv = F(1) / denom;
                for (int j = 0; j <= n_; ++j) {
                    const F a = att_[static_cast<size_t>(j)] * inv;
                    const F* vj = v_.data() + (static_cast<size_t>(l) * C + j) * H + hs;
                    for (int d = 0; d < DH; ++d) {
                        y[hs + static_cast<size_t>(d)] += a * vj[d];
                    }
                }
            }
            matvec(p_ + lo.wo, y.data(), a_.data(), H, H);
            for (int i = 0; i < H; ++i) {
                x_[static_cast<size_t>(i)] += a_[static_cast<size_t>(i)];
            }
            layernorm_forward(x_.data(), p_ + lo.ln2_g, p_ + lo.ln2_b,
                              xhat.data(), a_.data(), &rstd, H);
            matvec(p_ + lo.fc1, a_.data(), h1_.data(), 4 * H, H);
            for (int i = 0; i < 4 * H; ++i) {
                h1_[static_cast<size_t>(i)] = gelu(h1_[static_cast<size_t>(i)]);
            }
            matvec(p_ + lo.fc2, h1_.data(), a_.data(), H, 4 * H);
            for (int i = 0; i < H; ++i) {
                x_[static_cast<size_t>(i)] += a_[static_cast<size_t>(i)];
            }
        }
        layernorm_forward(x_.data(), p_ + off_.lnf_g, p_ + off_.lnf_b,
                          xhat.data(), a_.data(), &rstd, H);
        std::vector<F> logits_f(static_cast<size_t>(V));
        matvec(p_ + off_.lm_head, a_.data(), logits_f.data(), V, H);
        for (int j = 0; j < V; ++j) {
            logits_[static_cast<size_t>(j)] = static_cast<double>(logits_f[static_cast<size_t>(j)]);
        }
        ++n_;
        return std::span<const double>(logits_);
    }

private:
    Arch arch_;
    Offsets off_;
    const F* p_;
    int n_ = 0;
    std::vector<F> k_, v_, x_, a_, h1_, att_;
    std::vector<double> logits_;
};

} // namespace rlpipe::model::detail
