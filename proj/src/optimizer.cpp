#include "rlpipe/optimizer.hpp"

#include <cmath>

#include "rlpipe/errors.hpp"

namespace rlpipe::model {

OptimizerState OptimizerState::init(const ModelState& model, double beta1, double beta2,
                                    double weight_decay) {
    OptimizerState o;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.weight_decay = weight_decay;
    if (model.precision() == Precision::high) {
        o.m64.assign(model.param_count(), 0.0);
        o.v64.assign(model.param_count(), 0.0);
    } else {
        o.m32.assign(model.param_count(), 0.0f);
        o.v32.assign(model.param_count(), 0.0f);
    }
    return o;
}

namespace {

template <class F>
void adamw_update(F* params, F* m, F* v, std::span<const double> grads, size_t n,
                  double lr, double beta1, double beta2, double weight_decay,
                  double eps, int64_t t) {
    const F b1 = F(beta1);
    const F b2 = F(beta2);
    const F one_minus_b1 = F(1) - b1;
    const F one_minus_b2 = F(1) - b2;
    const F corr1 = F(1) - F(std::pow(beta1, static_cast<double>(t)));
    const F corr2 = F(1) - F(std::pow(beta2, static_cast<double>(t)));
    const F lr_f = F(lr);
    const F wd = F(weight_decay);
    const F eps_f = F(eps);
    for (size_t i = 0; i < n; ++i) {
        const F g = F(grads[i]);
        m[i] = b1 * m[i] + one_minus_b1 * g;
        v[i] = b2 * v[i] + one_minus_b2 * g * g;
        const F mhat = m[i] / corr1;
        const F vhat = v[i] / corr2;
        params[i] -= lr_f * (mhat / (std::sqrt(vhat) + eps_f) + wd * params[i]);
    }
}

} // namespace

void adamw_step(ModelState& model, OptimizerState& opt, std::span<const double> grads,
                double lr) {
    if (grads.size() != model.param_count()) {
        raise(ErrorClass::config, "gradient vector size mismatch");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            raise(ErrorClass::numeric, "non-finite gradient; optimizer step aborted");
        }
    }
    opt.step += 1;
    if (model.precision() == Precision::high) {
        adamw_update<double>(model.f64().data(), opt.m64.data(), opt.v64.data(), grads,
                             model.param_count(), lr, opt.beta1, opt.beta2,
                             opt.weight_decay, opt.eps, opt.step);
    } else {
        adamw_update<float>(model.f32().data(), opt.m32.data(), opt.v32.data(), grads,
                            model.param_count(), lr, opt.beta1, opt.beta2,
                            opt.weight_decay, opt.eps, opt.step);
    }
}

double global_grad_norm(std::span<const double> grads) {
    double sq = 0.0;
    for (double g : grads) {
        sq += g * g;
    }
    return std::sqrt(sq);
}

void clip_grad_norm(std::vector<double>& grads, double max_norm) {
    if (max_norm <= 0.0) {
        return;
    }
    const double norm = global_grad_norm(grads);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grads) {
            g *= scale;
        }
    }
}

} // namespace rlpipe::model
