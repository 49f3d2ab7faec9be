#include "rlpipe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rlpipe/errors.hpp"
#include "rlpipe/rng.hpp"

namespace rlpipe::model {

FdReport finite_diff_compare(ModelState& model,
                             const std::function<double(const ModelState&)>& loss,
                             std::span<const double> analytic, double h,
                             double rel_floor) {
    if (model.precision() != Precision::high) {
        raise(ErrorClass::config, "finite_diff_compare requires high precision");
    }
    if (analytic.size() != model.param_count()) {
        raise(ErrorClass::config, "analytic gradient size mismatch");
    }
    FdReport report;
    report.checked = model.param_count();
    for (size_t i = 0; i < model.param_count(); ++i) {
        const double original = model.param(i);
        model.set_param(i, original + h);
        const double up = loss(model);
        model.set_param(i, original - h);
        const double down = loss(model);
        model.set_param(i, original);
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), rel_floor});
        const double rel = std::abs(fd - analytic[i]) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    return report;
}

GradCheckSummary run_gradcheck(int seeds, double tolerance) {
    GradCheckSummary summary;
    summary.seeds = seeds;
    summary.tolerance = tolerance;
    summary.pass = true;

    for (int s = 0; s < seeds; ++s) {
        Arch arch;
        arch.vocab_size = 11;
        arch.context_len = 16;
        arch.layers = 2;
        arch.hidden_dim = 16;
        arch.heads = 2;
        ModelState m = ModelState::init(arch, 1000 + static_cast<uint64_t>(s),
                                        Precision::high);

        Rng rng(derive_seed(77, "gradcheck-seq", static_cast<uint64_t>(s)));
        const int len = 8 + static_cast<int>(rng.uniform_below(9));  // 8..16
        TokenSequence seq;
        seq.tokens.resize(static_cast<size_t>(len));
        for (int& t : seq.tokens) {
            t = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(arch.vocab_size)));
        }

        // Mean token-level cross-entropy over positions 1..len-1.
        const double w = -1.0 / static_cast<double>(len - 1);
        std::vector<double> weights(static_cast<size_t>(len), w);
        weights[0] = 0.0;

        TrainGraph graph(m);
        const OwnedStream stream = make_plain_stream(seq.tokens);
        graph.forward(stream.view());
        graph.backward({weights});
        const std::vector<double> analytic = graph.grads();

        auto loss = [&seq, &weights](const ModelState& state) {
            const std::vector<double> lp = forward_logprobs(state, seq);
            double total = 0.0;
            for (size_t t = 1; t < lp.size(); ++t) {
                total += weights[t] * lp[t];
            }
            return total;
        };
        const FdReport report = finite_diff_compare(m, loss, analytic, 1e-4);
        summary.coords_checked += report.checked;
        summary.max_rel_err = std::max(summary.max_rel_err, report.max_rel_err);
        if (report.max_rel_err > tolerance) {
            summary.pass = false;
        }
    }
    return summary;
}

} // namespace rlpipe::model
