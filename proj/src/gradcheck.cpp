#include "residual_lab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "residual_lab/theory.hpp"

namespace rlab {

namespace {

double rel_error(const Tensor& analytic, const Tensor& numeric) {
    return max_abs_diff(analytic, numeric) / std::max(max_abs(numeric), 1e-8);
}

} // namespace

GradCheckReport network_gradcheck(const NetworkConfig& config, double step) {
    Network net = build_network(config);
    AnalysisSample sample = analysis_sample(config, config.seed);

    ForwardTrace trace = forward(sample.input, net);
    GradReport rep = backward(analysis_loss_grad(trace.y, sample.target), trace, net, {false});

    auto loss_at = [&](const Tensor& x) { return analysis_loss(forward(x, net).y, sample.target); };

    GradCheckReport out;
    auto record = [&](std::string name, const Tensor& analytic, const Tensor& numeric) {
        const double e = rel_error(analytic, numeric);
        out.entries.push_back({std::move(name), frobenius_norm(analytic), e});
        out.worst = std::max(out.worst, e);
    };

    for (std::size_t k = 0; k < net.blocks.size(); ++k) {
        for (std::size_t s = 0; s < net.blocks[k].weights.size(); ++s) {
            Tensor& w = net.blocks[k].weights[s];
            Tensor numeric = Tensor::zeros_like(w);
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double saved = w[i];
                w[i] = saved + step;
                const double up = loss_at(sample.input);
                w[i] = saved - step;
                const double down = loss_at(sample.input);
                w[i] = saved;
                numeric[i] = (up - down) / (2.0 * step);
            }
            record("block" + std::to_string(k + 1) + ".w" + std::to_string(s), rep.total[k][s], numeric);
        }
    }

    Tensor x = sample.input;
    Tensor numeric = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = loss_at(x);
        x[i] = saved - step;
        const double down = loss_at(x);
        x[i] = saved;
        numeric[i] = (up - down) / (2.0 * step);
    }
    record("input", rep.input_grad, numeric);
    return out;
}

} // namespace rlab
