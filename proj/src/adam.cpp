#include "residual_lab/adam.hpp"

#include <algorithm>
#include <cmath>

#include "residual_lab/parallel.hpp"

namespace rlab {

AdamState::AdamState(std::vector<std::size_t> shape, const AdamHyper& h)
    : m(shape), v(shape), t(0), hyper(h) {}

namespace {

void check_gradient(const AdamState& state, const Tensor& g) {
    require_same_shape(state.m, g, "adam");
    if (!all_finite(g)) throw ParameterError("adam: non-finite gradient entry");
}

} // namespace

void adam_advance_moments(AdamState& state, const Tensor& g) {
    check_gradient(state, g);
    const AdamHyper& h = state.hyper;
    auto m = state.m.data();
    auto v = state.v.data();
    auto pg = g.data();
    for (std::size_t i = 0; i < pg.size(); ++i) {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * pg[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * pg[i] * pg[i];
    }
    ++state.t;
}

Tensor adam_update(AdamState& state, const Tensor& g) {
    adam_advance_moments(state, g);
    const AdamHyper& h = state.hyper;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    Tensor u = Tensor::zeros_like(g);
    auto pu = u.data();
    auto m = state.m.data();
    auto v = state.v.data();
    for (std::size_t i = 0; i < pu.size(); ++i) {
        pu[i] = h.alpha * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.eps);
    }
    return u;
}

double adam_update_derivative(const AdamHyper& h, double m_prev, double v_prev, long step, double g) {
    if (step < 1) throw ParameterError("adam_update_derivative: step must be >= 1");
    const double t = static_cast<double>(step);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    const double m_new = h.beta1 * m_prev + (1.0 - h.beta1) * g;
    const double v_new = h.beta2 * v_prev + (1.0 - h.beta2) * g * g;
    const double root = std::sqrt(v_new / c2);
    const double denom = h.eps + root;

    const double direct = h.alpha * (1.0 - h.beta1) / (c1 * denom);
    // d(root)/dg = g (1 - beta2) / (c2 * root); vanishes with g.
    double through_root = 0.0;
    if (g != 0.0) {
        through_root = h.alpha * m_new * g * (1.0 - h.beta2) / (c1 * c2 * root * denom * denom);
    }
    return direct - through_root;
}

double kappa(const AdamState& state, const Tensor& g) {
    check_gradient(state, g);
    const long step = state.t + 1;
    auto m = state.m.data();
    auto v = state.v.data();
    auto pg = g.data();
    double sq = 0.0;
    for (std::size_t i = 0; i < pg.size(); ++i) {
        const double j = adam_update_derivative(state.hyper, m[i], v[i], step, pg[i]);
        sq += j * j;
    }
    return std::sqrt(sq);
}

std::vector<double> KappaSimConfig::default_sigma_grid() {
    return {0.0, 1e-9, 1e-8, 2e-8, 5e-8, 1e-7};
}

KappaProbe kappa_simulation(const KappaSimConfig& config) {
    if (config.d == 0 || config.t_max < 1) throw ParameterError("kappa_simulation: need d >= 1, t_max >= 1");
    for (double s : config.sigma_grid) {
        if (s < 0.0) throw ParameterError("kappa_simulation: negative sigma_g");
    }
    const std::size_t n_sigma = config.sigma_grid.size();
    const std::size_t cells = config.seeds.size() * n_sigma;
    std::vector<std::vector<KappaRow>> per_cell(cells);

    parallel_for(cells, [&](std::size_t cell) {
        const std::uint64_t seed = config.seeds[cell / n_sigma];
        const double sigma = config.sigma_grid[cell % n_sigma];
        // One independent stream per (seed, sigma) cell.
        Rng rng(seed * 0x9E3779B97F4A7C15ULL + cell % n_sigma);
        AdamState state({config.d}, config.hyper);
        auto& rows = per_cell[cell];
        for (long t = 1; t <= config.t_max; ++t) {
            Tensor g = gaussian_tensor(rng, {config.d}, 0.0, sigma);
            rows.push_back({t, sigma, kappa(state, g), seed});
            adam_advance_moments(state, g);
        }
    });

    KappaProbe probe{config.d, config.sigma_grid, {}};
    for (auto& rows : per_cell) probe.rows.insert(probe.rows.end(), rows.begin(), rows.end());
    return probe;
}

std::string to_string(Schedule s) {
    switch (s) {
    case Schedule::InvSqrtWarmup: return "inv_sqrt_warmup";
    case Schedule::InvSqrtNoWarmup: return "inv_sqrt_no_warmup";
    case Schedule::LinearDecay: return "linear_decay";
    }
    return "?";
}

Schedule schedule_from_string(const std::string& s) {
    if (s == "inv_sqrt_warmup" || s == "warmup") return Schedule::InvSqrtWarmup;
    if (s == "inv_sqrt_no_warmup" || s == "inv_sqrt" || s == "no_warmup") return Schedule::InvSqrtNoWarmup;
    if (s == "linear_decay" || s == "linear") return Schedule::LinearDecay;
    throw ParameterError("unknown schedule '" + s + "'");
}

double lr_schedule(long t, Schedule kind, double base_lr, long warmup_steps, long total_steps) {
    if (t < 1) throw ParameterError("lr_schedule: t must be >= 1");
    const double tt = static_cast<double>(t);
    switch (kind) {
    case Schedule::InvSqrtWarmup: {
        if (warmup_steps < 1) throw ParameterError("lr_schedule: warmup_steps must be >= 1");
        const double w = static_cast<double>(warmup_steps);
        return base_lr * std::min(std::sqrt(w / tt), tt / w);
    }
    case Schedule::InvSqrtNoWarmup:
        return base_lr / std::sqrt(tt);
    case Schedule::LinearDecay: {
        if (total_steps < 1) throw ParameterError("lr_schedule: total_steps must be >= 1");
        return base_lr * std::max(0.0, 1.0 - tt / static_cast<double>(total_steps));
    }
    }
    return base_lr;
}

} // namespace rlab
