#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "residual_lab/tensor.hpp"

namespace rlab {

struct AdamHyper {
    double alpha = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
};

// Per-coordinate moments for one parameter tensor. `t` counts completed updates.
struct AdamState {
    Tensor m;
    Tensor v;
    long t = 0;
    AdamHyper hyper;

    AdamState() = default;
    AdamState(std::vector<std::size_t> shape, const AdamHyper& h);
};

// Advances the moments by one step and returns u = alpha * m_hat / (sqrt(v_hat) + eps).
// The caller applies w <- w - u.
Tensor adam_update(AdamState& state, const Tensor& g);

// Moment recursion only (m, v, t), without forming the update.
void adam_advance_moments(AdamState& state, const Tensor& g);

// du/dg for one coordinate at step `step` (1-based), given the moments
// m_prev = m^(step-1) and v_prev = v^(step-1) from before the update.
double adam_update_derivative(const AdamHyper& h, double m_prev, double v_prev, long step, double g);

// Absolute condition number of the update map at g: the l2 norm of the
// diagonal Jacobian du_i/dg_i, evaluated against the state's next step.
double kappa(const AdamState& state, const Tensor& g);

struct KappaSimConfig {
    std::size_t d = 1024;
    AdamHyper hyper{};
    std::vector<double> sigma_grid = default_sigma_grid();
    long t_max = 20;
    std::vector<std::uint64_t> seeds{0};

    static std::vector<double> default_sigma_grid();
};

struct KappaRow {
    long t;
    double sigma_g;
    double kappa;
    std::uint64_t seed;
};

struct KappaProbe {
    std::size_t d = 0;
    std::vector<double> sigma_grid;
    std::vector<KappaRow> rows; // ordered by seed, then sigma, then t
};

// For every (seed, sigma): a fresh state; at each step draw g ~ N(0, sigma^2 I),
// record kappa(state, g), then advance the moments with g.
KappaProbe kappa_simulation(const KappaSimConfig& config);

enum class Schedule { InvSqrtWarmup, InvSqrtNoWarmup, LinearDecay };

std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

double lr_schedule(long t, Schedule kind, double base_lr, long warmup_steps, long total_steps);

} // namespace rlab
