#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "residual_lab/wiring.hpp"

namespace rlab {

// One per-layer statistic aggregated over seeds.
struct ProfileResult {
    std::size_t k = 0; // 1-based block index
    std::string statistic;
    double mean = 0.0;
    double stderr_mean = 0.0;
    std::optional<double> theory;
    bool boundary = false; // theory value uses the k >= N-1 convention
};

// Seeds used by the profilers: config.seed, config.seed + 1, ...
std::vector<std::uint64_t> profile_seeds(const NetworkConfig& config, std::size_t count);

// Input x ~ N(0, I) and target r ~ N(0, I), both n x d, for one seed. Drawn from a
// stream separate from the weight stream.
struct AnalysisSample {
    Tensor input;
    Tensor target;
};
AnalysisSample analysis_sample(const NetworkConfig& config, std::uint64_t seed);

// L = (1 / (n d)) * sum (y - r)^2 and its gradient with respect to y.
double analysis_loss(const Tensor& y, const Tensor& target);
Tensor analysis_loss_grad(const Tensor& y, const Tensor& target);

// Per-block ||dL/dw_k||_F at initialization, averaged over seeds. Statistic
// "grad_norm"; ResiDual also reports "post_norm" and "dual_norm". The grad_norm
// rows carry the closed-form curve rescaled to match the measured value at k = N.
std::vector<ProfileResult> gradnorm_profile(const NetworkConfig& config, std::size_t seeds);

// Per-block mean |x_ln[k+1] - x_ln[k]| over coordinates and seeds (statistic
// "rep_delta"). Pre-LN uses its own normalized inputs; Post-LN and ResiDual use the
// Post-LN-branch sequence.
std::vector<ProfileResult> repdelta_profile(const NetworkConfig& config, std::size_t seeds);

struct CurvePoint {
    std::size_t k;
    double value;
    bool boundary;
};

// Unnormalized closed-form gradient-norm curves for k = 1..N:
//   Post-LN  (1/2)^((N-k)/2) * exp(sqrt(N-k))
//   Pre-LN   sqrt(log(N-k) / N), with the log factor dropped for k >= N-1
//   ResiDual pointwise max of the two
std::vector<CurvePoint> theory_curves(Variant variant, std::size_t depth);
double postln_curve(std::size_t k, std::size_t depth);
double preln_curve(std::size_t k, std::size_t depth);

// Surrogate recurrences for representation-collapse statistics.
enum class Surrogate { PreLn, PostLn };

std::string to_string(Surrogate s);
Surrogate surrogate_from_string(const std::string& s);

struct CollapseSimConfig {
    std::size_t depth = 32;
    double sigma = 1.0;
    std::size_t trials = 100000;
    std::uint64_t seed = 0;
    Surrogate regime = Surrogate::PreLn;

    void validate() const;
};

struct CollapseRow {
    std::size_t k;
    double sample_var;
    double theory_var;
    double stderr_var; // sqrt(2 theory^2 / (M - 1))
};

// Variance of Delta_k = x_ln[k+1] - x_ln[k] per k over `trials` scalar coordinates.
std::vector<CollapseRow> collapse_simulation(const CollapseSimConfig& config);

// 2 / (sqrt(k) (sqrt(k-1) + sqrt(k)))
double preln_omega_sq(std::size_t k);
// 2 - 2 / sqrt(1 + sigma^2)
double postln_omega_sq(double sigma);

struct OutputDiffResult {
    double mean_abs_diff = 0.0;
    double stderr_mean = 0.0;
    std::optional<double> theory_bound;
};

// E|y_N - y_{N-1}| per coordinate under the Gaussian surrogate, with the depth
// N-1 and N models sharing their first N-1 block outputs. Pre-LN reports
// sqrt(2/pi) * omega_N (no value at N = 1); Post-LN and ResiDual report the
// lower bound sqrt(2/pi) * omega.
OutputDiffResult output_difference_experiment(Variant variant, std::size_t depth, double sigma,
                                              std::size_t trials, std::uint64_t seed);

// Least-squares slope of ys against xs.
double least_squares_slope(const std::vector<double>& xs, const std::vector<double>& ys);

// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

} // namespace rlab
