#include "residual_lab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "residual_lab/parallel.hpp"

namespace rlab {

namespace {

struct MeanSe {
    double mean;
    double se;
};

MeanSe mean_and_se(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

// Welford accumulator for a running mean and variance.
struct Moments {
    double n = 0.0, mean = 0.0, m2 = 0.0;

    void add(double x) {
        n += 1.0;
        const double delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
    }
    double sample_var() const { return n > 1.0 ? m2 / (n - 1.0) : 0.0; }
};

constexpr std::uint64_t kDataStream = 0xD1B54A32D192ED03ULL;

} // namespace

std::vector<std::uint64_t> profile_seeds(const NetworkConfig& config, std::size_t count) {
    std::vector<std::uint64_t> out(count);
    std::iota(out.begin(), out.end(), config.seed);
    return out;
}

AnalysisSample analysis_sample(const NetworkConfig& config, std::uint64_t seed) {
    Rng rng(seed ^ kDataStream);
    Tensor x = gaussian_tensor(rng, {config.seq_len, config.width}, 0.0, 1.0);
    Tensor r = gaussian_tensor(rng, {config.seq_len, config.width}, 0.0, 1.0);
    return {std::move(x), std::move(r)};
}

double analysis_loss(const Tensor& y, const Tensor& target) {
    require_same_shape(y, target, "analysis_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - target[i]) * (y[i] - target[i]);
    return s / static_cast<double>(y.size());
}

Tensor analysis_loss_grad(const Tensor& y, const Tensor& target) {
    require_same_shape(y, target, "analysis_loss_grad");
    Tensor g = y - target;
    g *= 2.0 / static_cast<double>(y.size());
    return g;
}

std::vector<ProfileResult> gradnorm_profile(const NetworkConfig& config, std::size_t seeds) {
    config.validate();
    if (seeds == 0) throw ParameterError("gradnorm_profile: need at least one seed");
    const auto seed_list = profile_seeds(config, seeds);
    const std::size_t depth = config.depth;
    struct PerSeed {
        std::vector<double> total, post, dual;
    };
    std::vector<PerSeed> runs(seeds);

    parallel_for(seeds, [&](std::size_t s) {
        NetworkConfig cfg = config;
        cfg.seed = seed_list[s];
        Network net = build_network(cfg);
        AnalysisSample sample = analysis_sample(cfg, cfg.seed);
        ForwardTrace trace = forward(sample.input, net);
        Tensor g = analysis_loss_grad(trace.y, sample.target);
        GradReport rep = backward(g, trace, net);
        runs[s] = {rep.total_norm, rep.post_norm, rep.dual_norm};
    });

    std::vector<ProfileResult> out;
    auto collect = [&](const std::string& name, auto member) {
        for (std::size_t k = 0; k < depth; ++k) {
            std::vector<double> xs;
            for (const auto& r : runs) xs.push_back((r.*member)[k]);
            const MeanSe ms = mean_and_se(xs);
            out.push_back({k + 1, name, ms.mean, ms.se, std::nullopt, false});
        }
    };
    collect("grad_norm", &PerSeed::total);
    if (config.variant == Variant::ResiDual) {
        collect("post_norm", &PerSeed::post);
        collect("dual_norm", &PerSeed::dual);
    }

    if (depth >= 2) {
        const auto curve = theory_curves(config.variant, depth);
        const double scale = out[depth - 1].mean / curve[depth - 1].value;
        for (std::size_t k = 0; k < depth; ++k) {
            out[k].theory = scale * curve[k].value;
            out[k].boundary = curve[k].boundary;
        }
    }
    return out;
}

std::vector<ProfileResult> repdelta_profile(const NetworkConfig& config, std::size_t seeds) {
    config.validate();
    if (seeds == 0) throw ParameterError("repdelta_profile: need at least one seed");
    const auto seed_list = profile_seeds(config, seeds);
    const std::size_t depth = config.depth;
    std::vector<std::vector<double>> runs(seeds);

    parallel_for(seeds, [&](std::size_t s) {
        NetworkConfig cfg = config;
        cfg.seed = seed_list[s];
        Network net = build_network(cfg);
        AnalysisSample sample = analysis_sample(cfg, cfg.seed);
        ForwardTrace trace = forward(sample.input, net);
        std::vector<double> deltas(depth);
        for (std::size_t k = 0; k < depth; ++k) {
            const Tensor& a = trace.x_ln[k];
            const Tensor& b = trace.x_ln[k + 1];
            double acc = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(b[i] - a[i]);
            deltas[k] = acc / static_cast<double>(a.size());
        }
        runs[s] = std::move(deltas);
    });

    std::vector<ProfileResult> out;
    for (std::size_t k = 0; k < depth; ++k) {
        std::vector<double> xs;
        for (const auto& r : runs) xs.push_back(r[k]);
        const MeanSe ms = mean_and_se(xs);
        out.push_back({k + 1, "rep_delta", ms.mean, ms.se, std::nullopt, false});
    }
    return out;
}

double postln_curve(std::size_t k, std::size_t depth) {
    const double gap = static_cast<double>(depth - k);
    return std::pow(0.5, gap / 2.0) * std::exp(std::sqrt(gap));
}

double preln_curve(std::size_t k, std::size_t depth) {
    const double n = static_cast<double>(depth);
    // log(N - k) is undefined at k = N and zero at k = N - 1; drop the factor there.
    if (k + 1 >= depth) return std::sqrt(1.0 / n);
    return std::sqrt(std::log(static_cast<double>(depth - k)) / n);
}

std::vector<CurvePoint> theory_curves(Variant variant, std::size_t depth) {
    if (depth < 2) throw ParameterError("theory_curves: depth must be >= 2");
    std::vector<CurvePoint> out;
    for (std::size_t k = 1; k <= depth; ++k) {
        const bool edge = k + 1 >= depth;
        switch (variant) {
        case Variant::PostLn: out.push_back({k, postln_curve(k, depth), false}); break;
        case Variant::PreLn: out.push_back({k, preln_curve(k, depth), edge}); break;
        case Variant::ResiDual:
            out.push_back({k, std::max(postln_curve(k, depth), preln_curve(k, depth)), edge});
            break;
        }
    }
    return out;
}

std::string to_string(Surrogate s) { return s == Surrogate::PreLn ? "preln_surrogate" : "postln_surrogate"; }

Surrogate surrogate_from_string(const std::string& s) {
    if (s == "preln_surrogate" || s == "pre_ln" || s == "preln") return Surrogate::PreLn;
    if (s == "postln_surrogate" || s == "post_ln" || s == "postln") return Surrogate::PostLn;
    throw ParameterError("unknown surrogate regime '" + s + "'");
}

void CollapseSimConfig::validate() const {
    if (!(sigma > 0.0)) throw ParameterError("collapse simulation: sigma must be positive");
    if (trials < 10000) throw ParameterError("collapse simulation: need at least 1e4 trials");
    if (depth == 0) throw ParameterError("collapse simulation: depth must be positive");
}

double preln_omega_sq(std::size_t k) {
    const double kk = static_cast<double>(k);
    return 2.0 / (std::sqrt(kk) * (std::sqrt(kk - 1.0) + std::sqrt(kk)));
}

double postln_omega_sq(double sigma) { return 2.0 - 2.0 / std::sqrt(1.0 + sigma * sigma); }

std::vector<CollapseRow> collapse_simulation(const CollapseSimConfig& config) {
    config.validate();
    const std::size_t depth = config.depth;
    const double sigma = config.sigma;
    const double post_scale = 1.0 / std::sqrt(1.0 + sigma * sigma);
    Rng rng(config.seed);
    std::vector<Moments> acc(depth);

    for (std::size_t m = 0; m < config.trials; ++m) {
        // x_ln[1] is a standardized input independent of every block output.
        double x_ln = rng.gaussian();
        double x_a = 0.0;
        for (std::size_t k = 1; k <= depth; ++k) {
            const double f = rng.gaussian(0.0, sigma);
            double next;
            if (config.regime == Surrogate::PreLn) {
                // x_a[k+1] = sum of the first k block outputs; LN acts as division by its std.
                x_a += f;
                next = x_a / (std::sqrt(static_cast<double>(k)) * sigma);
            } else {
                next = (x_ln + f) * post_scale;
            }
            acc[k - 1].add(next - x_ln);
            x_ln = next;
        }
    }

    std::vector<CollapseRow> out;
    const double m1 = static_cast<double>(config.trials) - 1.0;
    for (std::size_t k = 1; k <= depth; ++k) {
        const double theory =
            config.regime == Surrogate::PreLn ? preln_omega_sq(k) : postln_omega_sq(sigma);
        out.push_back({k, acc[k - 1].sample_var(), theory, std::sqrt(2.0 * theory * theory / m1)});
    }
    return out;
}

OutputDiffResult output_difference_experiment(Variant variant, std::size_t depth, double sigma,
                                              std::size_t trials, std::uint64_t seed) {
    if (depth == 0) throw ParameterError("output_difference_experiment: depth must be >= 1");
    if (!(sigma > 0.0) || trials < 2) throw ParameterError("output_difference_experiment: bad sigma or trials");
    const double post_scale = 1.0 / std::sqrt(1.0 + sigma * sigma);
    const double s2 = sigma * sigma;
    Rng rng(seed);
    Moments abs_diff;

    for (std::size_t m = 0; m < trials; ++m) {
        const double x_in = rng.gaussian();
        double x_ln = x_in; // x_ln[k] of the running chain
        double prev_ln = x_in;
        double x_a = 0.0;
        double x_d = x_in;
        double prev_d = x_in;
        for (std::size_t k = 1; k <= depth; ++k) {
            const double f = rng.gaussian(0.0, sigma);
            prev_ln = x_ln;
            prev_d = x_d;
            if (variant == Variant::PreLn) {
                x_a += f;
                x_ln = x_a / (std::sqrt(static_cast<double>(k)) * sigma);
            } else {
                x_ln = (x_ln + f) * post_scale;
                x_d += f;
            }
        }
        double diff = x_ln - prev_ln;
        if (variant == Variant::ResiDual) {
            // Dual stream x_d[k] ~ N(0, 1 + (k-1) sigma^2); LN rescales it to unit variance.
            const double n = static_cast<double>(depth);
            diff += x_d / std::sqrt(1.0 + n * s2) - prev_d / std::sqrt(1.0 + (n - 1.0) * s2);
        }
        abs_diff.add(std::abs(diff));
    }

    OutputDiffResult r;
    r.mean_abs_diff = abs_diff.mean;
    r.stderr_mean = std::sqrt(abs_diff.sample_var() / static_cast<double>(trials));
    const double folded = std::sqrt(2.0 / std::numbers::pi);
    if (variant == Variant::PreLn) {
        if (depth >= 2) r.theory_bound = folded * std::sqrt(preln_omega_sq(depth));
    } else {
        r.theory_bound = folded * std::sqrt(postln_omega_sq(sigma));
    }
    return r;
}

double least_squares_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw ParameterError("least_squares_slope: need >= 2 paired points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return sxy / sxx;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw ParameterError("spearman: need >= 2 paired points");
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace rlab
