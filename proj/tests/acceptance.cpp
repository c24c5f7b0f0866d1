// Acceptance suite: one PASS/FAIL line per criterion. Exit status 1 when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "residual_lab/adam.hpp"
#include "residual_lab/cli.hpp"
#include "residual_lab/csv_output.hpp"
#include "residual_lab/theory.hpp"
#include "residual_lab/train.hpp"
#include "residual_lab/wiring.hpp"

using namespace rlab;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [miss] " << what << ';';
        }
    }
    void note(const std::string& s) { detail << ' ' << s << ';'; }
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<void(Verdict&)>& body) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(v);
    } catch (const std::exception& e) {
        v.pass = false;
        v.detail << " exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    v.require(secs < budget_s, "runtime " + num(secs) + "s over budget " + num(budget_s) + "s");
    if (!v.pass) ++failures;
    std::printf("%s C%-2d %s (%.2fs):%s\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), secs, v.detail.str().c_str());
    std::fflush(stdout);
}

double scalar_update(const AdamHyper& h, double m_prev, double v_prev, long step, double g) {
    AdamState s({1}, h);
    s.m[0] = m_prev;
    s.v[0] = v_prev;
    s.t = step - 1;
    return adam_update(s, Tensor({1}, std::vector<double>{g}))[0];
}

NetworkConfig profile_config(Variant v, std::uint64_t seed = 0) {
    NetworkConfig c;
    c.variant = v;
    c.depth = 24;
    c.width = 64;
    c.seq_len = 16;
    c.hidden = 256;
    c.blocks.assign(24, BlockKind::FfnLinear);
    c.init = InitMode::Analysis;
    c.seed = seed;
    return c;
}

std::vector<double> stat_means(const std::vector<ProfileResult>& rows, const std::string& stat) {
    std::vector<double> out;
    for (const auto& r : rows)
        if (r.statistic == stat) out.push_back(r.mean);
    return out;
}

} // namespace

int main() {
    retain_freed_memory();
    criterion(1, "Adam conditioning", 1.0, [](Verdict& v) {
        KappaSimConfig c; // d=1024, alpha=1e-4, eps=1e-6, betas (0.9, 0.98), t_max=20
        c.sigma_grid = {0.0};
        const KappaProbe p = kappa_simulation(c);
        const double k1 = p.rows.front().kappa, k20 = p.rows.back().kappa;
        v.note("kappa(t=1)=" + num(k1) + " kappa(t=20)=" + num(k20));
        v.require(p.rows.front().t == 1 && p.rows.back().t == 20, "t range");
        v.require(std::abs(k1 / 3200.0 - 1.0) < 1e-9, "kappa(t=1) == 3200");
        v.require(k20 > 300.0, "kappa(t=20) > 300");
    });

    criterion(2, "Adam derivative vs finite differences", 5.0, [](Verdict& v) {
        Rng rng(2024);
        const AdamHyper h{1e-4, 0.9, 0.98, 1e-6};
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            const double scale = std::pow(10.0, -9.0 + 7.0 * rng.uniform());
            const long step = 1 + static_cast<long>(rng.uniform_index(40));
            const double m_prev = step == 1 ? 0.0 : rng.gaussian(0.0, scale);
            const double v_prev = step == 1 ? 0.0 : scale * scale * (0.1 + rng.uniform());
            double g = rng.gaussian(0.0, scale);
            if (g == 0.0) g = scale;
            const double hs = 1e-5 * std::abs(g);
            const double numeric = (scalar_update(h, m_prev, v_prev, step, g + hs) -
                                    scalar_update(h, m_prev, v_prev, step, g - hs)) / (2.0 * hs);
            const double analytic = adam_update_derivative(h, m_prev, v_prev, step, g);
            worst = std::max(worst, std::abs(analytic - numeric) / std::abs(numeric));
        }
        v.note("100 states, worst rel err " + num(worst));
        v.require(worst < 1e-3, "rel err < 1e-3");
    });

    criterion(3, "Collapse law", 30.0, [](Verdict& v) {
        CollapseSimConfig pre;
        pre.regime = Surrogate::PreLn;
        const auto rp = collapse_simulation(pre);
        double worst = 0.0;
        for (std::size_t k : {1u, 2u, 4u, 8u, 16u, 32u}) {
            const auto& r = rp[k - 1];
            worst = std::max(worst, std::abs(r.sample_var - r.theory_var) / r.stderr_var);
        }
        v.note("pre_ln worst |dev|/SE " + num(worst));
        v.require(worst < 3.0, "pre_ln within 3 SE at k in {1,2,4,8,16,32}");
        v.require(std::abs(preln_omega_sq(1) - 2.0) < 1e-15 &&
                      std::abs(preln_omega_sq(4) - (2.0 - std::sqrt(3.0))) < 1e-12,
                  "omega_1^2 = 2, omega_4^2 = 2 - sqrt 3");

        CollapseSimConfig post;
        post.regime = Surrogate::PostLn;
        post.seed = 1;
        const auto rq = collapse_simulation(post);
        std::vector<double> ks, vs;
        for (std::size_t k = 2; k <= 32; ++k) {
            ks.push_back(static_cast<double>(k));
            vs.push_back(rq[k - 1].sample_var);
        }
        const double slope = least_squares_slope(ks, vs);
        double worst_post = 0.0;
        for (std::size_t k : {1u, 2u, 4u, 8u, 16u, 32u}) {
            const auto& r = rq[k - 1];
            worst_post = std::max(worst_post, std::abs(r.sample_var - (2.0 - std::sqrt(2.0))) / r.stderr_var);
        }
        v.note("post_ln slope " + num(slope) + ", worst |dev|/SE " + num(worst_post));
        v.require(std::abs(slope) < 1e-3, "post_ln |slope| < 1e-3");
        v.require(worst_post < 3.0, "post_ln matches 2 - sqrt 2 within 3 SE");
    });

    criterion(4, "Output-difference bounds", 30.0, [](Verdict& v) {
        const double bound = std::sqrt(2.0 / std::numbers::pi) * std::sqrt(2.0 - std::sqrt(2.0));
        const std::vector<std::size_t> depths{4, 8, 16, 32, 64};
        for (Variant var : {Variant::PostLn, Variant::ResiDual}) {
            double worst = 1e300;
            for (std::size_t n : depths) {
                const auto r = output_difference_experiment(var, n, 1.0, 100000, 40 + n);
                worst = std::min(worst, (r.mean_abs_diff - bound) / r.stderr_mean);
            }
            v.note(to_string(var) + " min (E|dy| - bound)/SE " + num(worst));
            v.require(worst >= -3.0, to_string(var) + " E|dy| >= sqrt(2/pi) omega - 3 SE");
        }
        std::vector<double> pre;
        for (std::size_t n : depths) pre.push_back(output_difference_experiment(Variant::PreLn, n, 1.0, 100000, 40 + n).mean_abs_diff);
        bool decreasing = true;
        for (std::size_t i = 1; i < pre.size(); ++i) decreasing = decreasing && pre[i] < pre[i - 1];
        v.note("pre_ln E|dy| N=4.." + num(pre.front()) + " N=64.." + num(pre.back()));
        v.require(decreasing, "pre_ln strictly decreasing from N=4 to N=64");
    });

    criterion(5, "Gradient correctness", 30.0, [](Verdict& v) {
        const LnMode exact{};
        double worst = 0.0;
        int instances = 0;
        Rng rng(5);
        // Blocks and LN alone.
        for (int t = 0; t < 20; ++t) {
            for (auto kind : {BlockKind::FfnLinear, BlockKind::FfnRelu2, BlockKind::Attn}) {
                BlockParams p = init_block(kind, 4, 8, 3, InitMode::Training, rng);
                Tensor x = gaussian_tensor(rng, {3, 4}, 0.0, 1.0);
                const Tensor w = gaussian_tensor(rng, {3, 4}, 0.0, 1.0);
                auto loss = [&] { return oracle::dot(block_forward(x, p).y, w); };
                BlockResult f = block_forward(x, p);
                const Tensor dx = block_backward(w, f.cache, p);
                worst = std::max(worst, oracle::rel_err(dx, oracle::numeric_grad(x, loss)));
                for (std::size_t s = 0; s < p.weights.size(); ++s) {
                    const Tensor g = p.grads[s];
                    worst = std::max(worst, oracle::rel_err(g, oracle::numeric_grad(p.weights[s], loss)));
                }
                ++instances;
            }
            Tensor x = gaussian_tensor(rng, {3, 6}, 0.0, 2.0);
            const Tensor w = gaussian_tensor(rng, {3, 6}, 0.0, 1.0);
            const LnResult f = ln_forward(x, exact);
            const Tensor dx = ln_backward(w, f.cache, exact);
            worst = std::max(worst, oracle::rel_err(dx, oracle::numeric_grad(x, [&] {
                                                        return oracle::dot(ln_forward(x, exact).y, w);
                                                    })));
            ++instances;
        }
        // Whole wirings, N <= 3, d <= 8.
        const BlockKind cycle[] = {BlockKind::Attn, BlockKind::FfnRelu2, BlockKind::FfnLinear};
        for (Variant var : {Variant::PostLn, Variant::PreLn, Variant::ResiDual}) {
            for (std::uint64_t seed = 0; seed < 20; ++seed) {
                NetworkConfig c;
                c.variant = var;
                c.depth = 1 + seed % 3;
                c.width = 4 + 2 * (seed % 3);
                c.seq_len = 3;
                c.hidden = 2 * c.width;
                for (std::size_t i = 0; i < c.depth; ++i) c.blocks.push_back(cycle[(i + seed) % 3]);
                c.init = InitMode::Training;
                c.seed = 1000 + seed;
                Network net = build_network(c);
                Tensor x = gaussian_tensor(rng, {c.seq_len, c.width}, 0.0, 1.0);
                const Tensor w = gaussian_tensor(rng, {c.seq_len, c.width}, 0.0, 1.0);
                auto loss = [&] { return oracle::dot(forward(x, net).y, w); };
                ForwardTrace t = forward(x, net);
                const GradReport rep = backward(w, t, net, BackwardOptions{false});
                worst = std::max(worst, oracle::rel_err(rep.input_grad, oracle::numeric_grad(x, loss)));
                for (std::size_t k = 0; k < c.depth; ++k)
                    for (std::size_t s = 0; s < net.blocks[k].weights.size(); ++s)
                        worst = std::max(worst, oracle::rel_err(rep.total[k][s], oracle::numeric_grad(net.blocks[k].weights[s], loss)));
                ++instances;
            }
        }
        v.note(std::to_string(instances) + " instances, worst rel err " + num(worst));
        v.require(worst < 1e-5, "rel err < 1e-5");
    });

    criterion(6, "Gradient decomposition (post + dual)", 10.0, [](Verdict& v) {
        double worst = 0.0;
        const BlockKind cycle[] = {BlockKind::Attn, BlockKind::FfnRelu2, BlockKind::FfnLinear};
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            NetworkConfig c;
            c.variant = Variant::ResiDual;
            c.depth = 2 + seed % 5;
            c.width = 8;
            c.seq_len = 4;
            c.hidden = 16;
            for (std::size_t i = 0; i < c.depth; ++i) c.blocks.push_back(cycle[(i + seed) % 3]);
            c.init = seed % 2 ? InitMode::Training : InitMode::Analysis;
            c.seed = seed;
            Network net = build_network(c);
            const AnalysisSample s = analysis_sample(c, seed);
            ForwardTrace t = forward(s.input, net);
            const GradReport rep = backward(analysis_loss_grad(t.y, s.target), t, net);
            for (std::size_t k = 0; k < c.depth; ++k)
                for (std::size_t i = 0; i < rep.total[k].size(); ++i)
                    worst = std::max(worst, max_abs_diff(rep.total[k][i], rep.post[k][i] + rep.dual[k][i]));
        }
        v.note("10 configs, max |total - post - dual| " + num(worst));
        v.require(worst < 1e-10, "entrywise 1e-10");
    });

    criterion(7, "Vanishing-gradient profile", 120.0, [](Verdict& v) {
        const auto post = stat_means(gradnorm_profile(profile_config(Variant::PostLn), 10), "grad_norm");
        const auto pre = stat_means(gradnorm_profile(profile_config(Variant::PreLn), 10), "grad_norm");
        const auto res = stat_means(gradnorm_profile(profile_config(Variant::ResiDual), 10), "grad_norm");
        const double post_ratio = post.front() / post.back();
        const double pre_ratio = *std::max_element(pre.begin(), pre.end()) / *std::min_element(pre.begin(), pre.end());
        const double res_min = *std::min_element(res.begin(), res.end());
        const double pre_min = *std::min_element(pre.begin(), pre.end());
        v.note("post_ln k1/kN " + num(post_ratio));
        v.note("pre_ln max/min " + num(pre_ratio));
        v.note("residual min / pre_ln min " + num(res_min / pre_min));
        v.require(post_ratio <= 0.1, "post_ln block-1 norm <= 0.1x block-N norm");
        v.require(pre_ratio < 3.0, "pre_ln max/min < 3");
        v.require(res_min >= 0.5 * pre_min, "residual min >= 0.5x pre_ln min");
    });

    criterion(8, "Representation profile", 60.0, [](Verdict& v) {
        const auto pre = stat_means(repdelta_profile(profile_config(Variant::PreLn), 10), "rep_delta");
        const auto res = stat_means(repdelta_profile(profile_config(Variant::ResiDual), 10), "rep_delta");
        const double pre_ratio = pre[15] / pre[0], res_ratio = res[15] / res[0];
        v.note("pre_ln k16/k1 " + num(pre_ratio) + ", residual k16/k1 " + num(res_ratio));
        v.require(pre_ratio < 0.5, "pre_ln k16 < 0.5x k1");
        v.require(res_ratio >= 0.5 && res_ratio <= 2.0, "residual ratio in [0.5, 2]");
    });

    criterion(9, "LN scale invariance under forced downscale", 1.0, [](Verdict& v) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const Network net = build_network(profile_config(Variant::ResiDual, seed));
            const AnalysisSample s = analysis_sample(net.config, seed);
            const Tensor plain = forward(s.input, net).y;
            ForwardOptions opts;
            opts.forced = ForcedDownscale{seed * 4, 1e-3};
            const ForwardTrace scaled = forward(s.input, net, opts);
            v.require(scaled.dual_scale[seed * 4] < 1.0, "downscale fired");
            worst = std::max(worst, max_abs_diff(plain, scaled.y));
        }
        v.note("max |y - y_scaled| " + num(worst));
        v.require(worst < 1e-12, "equal to 1e-12");
    });

    criterion(10, "Warm-up study", 600.0, [](Verdict& v) {
        const CopyTaskConfig cfg; // V=16, n=16, 2000 steps, b=32, d=32, N=12
        struct Run {
            Variant variant;
            Schedule schedule;
            double initial = 0.0, final = 0.0;
            bool diverged = false;
        };
        std::vector<Run> runs{{Variant::ResiDual, Schedule::LinearDecay},
                              {Variant::PreLn, Schedule::LinearDecay},
                              {Variant::PostLn, Schedule::LinearDecay},
                              {Variant::PostLn, Schedule::InvSqrtWarmup}};
        for (auto& r : runs) {
            const auto recs = train(cfg, r.variant, r.schedule);
            r.initial = recs.front().loss;
            r.final = final_loss(recs);
            r.diverged = recs.back().diverged;
            v.note(to_string(r.variant) + "/" + to_string(r.schedule) + " " + num(r.initial) + "->" + num(r.final) +
                   (r.diverged ? " diverged" : ""));
        }
        v.require(!runs[0].diverged && runs[0].final < 0.1 * runs[0].initial, "residual without warm-up < 0.1x initial");
        v.require(!runs[1].diverged && runs[1].final < 0.1 * runs[1].initial, "pre_ln without warm-up < 0.1x initial");
        v.require(runs[2].diverged || runs[2].final > 0.5 * runs[2].initial,
                  "post_ln without warm-up diverges or stays above 0.5x initial");
        v.require(!runs[3].diverged && runs[3].final < 0.1 * runs[3].initial, "post_ln with warm-up < 0.1x initial");
    });

    criterion(11, "Reproducibility of CLI outputs", 300.0, [](Verdict& v) {
        const fs::path root = fs::temp_directory_path() / "residual_lab_acceptance";
        fs::remove_all(root);
        const std::vector<std::vector<std::string>> cmds = {
            {"gradnorm"},  {"repdelta"},  {"omega-sim"}, {"output-diff"},
            {"adam-kappa"}, {"gradcheck"}, {"train", "--steps", "100"}, {"curves"},
        };
        int same = 0;
        // The CLI reports written paths on stdout; keep this report to one line per criterion.
        std::ostringstream sink;
        struct Restore {
            std::streambuf* buf;
            ~Restore() { std::cout.rdbuf(buf); }
        } restore{std::cout.rdbuf(sink.rdbuf())};
        for (const auto& c : cmds) {
            std::vector<std::string> bodies;
            for (const char* tag : {"a", "b"}) {
                const fs::path dir = root / (c[0] + "_" + tag);
                auto args = c;
                args.push_back("--out");
                args.push_back(dir.string());
                const int code = cli::run(args);
                v.require(code == 0, c[0] + " exit code " + std::to_string(code));
                if (!fs::exists(dir)) continue;
                for (const auto& e : fs::directory_iterator(dir)) bodies.push_back(read_csv_body(e.path()));
            }
            const bool ok = bodies.size() == 2 && bodies[0] == bodies[1] && !bodies[0].empty();
            v.require(ok, c[0] + " bodies identical");
            same += ok ? 1 : 0;
        }
        fs::remove_all(root);
        v.note(std::to_string(same) + "/" + std::to_string(cmds.size()) + " commands byte-identical");
    });

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
