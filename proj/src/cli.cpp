#include "residual_lab/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "residual_lab/adam.hpp"
#include "residual_lab/csv_output.hpp"
#include "residual_lab/gradcheck.hpp"
#include "residual_lab/theory.hpp"
#include "residual_lab/train.hpp"

namespace rlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Outcome {
    CsvTable table;
    std::vector<std::uint64_t> seeds;
    bool ok = true;
};

struct Command {
    std::string name;
    std::string help;
    json defaults; // every key doubles as a --flag
    std::function<Outcome(const json&)> exec;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

json coerce_scalar(const std::string& raw, const json& like, const std::string& key) {
    try {
        std::size_t used = 0;
        json v;
        if (like.is_number_unsigned()) {
            if (!raw.empty() && raw[0] == '-') throw std::invalid_argument("negative");
            v = static_cast<std::uint64_t>(std::stoull(raw, &used));
        } else if (like.is_number_integer()) {
            v = static_cast<std::int64_t>(std::stoll(raw, &used));
        } else if (like.is_number_float()) {
            v = std::stod(raw, &used);
        } else if (like.is_boolean()) {
            if (raw != "true" && raw != "false") throw std::invalid_argument("bool");
            return raw == "true";
        } else {
            return raw;
        }
        if (used != raw.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw UsageError("bad value '" + raw + "' for --" + key);
    }
}

json coerce(const std::string& raw, const json& like, const std::string& key) {
    if (!like.is_array()) return coerce_scalar(raw, like, key);
    const json elem = like.empty() ? json("") : like.front();
    json out = json::array();
    for (const auto& part : split_list(raw)) out.push_back(coerce_scalar(part, elem, key));
    return out;
}

std::vector<std::uint64_t> seed_list(const json& cfg) {
    const auto base = cfg.at("seed").get<std::uint64_t>();
    const auto count = cfg.value("num_seeds", std::uint64_t{1});
    if (count == 0) throw ParameterError("num_seeds must be positive");
    std::vector<std::uint64_t> out;
    for (std::uint64_t i = 0; i < count; ++i) out.push_back(base + i);
    return out;
}

std::vector<Variant> variants_of(const json& cfg) {
    const auto v = cfg.at("variant").get<std::string>();
    if (v == "all") return {Variant::PostLn, Variant::PreLn, Variant::ResiDual};
    return {variant_from_string(v)};
}

// The block list cycles when shorter than the depth.
NetworkConfig network_from(const json& cfg, Variant variant) {
    NetworkConfig n;
    n.variant = variant;
    n.depth = cfg.at("depth").get<std::size_t>();
    n.width = cfg.at("width").get<std::size_t>();
    n.seq_len = cfg.at("seq_len").get<std::size_t>();
    const auto hidden = cfg.at("hidden").get<std::size_t>();
    n.hidden = hidden == 0 ? 4 * n.width : hidden;
    n.init = init_mode_from_string(cfg.at("init").get<std::string>());
    n.ln_mode = LnMode{ln_variant_from_string(cfg.at("ln_mode").get<std::string>()), false};
    n.seed = cfg.at("seed").get<std::uint64_t>();
    std::vector<BlockKind> pattern;
    for (const auto& k : cfg.at("blocks")) pattern.push_back(block_kind_from_string(k.get<std::string>()));
    if (pattern.empty()) throw ParameterError("blocks must name at least one block kind");
    for (std::size_t i = 0; i < n.depth; ++i) n.blocks.push_back(pattern[i % pattern.size()]);
    n.validate();
    return n;
}

json network_defaults() {
    return {{"variant", "all"},   {"depth", 24u},        {"width", 64u},
            {"seq_len", 16u},     {"hidden", 0u},        {"blocks", {"ffn_linear"}},
            {"init", "analysis"}, {"ln_mode", "exact"}, {"seed", 0u},
            {"num_seeds", 10u}};
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }

Outcome profile_command(const json& cfg, bool gradients) {
    Outcome o;
    o.table.header = {"variant", "k", "statistic", "mean", "stderr", "theory", "boundary"};
    o.seeds = seed_list(cfg);
    for (Variant v : variants_of(cfg)) {
        NetworkConfig n = network_from(cfg, v);
        const auto rows = gradients ? gradnorm_profile(n, o.seeds.size()) : repdelta_profile(n, o.seeds.size());
        for (const auto& r : rows) {
            o.table.add_row({to_string(v), fmt(r.k), r.statistic, fmt(r.mean), fmt(r.stderr_mean),
                             r.theory ? fmt(*r.theory) : "", r.boundary ? "1" : "0"});
        }
    }
    return o;
}

Outcome curves_command(const json& cfg) {
    Outcome o;
    o.table.header = {"variant", "k", "value", "boundary"};
    const auto depth = cfg.at("depth").get<std::size_t>();
    for (Variant v : variants_of(cfg)) {
        for (const auto& p : theory_curves(v, depth)) {
            o.table.add_row({to_string(v), fmt(p.k), fmt(p.value), p.boundary ? "1" : "0"});
        }
    }
    return o;
}

Outcome omega_command(const json& cfg) {
    Outcome o;
    o.table.header = {"regime", "k", "sample_var", "theory_var", "stderr_var"};
    o.seeds = {cfg.at("seed").get<std::uint64_t>()};
    const auto regime = cfg.at("regime").get<std::string>();
    std::vector<Surrogate> regimes;
    if (regime == "both") {
        regimes = {Surrogate::PreLn, Surrogate::PostLn};
    } else {
        regimes = {surrogate_from_string(regime)};
    }
    for (Surrogate s : regimes) {
        CollapseSimConfig c;
        c.depth = cfg.at("depth").get<std::size_t>();
        c.sigma = cfg.at("sigma").get<double>();
        c.trials = cfg.at("trials").get<std::size_t>();
        c.seed = o.seeds.front();
        c.regime = s;
        for (const auto& r : collapse_simulation(c)) {
            o.table.add_row({to_string(s), fmt(r.k), fmt(r.sample_var), fmt(r.theory_var), fmt(r.stderr_var)});
        }
    }
    return o;
}

Outcome output_diff_command(const json& cfg) {
    Outcome o;
    o.table.header = {"variant", "N", "mean_abs_diff", "stderr", "theory"};
    o.seeds = {cfg.at("seed").get<std::uint64_t>()};
    const double sigma = cfg.at("sigma").get<double>();
    const auto trials = cfg.at("trials").get<std::size_t>();
    for (Variant v : variants_of(cfg)) {
        for (const auto& d : cfg.at("depths")) {
            const auto depth = d.get<std::size_t>();
            const auto r = output_difference_experiment(v, depth, sigma, trials, o.seeds.front());
            o.table.add_row({to_string(v), fmt(depth), fmt(r.mean_abs_diff), fmt(r.stderr_mean),
                             r.theory_bound ? fmt(*r.theory_bound) : ""});
        }
    }
    return o;
}

Outcome kappa_command(const json& cfg) {
    Outcome o;
    o.table.header = {"seed", "t", "sigma_g", "kappa"};
    o.seeds = seed_list(cfg);
    KappaSimConfig c;
    c.d = cfg.at("d").get<std::size_t>();
    c.hyper = AdamHyper{cfg.at("alpha").get<double>(), cfg.at("beta1").get<double>(),
                        cfg.at("beta2").get<double>(), cfg.at("eps").get<double>()};
    c.t_max = cfg.at("tmax").get<long>();
    c.sigma_grid = cfg.at("sigmas").get<std::vector<double>>();
    c.seeds = o.seeds;
    for (const auto& r : kappa_simulation(c).rows) {
        o.table.add_row({std::to_string(r.seed), std::to_string(r.t), fmt(r.sigma_g), fmt(r.kappa)});
    }
    return o;
}

Outcome gradcheck_command(const json& cfg) {
    Outcome o;
    o.table.header = {"variant", "seed", "tensor", "analytic_norm", "rel_error", "pass"};
    o.seeds = seed_list(cfg);
    const double tol = cfg.at("tol").get<double>();
    for (Variant v : variants_of(cfg)) {
        for (auto seed : o.seeds) {
            json c = cfg;
            c["seed"] = seed;
            const auto rep = network_gradcheck(network_from(c, v));
            for (const auto& e : rep.entries) {
                const bool pass = e.rel_error < tol;
                o.ok = o.ok && pass;
                o.table.add_row({to_string(v), std::to_string(seed), e.name, fmt(e.analytic_norm),
                                 fmt(e.rel_error), pass ? "1" : "0"});
            }
        }
    }
    return o;
}

Outcome train_command(const json& cfg) {
    Outcome o;
    o.table.header = {"step", "loss", "lr", "grad_norm", "diverged"};
    CopyTaskConfig c;
    c.vocab = cfg.at("vocab").get<std::size_t>();
    c.seq_len = cfg.at("seq_len").get<std::size_t>();
    c.train_steps = cfg.at("steps").get<std::size_t>();
    c.batch = cfg.at("batch").get<std::size_t>();
    c.width = cfg.at("width").get<std::size_t>();
    c.depth = cfg.at("depth").get<std::size_t>();
    c.seed = cfg.at("seed").get<std::uint64_t>();
    c.base_lr = cfg.at("base_lr").get<double>();
    c.warmup_steps = cfg.at("warmup").get<long>();
    c.adam_eps = cfg.at("adam_eps").get<double>();
    o.seeds = {c.seed};
    const auto records = train(c, variant_from_string(cfg.at("variant").get<std::string>()),
                               schedule_from_string(cfg.at("schedule").get<std::string>()));
    for (const auto& r : records) {
        o.table.add_row({std::to_string(r.step), fmt(r.loss), fmt(r.lr), fmt(r.grad_norm), r.diverged ? "1" : "0"});
    }
    return o;
}

std::vector<Command> commands() {
    json gradcheck_defaults = network_defaults();
    gradcheck_defaults.update(json{{"depth", 3u},
                                   {"width", 6u},
                                   {"seq_len", 4u},
                                   {"blocks", {"attn", "ffn_relu2", "ffn_linear"}},
                                   {"init", "training"},
                                   {"num_seeds", 5u},
                                   {"tol", 1e-5}});
    return {
        {"gradnorm", "Per-block gradient norms at initialization", network_defaults(),
         [](const json& c) { return profile_command(c, true); }},
        {"repdelta", "Per-block mean |x_ln[k+1] - x_ln[k]|", network_defaults(),
         [](const json& c) { return profile_command(c, false); }},
        {"omega-sim", "Collapse surrogate variances against closed forms",
         {{"regime", "both"}, {"depth", 32u}, {"sigma", 1.0}, {"trials", 100000u}, {"seed", 0u}},
         omega_command},
        {"output-diff", "E|y_N - y_(N-1)| under the Gaussian surrogate",
         {{"variant", "all"},
          {"depths", {1u, 2u, 4u, 8u, 16u, 32u, 64u}},
          {"sigma", 1.0},
          {"trials", 100000u},
          {"seed", 0u}},
         output_diff_command},
        {"adam-kappa", "Condition number of the Adam update over steps and gradient noise",
         {{"d", 1024u},
          {"alpha", 1e-4},
          {"eps", 1e-6},
          {"beta1", 0.9},
          {"beta2", 0.98},
          {"tmax", 20},
          {"sigmas", KappaSimConfig::default_sigma_grid()},
          {"seed", 0u},
          {"num_seeds", 1u}},
         kappa_command},
        {"gradcheck", "Finite-difference check of every gradient; exit 1 on any failure",
         gradcheck_defaults, gradcheck_command},
        {"train", "Copy-task training run",
         {{"variant", "residual"},
          {"schedule", "linear_decay"},
          {"vocab", 16u},
          {"seq_len", 16u},
          {"steps", 2000u},
          {"batch", 32u},
          {"width", 32u},
          {"depth", 12u},
          {"seed", 0u},
          {"base_lr", 5e-4},
          {"warmup", 200},
          {"adam_eps", 1e-8}},
         train_command},
        {"curves", "Closed-form gradient-norm curves", {{"variant", "all"}, {"depth", 24u}}, curves_command},
    };
}

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("config file " + path + ": " + e.what());
    }
}

} // namespace

int run(const std::vector<std::string>& args) {
    const auto cmds = commands();
    CLI::App app{"residual_lab: residual-wiring experiments"};
    app.require_subcommand(0, 1);
    app.set_version_flag("--version", library_version());

    std::map<std::string, std::map<std::string, std::string>> raw;
    std::map<std::string, std::string> config_path, out_dir;
    std::map<std::string, CLI::App*> subs;
    for (const auto& c : cmds) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        subs[c.name] = sub;
        out_dir[c.name] = ".";
        sub->add_option("--config", config_path[c.name], "JSON file with any of the keys below");
        sub->add_option("--out", out_dir[c.name], "Output directory")->capture_default_str();
        for (const auto& [key, value] : c.defaults.items()) {
            std::string shown = value.is_array() ? value.dump() : (value.is_string() ? value.get<std::string>() : value.dump());
            sub->add_option("--" + key, raw[c.name][key], "default " + shown);
        }
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    const Command* chosen = nullptr;
    for (const auto& c : cmds)
        if (subs[c.name]->parsed()) chosen = &c;
    if (!chosen) {
        std::cerr << app.help();
        return kExitUsage;
    }

    json cfg = chosen->defaults;
    try {
        if (!config_path[chosen->name].empty()) {
            const json file = load_config(config_path[chosen->name]);
            if (!file.is_object()) throw UsageError("config file must hold a JSON object");
            for (const auto& [key, value] : file.items()) {
                if (!cfg.contains(key)) throw UsageError("unknown config key '" + key + "'");
                cfg[key] = value;
            }
        }
        CLI::App* sub = subs[chosen->name];
        for (const auto& [key, value] : chosen->defaults.items()) {
            if (sub->count("--" + key) > 0) cfg[key] = coerce(raw[chosen->name][key], value, key);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    Outcome outcome;
    try {
        outcome = chosen->exec(cfg);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: bad config value: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "experiment failed: " << e.what() << '\n';
        return kExitFailure;
    }

    const std::uint64_t seed = cfg.contains("seed") ? cfg.at("seed").get<std::uint64_t>() : 0;
    const fs::path dir = out_dir[chosen->name];
    const fs::path path = dir / output_filename(chosen->name, seed, cfg);
    try {
        std::error_code ec;
        fs::create_directories(dir, ec);
        json meta{{"command", chosen->name}, {"config", cfg}, {"seeds", outcome.seeds}};
        write_csv(path, outcome.table, meta);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    std::cout << path.string() << '\n';
    if (!outcome.ok) {
        std::cerr << chosen->name << ": check failed\n";
        return kExitFailure;
    }
    return kExitOk;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

} // namespace rlab::cli
