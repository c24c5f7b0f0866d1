#include "residual_lab/wiring.hpp"

#include <algorithm>
#include <cmath>

namespace rlab {

std::string to_string(Variant v) {
    switch (v) {
    case Variant::PostLn: return "post_ln";
    case Variant::PreLn: return "pre_ln";
    case Variant::ResiDual: return "residual";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "post_ln" || s == "post") return Variant::PostLn;
    if (s == "pre_ln" || s == "pre") return Variant::PreLn;
    if (s == "residual" || s == "resi_dual" || s == "ppln") return Variant::ResiDual;
    throw ParameterError("unknown variant '" + s + "'");
}

void NetworkConfig::validate() const {
    if (width == 0 || seq_len == 0) throw ParameterError("network width and seq_len must be positive");
    if (blocks.size() != depth) {
        throw ParameterError("block pattern has " + std::to_string(blocks.size()) +
                             " entries for depth " + std::to_string(depth));
    }
    const bool needs_hidden = std::find(blocks.begin(), blocks.end(), BlockKind::FfnRelu2) != blocks.end();
    if (needs_hidden && hidden == 0) throw ParameterError("ffn_relu2 blocks need hidden > 0");
    ln_mode.validate();
    if (ln_mode.affine) throw ParameterError("network layer norms are never affine");
}

std::vector<BlockKind> NetworkConfig::alternating(std::size_t depth, BlockKind first,
                                                  BlockKind second) {
    std::vector<BlockKind> out(depth);
    for (std::size_t i = 0; i < depth; ++i) out[i] = i % 2 == 0 ? first : second;
    return out;
}

std::vector<BlockKind> NetworkConfig::default_pattern(std::size_t depth, InitMode init) {
    return alternating(depth, BlockKind::Attn,
                       init == InitMode::Analysis ? BlockKind::FfnLinear : BlockKind::FfnRelu2);
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
    std::vector<std::string> kinds;
    for (auto k : c.blocks) kinds.push_back(to_string(k));
    j = nlohmann::json{{"variant", to_string(c.variant)},
                       {"depth", c.depth},
                       {"width", c.width},
                       {"seq_len", c.seq_len},
                       {"hidden", c.hidden},
                       {"blocks", kinds},
                       {"init", to_string(c.init)},
                       {"ln_mode", to_string(c.ln_mode.variant)},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.depth = j.at("depth").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.hidden = j.value("hidden", 4 * c.width);
    c.init = init_mode_from_string(j.value("init", std::string("analysis")));
    c.ln_mode = LnMode{ln_variant_from_string(j.value("ln_mode", std::string("exact"))), false};
    c.seed = j.value("seed", std::uint64_t{0});
    c.blocks.clear();
    if (j.contains("blocks")) {
        for (const auto& k : j.at("blocks")) c.blocks.push_back(block_kind_from_string(k.get<std::string>()));
    } else {
        c.blocks = NetworkConfig::default_pattern(c.depth, c.init);
    }
    c.validate();
}

void Network::zero_grad() {
    for (auto& b : blocks) b.zero_grad();
}

Network build_network(const NetworkConfig& config) {
    config.validate();
    Network net{config, {}};
    Rng rng(config.seed);
    for (auto kind : config.blocks) {
        net.blocks.push_back(init_block(kind, config.width, config.hidden, config.seq_len, config.init, rng));
    }
    return net;
}

GuardResult overflow_guard(const Tensor& xd, double threshold) {
    if (!(threshold > 0.0)) throw ParameterError("overflow_guard: threshold must be positive");
    if (!all_finite(xd)) throw OverflowError("overflow_guard: dual stream already non-finite");
    const double peak = max_abs(xd);
    if (peak <= threshold) return {xd, 1.0};
    const double eta = threshold / (2.0 * peak);
    return {xd * eta, eta};
}

namespace {

LnResult layer_norm_at(const Tensor& x, const LnMode& mode, const std::string& where) {
    try {
        return ln_forward(x, mode);
    } catch (const DegenerateInputError& e) {
        throw DegenerateInputError(e.row(), where);
    }
}

} // namespace

ForwardTrace forward(const Tensor& x_in, const Network& net, const ForwardOptions& options) {
    const NetworkConfig& cfg = net.config;
    require_matrix(x_in, "forward");
    // A stack of several length-n sequences is accepted; attention keeps them apart.
    if (x_in.rows() == 0 || x_in.rows() % cfg.seq_len != 0 || x_in.cols() != cfg.width) {
        throw DimensionError("forward: input " + x_in.shape_string() + " is not a stack of n x d = (" +
                             std::to_string(cfg.seq_len) + "x" + std::to_string(cfg.width) + ") sequences");
    }
    if (net.blocks.size() != cfg.depth) throw DimensionError("forward: network has wrong block count");

    const std::size_t depth = cfg.depth;
    ForwardTrace t;
    t.variant = cfg.variant;
    t.depth = depth;

    if (cfg.variant == Variant::PreLn) {
        t.x_a.push_back(x_in);
        for (std::size_t i = 0; i < depth; ++i) {
            LnResult ln = layer_norm_at(t.x_a[i], cfg.ln_mode, "layer " + std::to_string(i + 1));
            t.x_ln.push_back(std::move(ln.y));
            t.ln.push_back(std::move(ln.cache));
            BlockResult f = block_forward(t.x_ln[i], net.blocks[i], cfg.seq_len);
            t.x_a.push_back(t.x_a[i] + f.y);
            t.x_f.push_back(std::move(f.y));
            t.block.push_back(std::move(f.cache));
        }
        LnResult out = layer_norm_at(t.x_a[depth], cfg.ln_mode, "output");
        t.x_ln.push_back(out.y);
        t.post_out_ln = std::move(out.cache);
        t.post_out = out.y;
        t.y = std::move(out.y);
        return t;
    }

    const bool dual = cfg.variant == Variant::ResiDual;
    t.x_ln.push_back(x_in);
    if (dual) t.x_d.push_back(x_in);
    for (std::size_t i = 0; i < depth; ++i) {
        BlockResult f = block_forward(t.x_ln[i], net.blocks[i], cfg.seq_len);
        t.x_a.push_back(t.x_ln[i] + f.y);
        LnResult ln = layer_norm_at(t.x_a[i], cfg.ln_mode, "layer " + std::to_string(i + 1));
        t.x_ln.push_back(std::move(ln.y));
        t.ln.push_back(std::move(ln.cache));
        if (dual) {
            double threshold = options.overflow_threshold;
            if (options.forced && options.forced->layer == i) threshold = options.forced->threshold;
            // Block outputs join the stream in its current (possibly rescaled) units.
            const double gain = i == 0 ? 1.0 : t.dual_gain[i - 1] * t.dual_scale[i - 1];
            GuardResult g = overflow_guard(t.x_d[i] + f.y * gain, threshold);
            t.x_d.push_back(std::move(g.value));
            t.dual_scale.push_back(g.scale);
            t.dual_gain.push_back(gain);
        }
        t.x_f.push_back(std::move(f.y));
        t.block.push_back(std::move(f.cache));
    }

    if (depth == 0) {
        LnResult out = layer_norm_at(x_in, cfg.ln_mode, "output");
        t.post_out_ln = std::move(out.cache);
        t.post_out = std::move(out.y);
    } else {
        t.post_out = t.x_ln[depth];
    }

    if (dual) {
        LnResult d = layer_norm_at(t.x_d[depth], cfg.ln_mode, "dual output");
        t.dual_out_ln = std::move(d.cache);
        t.y = t.post_out + d.y;
    } else {
        t.y = t.post_out;
    }
    return t;
}

SweepResult reverse_sweep(const ForwardTrace& trace, const Network& net, const Tensor* post_seed,
                          const Tensor* dual_seed) {
    const LnMode& mode = net.config.ln_mode;
    const std::size_t depth = trace.depth;
    const Tensor zero = Tensor::zeros_like(trace.y);
    const Tensor& g_out = post_seed ? *post_seed : zero;

    SweepResult out;
    out.weight_grads.resize(depth);

    if (trace.variant == Variant::PreLn) {
        Tensor g_a = ln_backward(g_out, *trace.post_out_ln, mode);
        for (std::size_t i = depth; i-- > 0;) {
            BlockVjp vjp = block_vjp(g_a, trace.block[i], net.blocks[i]);
            g_a += ln_backward(vjp.input_grad, trace.ln[i], mode);
            out.weight_grads[i] = std::move(vjp.weight_grads);
        }
        out.input_grad = std::move(g_a);
        return out;
    }

    const bool dual = trace.variant == Variant::ResiDual;
    Tensor g_dual = zero;
    if (dual && dual_seed) g_dual = ln_backward(*dual_seed, *trace.dual_out_ln, mode);

    if (depth == 0) {
        out.input_grad = ln_backward(g_out, *trace.post_out_ln, mode);
        if (dual) out.input_grad += g_dual;
        return out;
    }

    Tensor g_ln = g_out;
    for (std::size_t i = depth; i-- > 0;) {
        Tensor g_a = ln_backward(g_ln, trace.ln[i], mode);
        Tensor g_f = g_a;
        if (dual) {
            g_dual *= trace.dual_scale[i];
            g_f.axpy(trace.dual_gain[i], g_dual);
        }
        BlockVjp vjp = block_vjp(g_f, trace.block[i], net.blocks[i]);
        g_ln = std::move(g_a);
        g_ln += vjp.input_grad;
        out.weight_grads[i] = std::move(vjp.weight_grads);
    }
    out.input_grad = std::move(g_ln);
    if (dual) out.input_grad += g_dual;
    return out;
}

namespace {

double norm_of(const std::vector<Tensor>& grads) {
    double sq = 0.0;
    for (const auto& g : grads) {
        const double f = frobenius_norm(g);
        sq += f * f;
    }
    return std::sqrt(sq);
}

} // namespace

GradReport backward(const Tensor& loss_grad, ForwardTrace& trace, Network& net,
                    const BackwardOptions& options) {
    if (trace.consumed) throw StaleTraceError("backward: trace already consumed");
    if (trace.variant != net.config.variant || trace.depth != net.blocks.size()) {
        throw StaleTraceError("backward: trace does not belong to this network");
    }
    require_same_shape(loss_grad, trace.y, "backward");

    GradReport r;
    r.variant = trace.variant;
    const bool dual = trace.variant == Variant::ResiDual;

    // The total always comes from one sweep seeded on both outputs, so the
    // decomposition below is checked against it rather than defining it.
    SweepResult joint = reverse_sweep(trace, net, &loss_grad, dual ? &loss_grad : nullptr);
    r.total = std::move(joint.weight_grads);
    r.input_grad = std::move(joint.input_grad);

    if (dual && options.decompose) {
        SweepResult post = reverse_sweep(trace, net, &loss_grad, nullptr);
        SweepResult dl = reverse_sweep(trace, net, nullptr, &loss_grad);
        r.decomposed = true;
        for (std::size_t k = 0; k < trace.depth; ++k) {
            r.post_norm.push_back(norm_of(post.weight_grads[k]));
            r.dual_norm.push_back(norm_of(dl.weight_grads[k]));
        }
        r.post = std::move(post.weight_grads);
        r.dual = std::move(dl.weight_grads);
    }

    for (std::size_t k = 0; k < trace.depth; ++k) {
        r.total_norm.push_back(norm_of(r.total[k]));
        for (std::size_t s = 0; s < r.total[k].size(); ++s) net.blocks[k].grads[s] += r.total[k][s];
    }
    trace.consumed = true;
    return r;
}

} // namespace rlab
