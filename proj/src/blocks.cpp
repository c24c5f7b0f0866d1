#include "residual_lab/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace rlab {

std::string to_string(BlockKind kind) {
    switch (kind) {
    case BlockKind::FfnLinear: return "ffn_linear";
    case BlockKind::FfnRelu2: return "ffn_relu2";
    case BlockKind::Attn: return "attn";
    }
    return "?";
}

std::string to_string(InitMode mode) {
    return mode == InitMode::Analysis ? "analysis" : "training";
}

std::string to_string(LnVariant variant) {
    return variant == LnVariant::Exact ? "exact" : "approx_jacobian";
}

BlockKind block_kind_from_string(const std::string& s) {
    if (s == "ffn_linear") return BlockKind::FfnLinear;
    if (s == "ffn_relu2") return BlockKind::FfnRelu2;
    if (s == "attn") return BlockKind::Attn;
    throw ParameterError("unknown block kind '" + s + "'");
}

InitMode init_mode_from_string(const std::string& s) {
    if (s == "analysis") return InitMode::Analysis;
    if (s == "training") return InitMode::Training;
    throw ParameterError("unknown init mode '" + s + "'");
}

LnVariant ln_variant_from_string(const std::string& s) {
    if (s == "exact") return LnVariant::Exact;
    if (s == "approx_jacobian") return LnVariant::ApproxJacobian;
    throw ParameterError("unknown ln mode '" + s + "'");
}

DegenerateInputError::DegenerateInputError(std::size_t row, const std::string& context)
    : std::runtime_error("layer norm: zero-variance input at row " + std::to_string(row) +
                         (context.empty() ? "" : " (" + context + ")")),
      row_(row) {}

void LnMode::validate() const {
    if (variant == LnVariant::ApproxJacobian && affine) {
        throw ParameterError("approximate-Jacobian layer norm cannot be affine");
    }
}

LnAffine LnAffine::identity(std::size_t d) {
    return {Tensor({d}, 1.0), Tensor({d}, 0.0), Tensor({d}, 0.0), Tensor({d}, 0.0)};
}

namespace {

void check_affine(const LnMode& mode, const LnAffine* affine, std::size_t d) {
    if (!mode.affine) return;
    if (affine == nullptr) throw ParameterError("affine layer norm needs gain and bias");
    if (affine->gain.size() != d || affine->bias.size() != d) {
        throw DimensionError("layer norm affine parameters do not match width " +
                             std::to_string(d));
    }
}

} // namespace

LnResult ln_forward(const Tensor& x, const LnMode& mode, const LnAffine* affine) {
    mode.validate();
    require_matrix(x, "ln_forward");
    const std::size_t n = x.rows(), d = x.cols();
    check_affine(mode, affine, d);

    LnResult out{Tensor({n, d}), LnCache{x, Tensor({n, d}), std::vector<double>(n)}};
    for (std::size_t i = 0; i < n; ++i) {
        auto row = x.row(i);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        if (!(var > kLnMinVariance)) throw DegenerateInputError(i);

        const double inv_std = 1.0 / std::sqrt(var);
        out.cache.inv_std[i] = inv_std;
        auto z = out.cache.normalized.row(i);
        auto y = out.y.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            z[j] = (row[j] - mean) * inv_std;
            y[j] = mode.affine ? z[j] * affine->gain[j] + affine->bias[j] : z[j];
        }
    }
    return out;
}

Tensor ln_backward(const Tensor& upstream, const LnCache& cache, const LnMode& mode,
                   LnAffine* affine) {
    mode.validate();
    require_same_shape(upstream, cache.input, "ln_backward");
    const std::size_t n = upstream.rows(), d = upstream.cols();
    Tensor dx({n, d});

    if (mode.variant == LnVariant::ApproxJacobian) {
        const double sqrt_d = std::sqrt(static_cast<double>(d));
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (double v : cache.input.row(i)) sq += v * v;
            const double scale = sqrt_d / std::sqrt(sq);
            auto g = upstream.row(i);
            auto o = dx.row(i);
            for (std::size_t j = 0; j < d; ++j) o[j] = scale * g[j];
        }
        return dx;
    }

    check_affine(mode, affine, d);
    std::vector<double> g(d);
    for (std::size_t i = 0; i < n; ++i) {
        auto up = upstream.row(i);
        auto z = cache.normalized.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            if (mode.affine) {
                affine->grad_gain[j] += up[j] * z[j];
                affine->grad_bias[j] += up[j];
                g[j] = up[j] * affine->gain[j];
            } else {
                g[j] = up[j];
            }
        }
        double mean_g = 0.0, mean_gz = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mean_g += g[j];
            mean_gz += g[j] * z[j];
        }
        mean_g /= static_cast<double>(d);
        mean_gz /= static_cast<double>(d);
        auto o = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            o[j] = cache.inv_std[i] * (g[j] - mean_g - z[j] * mean_gz);
        }
    }
    return dx;
}

void BlockParams::zero_grad() {
    for (auto& g : grads) g.fill(0.0);
}

double BlockParams::grad_norm() const {
    double sq = 0.0;
    for (const auto& g : grads) {
        const double f = frobenius_norm(g);
        sq += f * f;
    }
    return std::sqrt(sq);
}

void BlockParams::validate() const {
    const std::size_t expected = kind == BlockKind::FfnLinear ? 1 : kind == BlockKind::FfnRelu2 ? 2 : 3;
    if (weights.size() != expected || grads.size() != expected) {
        throw DimensionError("block " + to_string(kind) + " expects " + std::to_string(expected) +
                             " weight matrices");
    }
    for (std::size_t i = 0; i < expected; ++i) {
        require_matrix(weights[i], "block weight");
        require_same_shape(weights[i], grads[i], "block gradient accumulator");
    }
    const std::size_t d = weights[0].rows();
    if (kind == BlockKind::FfnRelu2) {
        const std::size_t h = weights[kW1].cols();
        if (weights[kW2].rows() != h || weights[kW2].cols() != d) {
            throw DimensionError("ffn_relu2: W2 must be h x d");
        }
    } else {
        for (const auto& w : weights) {
            if (w.rows() != d || w.cols() != d) {
                throw DimensionError(to_string(kind) + ": weights must be d x d");
            }
        }
    }
}

namespace {

void require_input(const Tensor& x, const BlockParams& p) {
    require_matrix(x, "block_forward");
    if (x.cols() != p.width()) {
        throw DimensionError("block input width " + std::to_string(x.cols()) +
                             " does not match block width " + std::to_string(p.width()));
    }
}

// Row-wise softmax with max subtraction.
void softmax_rows(Tensor& s) {
    for (std::size_t i = 0; i < s.rows(); ++i) {
        auto r = s.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double sum = 0.0;
        for (auto& v : r) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto& v : r) v /= sum;
    }
}

Tensor row_slice(const Tensor& a, std::size_t begin, std::size_t count) {
    const std::size_t c = a.cols();
    auto src = a.data().subspan(begin * c, count * c);
    return Tensor({count, c}, std::vector<double>(src.begin(), src.end()));
}

void put_rows(Tensor& dst, std::size_t begin, const Tensor& src) {
    std::copy(src.data().begin(), src.data().end(), dst.data().begin() + begin * dst.cols());
}

std::size_t resolve_group(std::size_t group, std::size_t rows) {
    if (group == 0) return rows;
    if (rows % group != 0) {
        throw DimensionError("attention group " + std::to_string(group) + " does not divide " +
                             std::to_string(rows) + " rows");
    }
    return group;
}

} // namespace

BlockResult block_forward(const Tensor& x, const BlockParams& p, std::size_t group) {
    p.validate();
    require_input(x, p);
    const std::size_t g = resolve_group(group, x.rows());
    BlockResult out{Tensor(), BlockCache{p.kind, x, {}, g, false}};

    switch (p.kind) {
    case BlockKind::FfnLinear:
        out.y = matmul(x, p.weights[BlockParams::kW]);
        break;
    case BlockKind::FfnRelu2: {
        Tensor pre = matmul(x, p.weights[BlockParams::kW1]);
        Tensor act = pre;
        for (auto& v : act.data()) v = std::max(v, 0.0);
        out.y = matmul(act, p.weights[BlockParams::kW2]);
        out.cache.saved = {std::move(pre)};
        break;
    }
    case BlockKind::Attn: {
        Tensor q = matmul(x, p.weights[BlockParams::kWq]);
        Tensor k = matmul(x, p.weights[BlockParams::kWk]);
        Tensor v = matmul(x, p.weights[BlockParams::kWv]);
        const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
        // probs row i holds the weights of row i over its own group.
        Tensor probs({x.rows(), g});
        out.y = Tensor({x.rows(), v.cols()});
        for (std::size_t b = 0; b < x.rows(); b += g) {
            Tensor s = matmul_nt(row_slice(q, b, g), row_slice(k, b, g));
            s *= scale;
            softmax_rows(s);
            put_rows(out.y, b, matmul(s, row_slice(v, b, g)));
            put_rows(probs, b, s);
        }
        out.cache.saved = {std::move(q), std::move(k), std::move(v), std::move(probs)};
        break;
    }
    }
    return out;
}

BlockVjp block_vjp(const Tensor& upstream, const BlockCache& cache, const BlockParams& p) {
    if (cache.kind != p.kind) throw StaleCacheError("block cache kind does not match params");
    const Tensor& x = cache.input;
    require_matrix(upstream, "block_vjp");
    if (upstream.rows() != x.rows() || upstream.cols() != p.width()) {
        throw DimensionError("block_vjp: upstream " + upstream.shape_string() +
                             " does not match output shape");
    }

    BlockVjp out;
    switch (p.kind) {
    case BlockKind::FfnLinear: {
        out.weight_grads = {matmul_tn(x, upstream)};
        out.input_grad = matmul_nt(upstream, p.weights[BlockParams::kW]);
        break;
    }
    case BlockKind::FfnRelu2: {
        const Tensor& pre = cache.saved.at(0);
        Tensor act = pre;
        for (auto& v : act.data()) v = std::max(v, 0.0);
        Tensor d_w2 = matmul_tn(act, upstream);
        Tensor d_act = matmul_nt(upstream, p.weights[BlockParams::kW2]);
        auto da = d_act.data();
        auto pp = pre.data();
        for (std::size_t i = 0; i < da.size(); ++i) {
            if (!(pp[i] > 0.0)) da[i] = 0.0;
        }
        Tensor d_w1 = matmul_tn(x, d_act);
        out.input_grad = matmul_nt(d_act, p.weights[BlockParams::kW1]);
        out.weight_grads = {std::move(d_w1), std::move(d_w2)};
        break;
    }
    case BlockKind::Attn: {
        const Tensor& q = cache.saved.at(0);
        const Tensor& k = cache.saved.at(1);
        const Tensor& v = cache.saved.at(2);
        const Tensor& probs = cache.saved.at(3);
        const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));

        const std::size_t g = resolve_group(cache.group, x.rows());
        Tensor d_q = Tensor::zeros_like(q), d_k = Tensor::zeros_like(k), d_v = Tensor::zeros_like(v);
        for (std::size_t b = 0; b < x.rows(); b += g) {
            const Tensor pb = row_slice(probs, b, g);
            const Tensor ub = row_slice(upstream, b, g);
            put_rows(d_v, b, matmul_tn(pb, ub));
            // Softmax Jacobian per row: dS = P * (dP - <dP, P>).
            Tensor d_scores = matmul_nt(ub, row_slice(v, b, g));
            for (std::size_t i = 0; i < g; ++i) {
                auto pr = pb.row(i);
                auto dr = d_scores.row(i);
                double dot = 0.0;
                for (std::size_t j = 0; j < pr.size(); ++j) dot += pr[j] * dr[j];
                for (std::size_t j = 0; j < pr.size(); ++j) dr[j] = pr[j] * (dr[j] - dot) * scale;
            }
            put_rows(d_q, b, matmul(d_scores, row_slice(k, b, g)));
            put_rows(d_k, b, matmul_tn(d_scores, row_slice(q, b, g)));
        }

        out.input_grad = matmul_nt(d_q, p.weights[BlockParams::kWq]);
        out.input_grad += matmul_nt(d_k, p.weights[BlockParams::kWk]);
        out.input_grad += matmul_nt(d_v, p.weights[BlockParams::kWv]);
        out.weight_grads = {matmul_tn(x, d_q), matmul_tn(x, d_k), matmul_tn(x, d_v)};
        break;
    }
    }
    return out;
}

Tensor block_backward(const Tensor& upstream, BlockCache& cache, BlockParams& p) {
    if (cache.consumed) throw StaleCacheError("block_backward called twice on one forward");
    BlockVjp vjp = block_vjp(upstream, cache, p);
    for (std::size_t i = 0; i < p.grads.size(); ++i) p.grads[i] += vjp.weight_grads[i];
    cache.consumed = true;
    return std::move(vjp.input_grad);
}

BlockParams init_block(BlockKind kind, std::size_t d, std::size_t h, std::size_t n, InitMode mode,
                       Rng& rng) {
    if (d == 0 || n == 0) throw ParameterError("init_block: d and n must be positive");
    if (kind == BlockKind::FfnRelu2 && h == 0) throw ParameterError("init_block: h must be positive");
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(d));

    BlockParams p;
    p.kind = kind;
    switch (kind) {
    case BlockKind::FfnLinear:
        p.weights = {gaussian_tensor(rng, {d, d}, 0.0, std_dev)};
        break;
    case BlockKind::FfnRelu2:
        p.weights = {gaussian_tensor(rng, {d, h}, 0.0, std_dev),
                     gaussian_tensor(rng, {h, d}, 0.0, std_dev)};
        break;
    case BlockKind::Attn:
        p.weights = {gaussian_tensor(rng, {d, d}, 0.0, std_dev),
                     gaussian_tensor(rng, {d, d}, 0.0, std_dev),
                     gaussian_tensor(rng, {d, d}, 0.0, std_dev)};
        if (mode == InitMode::Analysis) p.weights[BlockParams::kWq].fill(0.0);
        break;
    }
    for (const auto& w : p.weights) p.grads.push_back(Tensor::zeros_like(w));
    return p;
}

} // namespace rlab
