#include "residual_lab/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rlab {

namespace {

constexpr std::uint64_t kBatchStream = 0xA0761D6478BD642FULL;
constexpr std::uint64_t kHeadStream = 0xE7037ED1A0B428DBULL;

NetworkConfig network_for(const CopyTaskConfig& c, Variant variant) {
    NetworkConfig n;
    n.variant = variant;
    n.depth = c.depth;
    n.width = c.width;
    n.seq_len = c.seq_len;
    n.hidden = 4 * c.width;
    n.blocks = NetworkConfig::default_pattern(c.depth, InitMode::Training);
    n.init = InitMode::Training;
    n.ln_mode = LnMode{LnVariant::Exact, false};
    n.seed = c.seed;
    return n;
}

Tensor embed(const Tensor& table, const std::vector<std::size_t>& tokens) {
    const std::size_t d = table.cols();
    Tensor x({tokens.size(), d});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto src = table.row(tokens[i]);
        std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    return x;
}

// Cross-entropy summed over rows; optionally writes softmax - onehot into grad.
double cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets, Tensor* grad) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto z = logits.row(i);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        const double log_sum = mx + std::log(sum);
        total += log_sum - z[targets[i]];
        if (grad) {
            auto g = grad->row(i);
            for (std::size_t j = 0; j < z.size(); ++j) g[j] = std::exp(z[j] - log_sum);
            g[targets[i]] -= 1.0;
        }
    }
    return total;
}

} // namespace

void CopyTaskConfig::validate() const {
    if (vocab < 2 || seq_len < 2) throw ParameterError("copy task needs vocab >= 2 and seq_len >= 2");
    if (batch == 0 || width == 0) throw ParameterError("copy task needs batch and width > 0");
}

CopyBatch make_copy_batch(const CopyTaskConfig& config, Rng& rng) {
    config.validate();
    CopyBatch b;
    for (std::size_t s = 0; s < config.batch; ++s) {
        std::vector<std::size_t> seq(config.seq_len);
        for (auto& t : seq) t = static_cast<std::size_t>(rng.uniform_index(config.vocab));
        b.targets.push_back(seq);
        b.tokens.push_back(std::move(seq));
    }
    return b;
}

CopyModel CopyModel::create(const CopyTaskConfig& config, Variant variant) {
    config.validate();
    CopyModel m;
    m.net = build_network(network_for(config, variant));
    // Attention queries start at zero so attention begins uniform.
    for (auto& b : m.net.blocks) {
        if (b.kind == BlockKind::Attn) b.weights[BlockParams::kWq].fill(0.0);
    }
    Rng rng(config.seed ^ kHeadStream);
    m.embedding = gaussian_tensor(rng, {config.vocab, config.width}, 0.0, 1.0);
    // Small head keeps initial logits near zero, so the first loss is close to ln V.
    m.head = gaussian_tensor(rng, {config.width, config.vocab}, 0.0,
                             0.1 / std::sqrt(static_cast<double>(config.width)));
    m.grad_embedding = Tensor::zeros_like(m.embedding);
    m.grad_head = Tensor::zeros_like(m.head);
    return m;
}

void CopyModel::zero_grad() {
    net.zero_grad();
    grad_embedding.fill(0.0);
    grad_head.fill(0.0);
}

namespace {

// All sequences of the batch stacked row-wise, with targets in the same order.
struct Stacked {
    std::vector<std::size_t> tokens;
    std::vector<std::size_t> targets;
};

Stacked stack(const CopyBatch& batch) {
    Stacked s;
    for (std::size_t i = 0; i < batch.tokens.size(); ++i) {
        if (batch.tokens[i].size() != batch.targets[i].size()) {
            throw DimensionError("copy batch: tokens and targets differ in length");
        }
        s.tokens.insert(s.tokens.end(), batch.tokens[i].begin(), batch.tokens[i].end());
        s.targets.insert(s.targets.end(), batch.targets[i].begin(), batch.targets[i].end());
    }
    return s;
}

} // namespace

double CopyModel::loss(const CopyBatch& batch) const {
    const Stacked s = stack(batch);
    ForwardTrace trace = forward(embed(embedding, s.tokens), net);
    return cross_entropy(matmul(trace.y, head), s.targets, nullptr) / static_cast<double>(s.targets.size());
}

double CopyModel::loss_and_grad(const CopyBatch& batch) {
    const Stacked s = stack(batch);
    const double inv_count = 1.0 / static_cast<double>(s.targets.size());

    ForwardTrace trace = forward(embed(embedding, s.tokens), net);
    Tensor logits = matmul(trace.y, head);
    Tensor d_logits = Tensor::zeros_like(logits);
    const double total = cross_entropy(logits, s.targets, &d_logits);
    d_logits *= inv_count;

    grad_head += matmul_tn(trace.y, d_logits);
    Tensor d_y = matmul_nt(d_logits, head);
    GradReport rep = backward(d_y, trace, net, BackwardOptions{false});
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        auto src = rep.input_grad.row(i);
        auto dst = grad_embedding.row(s.tokens[i]);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
    return total * inv_count;
}

std::vector<Tensor*> CopyModel::parameters() {
    std::vector<Tensor*> out{&embedding};
    for (auto& b : net.blocks)
        for (auto& w : b.weights) out.push_back(&w);
    out.push_back(&head);
    return out;
}

std::vector<Tensor*> CopyModel::gradients() {
    std::vector<Tensor*> out{&grad_embedding};
    for (auto& b : net.blocks)
        for (auto& g : b.grads) out.push_back(&g);
    out.push_back(&grad_head);
    return out;
}

std::vector<AdamState> make_optimizer(CopyModel& model, const CopyTaskConfig& config) {
    const AdamHyper hyper{config.base_lr, 0.9, 0.98, config.adam_eps};
    std::vector<AdamState> states;
    for (auto* p : model.parameters()) states.emplace_back(p->shape(), hyper);
    return states;
}

double train_step(CopyModel& model, std::vector<AdamState>& states, const CopyBatch& batch, double lr,
                  bool* grads_finite, double* grad_norm) {
    auto params = model.parameters();
    auto grads = model.gradients();
    if (states.size() != params.size()) throw ParameterError("train_step: optimizer does not match model");

    model.zero_grad();
    const double loss = model.loss_and_grad(batch);
    double gmax = 0.0;
    bool finite = true;
    for (auto* g : grads) {
        gmax = std::max(gmax, frobenius_norm(*g));
        finite = finite && all_finite(*g);
    }
    if (grads_finite) *grads_finite = finite;
    if (grad_norm) *grad_norm = gmax;
    if (!finite) return loss;

    for (std::size_t i = 0; i < params.size(); ++i) {
        states[i].hyper.alpha = lr;
        *params[i] -= adam_update(states[i], *grads[i]);
    }
    return loss;
}

std::vector<TrainRecord> train(const CopyTaskConfig& config, Variant variant, Schedule schedule) {
    config.validate();
    CopyModel model = CopyModel::create(config, variant);
    auto states = make_optimizer(model, config);
    Rng data_rng(config.seed ^ kBatchStream);

    std::vector<TrainRecord> records;
    const long total_steps = static_cast<long>(config.train_steps);
    double initial = std::numeric_limits<double>::quiet_NaN();
    long over_count = 0;
    bool diverged = false;

    for (long step = 0; step < total_steps; ++step) {
        const CopyBatch batch = make_copy_batch(config, data_rng);
        const double lr = lr_schedule(step + 1, schedule, config.base_lr, config.warmup_steps, total_steps);
        bool grads_finite = true;
        double gmax = 0.0;
        const double loss = train_step(model, states, batch, lr, &grads_finite, &gmax);
        if (step == 0) initial = loss;

        const bool blown = !std::isfinite(loss) || !grads_finite;
        over_count = std::isfinite(loss) && loss > kDivergenceFactor * initial ? over_count + 1 : 0;
        if (blown || over_count >= kDivergencePatience) diverged = true;
        records.push_back({step, loss, lr, gmax, diverged});
        if (blown) break;
    }
    return records;
}

void retain_freed_memory() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

double final_loss(const std::vector<TrainRecord>& records, std::size_t window) {
    if (records.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = std::min(window, records.size());
    double s = 0.0;
    for (std::size_t i = records.size() - n; i < records.size(); ++i) s += records[i].loss;
    return s / static_cast<double>(n);
}

} // namespace rlab
