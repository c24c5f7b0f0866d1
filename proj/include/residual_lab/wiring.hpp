#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "residual_lab/blocks.hpp"
#include "residual_lab/tensor.hpp"

namespace rlab {

enum class Variant { PostLn, PreLn, ResiDual };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct NetworkConfig {
    Variant variant = Variant::PreLn;
    std::size_t depth = 1;
    std::size_t width = 8;
    std::size_t seq_len = 4;
    std::size_t hidden = 32;
    std::vector<BlockKind> blocks;
    InitMode init = InitMode::Analysis;
    LnMode ln_mode;
    std::uint64_t seed = 0;

    void validate() const;

    // Alternates `first`, `second`, `first`, ... for `depth` layers.
    static std::vector<BlockKind> alternating(std::size_t depth, BlockKind first, BlockKind second);
    // Attention interleaved with the feed-forward kind matching the init mode.
    static std::vector<BlockKind> default_pattern(std::size_t depth, InitMode init);
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

struct Network {
    NetworkConfig config;
    std::vector<BlockParams> blocks;

    void zero_grad();
};

// Draws every block from Rng(config.seed) in layer order.
Network build_network(const NetworkConfig& config);

class OverflowError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GuardResult {
    Tensor value;
    double scale = 1.0;
};

inline constexpr double kFp16GuardThreshold = 6.0e4;

// Rescales xd by threshold / (2 max|xd|) when max|xd| exceeds the threshold.
GuardResult overflow_guard(const Tensor& xd, double threshold = kFp16GuardThreshold);

struct ForcedDownscale {
    std::size_t layer = 0; // 0-based block index whose dual-stream update is guarded
    double threshold = 1.0;
};

struct ForwardOptions {
    double overflow_threshold = kFp16GuardThreshold;
    std::optional<ForcedDownscale> forced;
};

// Activations use 0-based vectors; entry i holds the 1-based layer index i + 1.
//   PostLn / ResiDual: x_ln has depth + 1 entries (x_ln[0] = input), x_a and x_f
//     have depth entries, ln[i] normalizes x_a[i] into x_ln[i + 1].
//   PreLn: x_a has depth + 1 entries (x_a[0] = input), ln[i] normalizes x_a[i]
//     into x_ln[i]; x_ln[depth] is the output y.
//   ResiDual: x_d has depth + 1 entries. x_d[i + 1] = dual_scale[i] * (x_d[i] +
//     dual_gain[i] * x_f[i]), where dual_gain[i] is the product of all earlier
//     guard factors, so x_d stays an exact multiple of the unguarded stream.
struct ForwardTrace {
    Variant variant = Variant::PreLn;
    std::size_t depth = 0;
    std::vector<Tensor> x_ln, x_a, x_f, x_d;
    std::vector<LnCache> ln;
    std::vector<BlockCache> block;
    std::vector<double> dual_scale;
    std::vector<double> dual_gain;
    // Terminal normalizations: PreLn output; PostLn/ResiDual at depth 0; ResiDual dual stream.
    std::optional<LnCache> post_out_ln;
    std::optional<LnCache> dual_out_ln;
    Tensor post_out;
    Tensor y;
    bool consumed = false;
};

ForwardTrace forward(const Tensor& x_in, const Network& net, const ForwardOptions& options = {});

struct GradReport {
    Variant variant = Variant::PreLn;
    std::vector<std::vector<Tensor>> total;
    std::vector<double> total_norm;
    // ResiDual only: the Post-LN-branch and dual-branch addends of each block gradient.
    bool decomposed = false;
    std::vector<std::vector<Tensor>> post;
    std::vector<std::vector<Tensor>> dual;
    std::vector<double> post_norm;
    std::vector<double> dual_norm;
    Tensor input_grad;
};

struct BackwardOptions {
    // ResiDual: run two seeded sweeps and report the decomposition.
    bool decompose = true;
};

// One reverse pass with separate seeds on the Post-LN-branch output and on the
// normalized dual stream. Either seed may be null (treated as zero). Pure.
struct SweepResult {
    std::vector<std::vector<Tensor>> weight_grads;
    Tensor input_grad;
};
SweepResult reverse_sweep(const ForwardTrace& trace, const Network& net, const Tensor* post_seed,
                          const Tensor* dual_seed);

class StaleTraceError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Accumulates dL/dw into net.blocks[k].grads and consumes the trace.
GradReport backward(const Tensor& loss_grad, ForwardTrace& trace, Network& net,
                    const BackwardOptions& options = {});

} // namespace rlab
