#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "residual_lab/tensor.hpp"

namespace rlab {

enum class BlockKind { FfnLinear, FfnRelu2, Attn };
enum class InitMode { Analysis, Training };
enum class LnVariant { Exact, ApproxJacobian };

std::string to_string(BlockKind kind);
std::string to_string(InitMode mode);
std::string to_string(LnVariant variant);
BlockKind block_kind_from_string(const std::string& s);
InitMode init_mode_from_string(const std::string& s);
LnVariant ln_variant_from_string(const std::string& s);

// Thrown when a row handed to layer normalization has (numerically) zero variance.
class DegenerateInputError : public std::runtime_error {
public:
    DegenerateInputError(std::size_t row, const std::string& context = {});
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

struct LnMode {
    LnVariant variant = LnVariant::Exact;
    bool affine = false;

    void validate() const;
};

// Learnable per-feature gain and bias for affine layer normalization.
struct LnAffine {
    Tensor gain;
    Tensor bias;
    Tensor grad_gain;
    Tensor grad_bias;

    static LnAffine identity(std::size_t d);
};

struct LnCache {
    Tensor input;
    Tensor normalized; // standardized rows, before any affine map
    std::vector<double> inv_std;
};

struct LnResult {
    Tensor y;
    LnCache cache;
};

// Rows with variance at or below this raise DegenerateInputError.
inline constexpr double kLnMinVariance = 1e-300;

LnResult ln_forward(const Tensor& x, const LnMode& mode, const LnAffine* affine = nullptr);

// Exact mode returns the true vector-Jacobian product. ApproxJacobian returns
// (sqrt(d) / ||x_row||) * upstream_row, ignoring the mean and variance paths.
// Affine gradients are accumulated into `affine` when the mode is affine.
Tensor ln_backward(const Tensor& upstream, const LnCache& cache, const LnMode& mode,
                   LnAffine* affine = nullptr);

// Weight slots per kind:
//   FfnLinear: {W}            W  is d x d
//   FfnRelu2:  {W1, W2}       W1 is d x h, W2 is h x d
//   Attn:      {Wq, Wk, Wv}   each d x d
struct BlockParams {
    BlockKind kind = BlockKind::FfnLinear;
    std::vector<Tensor> weights;
    std::vector<Tensor> grads;

    static constexpr std::size_t kW = 0;
    static constexpr std::size_t kW1 = 0, kW2 = 1;
    static constexpr std::size_t kWq = 0, kWk = 1, kWv = 2;

    std::size_t width() const { return weights.at(0).rows(); }
    void zero_grad();
    double grad_norm() const;
    void validate() const;
};

struct BlockCache {
    BlockKind kind = BlockKind::FfnLinear;
    Tensor input;
    // FfnRelu2: {pre-activation}. Attn: {Q, K, V, P}.
    std::vector<Tensor> saved;
    // Attention mixes rows only within consecutive groups of this many rows.
    std::size_t group = 0;
    bool consumed = false;
};

struct BlockResult {
    Tensor y;
    BlockCache cache;
};

struct BlockVjp {
    Tensor input_grad;
    std::vector<Tensor> weight_grads;
};

class StaleCacheError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// group = 0 treats all rows as one sequence. Otherwise x.rows() must be a
// multiple of group and attention runs independently on each run of `group` rows,
// so a batch of sequences can be stacked into one matrix.
BlockResult block_forward(const Tensor& x, const BlockParams& p, std::size_t group = 0);

// Pure reverse-mode product: gradients w.r.t. input and weights for one upstream.
BlockVjp block_vjp(const Tensor& upstream, const BlockCache& cache, const BlockParams& p);

// Accumulates weight gradients into p.grads and returns dL/dx. The cache is
// consumed; a second call without a fresh forward throws StaleCacheError.
Tensor block_backward(const Tensor& upstream, BlockCache& cache, BlockParams& p);

// Analysis: W_Q = 0, all other matrices N(0, 1/d). Training: every matrix N(0, 1/d).
BlockParams init_block(BlockKind kind, std::size_t d, std::size_t h, std::size_t n, InitMode mode,
                       Rng& rng);

} // namespace rlab
