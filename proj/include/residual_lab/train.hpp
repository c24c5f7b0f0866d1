#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "residual_lab/adam.hpp"
#include "residual_lab/wiring.hpp"

namespace rlab {

struct CopyTaskConfig {
    std::size_t vocab = 16;
    std::size_t seq_len = 16;
    std::size_t train_steps = 2000;
    std::size_t batch = 32;
    std::size_t width = 32;
    std::size_t depth = 12;
    std::uint64_t seed = 0;
    double base_lr = 5e-4;
    long warmup_steps = 200;
    double adam_eps = 1e-8;

    void validate() const;
};

struct CopyBatch {
    std::vector<std::vector<std::size_t>> tokens;
    std::vector<std::vector<std::size_t>> targets;
};

// Uniform random token sequences; the target is the input itself.
CopyBatch make_copy_batch(const CopyTaskConfig& config, Rng& rng);

// Embedding (V x d) -> encoder stack in the chosen wiring -> linear head (d x V).
struct CopyModel {
    Tensor embedding;
    Network net;
    Tensor head;
    Tensor grad_embedding;
    Tensor grad_head;

    static CopyModel create(const CopyTaskConfig& config, Variant variant);

    void zero_grad();
    // Mean token cross-entropy over the batch.
    double loss(const CopyBatch& batch) const;
    // Same loss; accumulates its gradient into every grad tensor.
    double loss_and_grad(const CopyBatch& batch);

    std::vector<Tensor*> parameters();
    std::vector<Tensor*> gradients();
};

struct TrainRecord {
    long step;        // updates applied before this loss was measured
    double loss;
    double lr;        // rate used for the update that follows
    double grad_norm; // largest Frobenius norm over parameter tensors
    bool diverged;
};

// Training-time divergence: non-finite loss, or loss above this factor times the
// initial loss for kDivergencePatience consecutive steps.
inline constexpr double kDivergenceFactor = 10.0;
inline constexpr long kDivergencePatience = 100;

// One Adam state per entry of CopyModel::parameters().
std::vector<AdamState> make_optimizer(CopyModel& model, const CopyTaskConfig& config);

// Fresh gradients on `batch`, then one Adam step at rate lr. Returns the loss
// measured before the step. Parameters are left untouched when the gradients
// are not finite.
double train_step(CopyModel& model, std::vector<AdamState>& states, const CopyBatch& batch, double lr,
                  bool* grads_finite = nullptr, double* grad_norm = nullptr);

std::vector<TrainRecord> train(const CopyTaskConfig& config, Variant variant, Schedule schedule);

// Training allocates and frees the same large temporaries every step. With
// glibc defaults each one is a fresh mmap and its pages fault in again. This
// keeps freed blocks in the heap instead. Process-wide; a no-op elsewhere.
void retain_freed_memory();

// Mean loss over the last `window` records (all of them when fewer exist).
double final_loss(const std::vector<TrainRecord>& records, std::size_t window = 50);

} // namespace rlab
