#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ebm/corruptions.hpp"
#include "ebm/data.hpp"
#include "ebm/rng.hpp"
#include "ebm/tensor.hpp"
#include "ebm/vit.hpp"

namespace ebm {

enum class LossKind { SmoothL1, Mse };

struct SamplerConfig {
  long steps = 2;          // N
  double alpha_init = 0.1;
  bool alpha_learnable = true;
  double noise_scale = 0.0;  // 0 = deterministic chain
  LossKind loss_kind = LossKind::SmoothL1;
  double smooth_l1_beta = 1.0;
  void validate() const;
};

// Ordered record of one restoration chain: states[0] is the corrupted input,
// states[j] the result of step j (detached snapshots).
struct SamplingChain {
  std::vector<Tensor> states;
  std::vector<double> step_losses;
  double alpha = 0.0;
};

struct RestoreResult {
  SamplingChain chain;
  Tensor total_loss;  // differentiable w.r.t. parameters and alpha
};

// ---- learnable step size (softplus reparameterization, always > 0) --------

double alpha_raw_init(double alpha_init);
Tensor alpha_value(const Tensor& raw);
double alpha_value_of(double raw);

// ---- restoration chains ----------------------------------------------------

// N gradient steps on the pixels: x^j = SG(x^{j-1}) - alpha * dE/dx, with a
// per-step pixel loss against the target. total_loss = mean over steps.
RestoreResult conditional_restore(const EnergyModel& model, const Tensor& x_corrupt,
                                  const Tensor& target, const SamplerConfig& cfg,
                                  const Tensor& alpha, Rng* noise_rng = nullptr);

struct SortOptions {
  EdgeMaskSpec edge_mask;     // active by default via sort_defaults()
  double patch_dropout = 0.5;
  static SortOptions defaults();
  static SortOptions plain();  // regularizers off (oracle/eval paths)
};

// Same chain mechanics on per-image PE tables [n, T, D]; loss is always MSE
// against the true table.
RestoreResult sort_restore(const EnergyModel& model, const Tensor& x,
                           const Tensor& shuffled_pe, const Tensor& true_pe,
                           const SamplerConfig& cfg, const Tensor& alpha,
                           const SortOptions& opts, Rng& rng);

// ---- AdamW -----------------------------------------------------------------

struct AdamWHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct AdamWState {
  std::vector<std::vector<double>> m, v;
  long t = 0;
  void reset(const std::vector<Tensor>& params);
};

// Decoupled weight decay; entries with decay_mask[i]=false skip the decay.
void adamw_update(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                  AdamWState& state, const AdamWHyper& hyper,
                  const std::vector<bool>& decay_mask);

// Linear warmup then cosine decay to zero.
double lr_schedule(double base_lr, long step, long total_steps, double warmup_frac);

// ---- training loop ---------------------------------------------------------

struct TrainConfig {
  double base_lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.95;
  double weight_decay = 0.05;
  double warmup_frac = 0.05;
  long batch_size = 64;
  long epochs = 50;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  void validate() const;
};

struct StepMetrics {
  long step = 0;
  long epoch = 0;
  double loss = 0.0;
  double alpha = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::vector<double> per_step_losses;
  bool rolled_back = false;
};

// Owns the optimizer state and the raw alpha parameter; the model is owned by
// the caller and updated in place.
class Trainer {
 public:
  Trainer(EnergyModel& model, SamplerConfig sampler, TrainConfig train,
          CorruptionSpec corruption, ChannelStats stats);

  // One optimizer step on one (already normalized) batch.
  StepMetrics train_step(const ImageBatch& batch, long epoch, long step_in_epoch,
                         long total_steps);

  // Full loop over the dataset; emits metrics per step.
  void run(const ImageBatch& dataset, long total_epochs,
           const std::function<void(const StepMetrics&)>& on_step);

  double alpha() const { return alpha_value_of(raw_alpha_.item()); }
  Tensor raw_alpha() const { return raw_alpha_; }
  void set_raw_alpha(double v);
  AdamWState& opt_state() { return opt_state_; }
  const AdamWState& opt_state() const { return opt_state_; }
  const SeededRng& rng() const { return rng_; }
  long global_step() const { return global_step_; }
  void set_global_step(long s) { global_step_ = s; }
  long rollback_count() const { return rollbacks_; }

 private:
  EnergyModel& model_;
  SamplerConfig sampler_;
  TrainConfig train_;
  CorruptionSpec corruption_;
  ChannelStats stats_;
  SeededRng rng_;
  Tensor raw_alpha_;
  AdamWState opt_state_;
  std::vector<Tensor> opt_params_;
  std::vector<bool> decay_mask_;
  long global_step_ = 0;
  long rollbacks_ = 0;
};

}  // namespace ebm
