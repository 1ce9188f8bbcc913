#include "ebm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ebm {

namespace {

Tensor pixel_loss(const SamplerConfig& cfg, const Tensor& pred, const Tensor& target) {
  return cfg.loss_kind == LossKind::SmoothL1
             ? smooth_l1(pred, target, cfg.smooth_l1_beta)
             : mse(pred, target);
}

}  // namespace

void SamplerConfig::validate() const {
  if (steps < 1) throw contract_error("SamplerConfig: steps must be >= 1");
  if (alpha_init <= 0.0) throw contract_error("SamplerConfig: alpha_init must be > 0");
  if (noise_scale < 0.0) throw contract_error("SamplerConfig: noise_scale must be >= 0");
  if (smooth_l1_beta <= 0.0) throw contract_error("SamplerConfig: beta must be > 0");
}

void TrainConfig::validate() const {
  if (base_lr < 0.0) throw contract_error("TrainConfig: base_lr must be >= 0");
  if (batch_size < 1 || epochs < 0) throw contract_error("TrainConfig: bad batch/epochs");
  if (warmup_frac < 0.0 || warmup_frac > 1.0)
    throw contract_error("TrainConfig: warmup_frac must be in [0,1]");
}

double alpha_raw_init(double alpha_init) {
  // softplus^{-1}: log(e^a - 1)
  return std::log(std::expm1(alpha_init));
}

Tensor alpha_value(const Tensor& raw) { return softplus(raw); }

double alpha_value_of(double raw) {
  return std::max(raw, 0.0) + std::log1p(std::exp(-std::abs(raw)));
}

RestoreResult conditional_restore(const EnergyModel& model, const Tensor& x_corrupt,
                                  const Tensor& target, const SamplerConfig& cfg,
                                  const Tensor& alpha, Rng* noise_rng) {
  cfg.validate();
  if (x_corrupt.shape() != target.shape())
    throw contract_error("conditional_restore: corrupt/target shape mismatch");
  if (cfg.noise_scale > 0.0 && !noise_rng)
    throw contract_error("conditional_restore: noise_scale set but no rng supplied");

  RestoreResult res;
  res.chain.alpha = alpha.item();
  res.chain.states.push_back(x_corrupt.detach());
  Tensor total;
  Tensor cur = x_corrupt;
  for (long j = 1; j <= cfg.steps; ++j) {
    Tensor step_in = cur.detach().set_requires_grad(true);  // SG across steps
    Tensor g;
    try {
      Tensor score_sum = sum(energy(model, step_in));
      g = grad(score_sum, {step_in}, /*create_graph=*/true)[0];
    } catch (const numeric_error& e) {
      throw numeric_error("restore step " + std::to_string(j) + ": " + e.what());
    }
    Tensor next = sub(step_in, mul(alpha, g));
    if (cfg.noise_scale > 0.0) {
      Tensor xi = Tensor::randn(next.shape(), *noise_rng, cfg.noise_scale);
      next = add(next, xi);
    }
    Tensor step_loss = pixel_loss(cfg, next, target);
    if (!all_finite(step_loss))
      throw numeric_error("restore step " + std::to_string(j) + ": non-finite loss");
    res.chain.states.push_back(next.detach());
    res.chain.step_losses.push_back(step_loss.item());
    total = total.defined() ? add(total, step_loss) : step_loss;
    cur = next;
  }
  res.total_loss = mul(total, 1.0 / static_cast<double>(cfg.steps));
  return res;
}

SortOptions SortOptions::defaults() {
  SortOptions o;
  o.edge_mask.active = true;
  o.patch_dropout = 0.5;
  return o;
}

SortOptions SortOptions::plain() {
  SortOptions o;
  o.edge_mask.active = false;
  o.patch_dropout = 0.0;
  return o;
}

RestoreResult sort_restore(const EnergyModel& model, const Tensor& x,
                           const Tensor& shuffled_pe, const Tensor& true_pe,
                           const SamplerConfig& cfg, const Tensor& alpha,
                           const SortOptions& opts, Rng& rng) {
  cfg.validate();
  long n = x.shape()[0], T = model.cfg.tokens(), D = model.cfg.embed_dim;
  if (shuffled_pe.shape() != Shape{n, T, D})
    throw contract_error("sort_restore: shuffled PE must be [n,T,D]");
  if (true_pe.shape() != Shape{T, D})
    throw contract_error("sort_restore: true PE must be [T,D]");

  Tensor target = broadcast_to(reshape(true_pe, {1, T, D}), {n, T, D}).detach();
  RestoreResult res;
  res.chain.alpha = alpha.item();
  res.chain.states.push_back(shuffled_pe.detach());
  Tensor total;
  Tensor cur = shuffled_pe;
  for (long j = 1; j <= cfg.steps; ++j) {
    Tensor pe_in = cur.detach().set_requires_grad(true);
    Tensor g;
    try {
      auto token_sets =
          patch_embed_with_regularizers(model, x, opts.edge_mask, opts.patch_dropout, rng);
      std::vector<Tensor> scores;
      for (long img = 0; img < n; ++img) {
        Tensor pe_i = reshape(slice(pe_in, 0, img, img + 1), {T, D});
        scores.push_back(energy_from_tokens(model, token_sets[img], pe_i));
      }
      Tensor score_sum = sum(n == 1 ? scores[0] : concat(scores, 0));
      g = grad(score_sum, {pe_in}, /*create_graph=*/true)[0];
    } catch (const numeric_error& e) {
      throw numeric_error("sort step " + std::to_string(j) + ": " + e.what());
    }
    Tensor next = sub(pe_in, mul(alpha, g));
    Tensor step_loss = mse(next, target);  // Eq-style sorting loss is MSE always
    if (!all_finite(step_loss))
      throw numeric_error("sort step " + std::to_string(j) + ": non-finite loss");
    res.chain.states.push_back(next.detach());
    res.chain.step_losses.push_back(step_loss.item());
    total = total.defined() ? add(total, step_loss) : step_loss;
    cur = next;
  }
  res.total_loss = mul(total, 1.0 / static_cast<double>(cfg.steps));
  return res;
}

// ---- AdamW -----------------------------------------------------------------

void AdamWState::reset(const std::vector<Tensor>& params) {
  m.clear();
  v.clear();
  for (const Tensor& p : params) {
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
  t = 0;
}

void adamw_update(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                  AdamWState& state, const AdamWHyper& hyper,
                  const std::vector<bool>& decay_mask) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != decay_mask.size())
    throw contract_error("adamw_update: size mismatch");
  ++state.t;
  double bc1 = 1.0 - std::pow(hyper.beta1, state.t);
  double bc2 = 1.0 - std::pow(hyper.beta2, state.t);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (p.shape() != grads[i].shape())
      throw contract_error("adamw_update: grad shape mismatch for param " +
                           std::to_string(i));
    auto& data = p.mutable_data();
    const auto& g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t k = 0; k < data.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      if (decay_mask[i]) data[k] -= hyper.lr * hyper.weight_decay * data[k];
      data[k] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

double lr_schedule(double base_lr, long step, long total_steps, double warmup_frac) {
  long warmup = static_cast<long>(warmup_frac * total_steps);
  if (warmup > 0 && step < warmup)
    return base_lr * static_cast<double>(step + 1) / warmup;
  if (total_steps <= warmup) return base_lr;
  double progress = static_cast<double>(step - warmup) / (total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// ---- Trainer ---------------------------------------------------------------

Trainer::Trainer(EnergyModel& model, SamplerConfig sampler, TrainConfig train,
                 CorruptionSpec corruption, ChannelStats stats)
    : model_(model),
      sampler_(std::move(sampler)),
      train_(std::move(train)),
      corruption_(std::move(corruption)),
      stats_(std::move(stats)),
      rng_(train_.seed) {
  sampler_.validate();
  train_.validate();
  set_precision(train_.precision);
  raw_alpha_ = Tensor::scalar(alpha_raw_init(sampler_.alpha_init));
  raw_alpha_.set_requires_grad(sampler_.alpha_learnable);
  for (auto& [name, p] : model_.params()) {
    opt_params_.push_back(p);
    // norm affine parameters are excluded from weight decay, as is alpha
    bool is_norm = name.find("norm") != std::string::npos;
    decay_mask_.push_back(!is_norm);
  }
  if (sampler_.alpha_learnable) {
    opt_params_.push_back(raw_alpha_);
    decay_mask_.push_back(false);
  }
  opt_state_.reset(opt_params_);
}

void Trainer::set_raw_alpha(double v) {
  raw_alpha_.mutable_data()[0] = v;
}

StepMetrics Trainer::train_step(const ImageBatch& batch, long epoch,
                                long step_in_epoch, long total_steps) {
  StepMetrics met;
  met.step = global_step_;
  met.epoch = epoch;
  met.alpha = alpha();
  met.lr = lr_schedule(train_.base_lr, global_step_, total_steps, train_.warmup_frac);

  Rng corrupt_rng = rng_.stream("corruption", epoch, step_in_epoch);
  Rng chain_rng = rng_.stream("chain", epoch, step_in_epoch);

  try {
    CorruptedBatch cb = apply(corruption_, batch, stats_, corrupt_rng,
                              &model_.pe_table);
    Tensor alpha_t = alpha_value(raw_alpha_);
    RestoreResult rr;
    if (corruption_.kind == PretextKind::ShufflePE) {
      rr = sort_restore(model_, to_tensor(batch), cb.shuffled_pe, model_.pe_table,
                        sampler_, alpha_t, SortOptions::defaults(), chain_rng);
    } else {
      rr = conditional_restore(model_, to_tensor(cb.images), to_tensor(batch),
                               sampler_, alpha_t,
                               sampler_.noise_scale > 0.0 ? &chain_rng : nullptr);
    }
    met.loss = rr.total_loss.item();
    met.per_step_losses = rr.chain.step_losses;

    std::vector<Tensor> grads = grad(rr.total_loss, opt_params_, false);
    double norm_sq = 0.0;
    for (const Tensor& g : grads) {
      if (!all_finite(g)) throw numeric_error("non-finite parameter gradient");
      for (double v : g.data()) norm_sq += v * v;
    }
    met.grad_norm = std::sqrt(norm_sq);

    AdamWHyper hyper;
    hyper.lr = met.lr;
    hyper.beta1 = train_.beta1;
    hyper.beta2 = train_.beta2;
    hyper.weight_decay = train_.weight_decay;
    adamw_update(opt_params_, grads, opt_state_, hyper, decay_mask_);
  } catch (const numeric_error&) {
    // no partial update was applied; skip the step
    met.rolled_back = true;
    ++rollbacks_;
  }
  ++global_step_;
  return met;
}

void Trainer::run(const ImageBatch& dataset, long total_epochs,
                  const std::function<void(const StepMetrics&)>& on_step) {
  set_precision(train_.precision);
  long steps_per_epoch = (dataset.n + train_.batch_size - 1) / train_.batch_size;
  long total_steps = steps_per_epoch * total_epochs;
  for (long epoch = 0; epoch < total_epochs; ++epoch) {
    Rng order_rng = rng_.stream("data-order", epoch);
    std::vector<long> order(dataset.n);
    std::iota(order.begin(), order.end(), 0);
    for (long i = dataset.n - 1; i > 0; --i)
      std::swap(order[i], order[order_rng.uniform_int(i + 1)]);
    for (long s = 0; s < steps_per_epoch; ++s) {
      long lo = s * train_.batch_size;
      long hi = std::min(lo + train_.batch_size, dataset.n);
      std::vector<long> idx(order.begin() + lo, order.begin() + hi);
      StepMetrics met = train_step(dataset.subset(idx), epoch, s, total_steps);
      on_step(met);
    }
  }
}

}  // namespace ebm
