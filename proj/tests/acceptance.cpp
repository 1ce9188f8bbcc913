// Acceptance gate: one binary, one pass/fail line per criterion.
// Heavy desk-scale runs are shared between criteria and cached; pass a list
// of criterion numbers to run a subset (default: all).
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ebm/checkpoint.hpp"
#include "ebm/config.hpp"
#include "ebm/eval.hpp"
#include "op_catalog.hpp"
#include "oracle_vit.hpp"

using namespace ebm;
namespace fs = std::filesystem;

namespace {

double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

ViTConfig tiny_cfg() {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  return c;
}

ViTConfig grid16_cfg() {  // 4x4 = 16 patch positions
  ViTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 64;
  c.depth = 4;
  c.heads = 4;
  c.mlp_ratio = 4.0;
  return c;
}

struct LabeledData {
  ImageBatch train, held;
  ChannelStats stats;
  ImageBatch all;  // normalized, labeled
};

LabeledData make_split(long per_class, long classes, long image, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_per_class = per_class;
  spec.classes = classes;
  spec.image_size = image;
  Rng rng(seed);
  ImageBatch raw = gen_synthetic(spec, rng);
  LabeledData d;
  d.stats = compute_stats(raw);
  d.all = normalize(raw, d.stats);
  std::vector<long> tr, he;
  for (long i = 0; i < d.all.n; ++i) (i % 5 == 4 ? he : tr).push_back(i);
  d.train = d.all.subset(tr);
  d.held = d.all.subset(he);
  return d;
}

struct DeskRun {
  EnergyModel model;
  LabeledData data;
  std::vector<StepMetrics> metrics;
  SamplerConfig sampler;
  CorruptionSpec corruption;
  double alpha = 0.0;
};

std::vector<double> epoch_means(const std::vector<StepMetrics>& log) {
  std::map<long, std::pair<double, long>> acc;
  for (const StepMetrics& m : log) {
    acc[m.epoch].first += m.loss;
    acc[m.epoch].second += 1;
  }
  std::vector<double> out;
  for (auto& [e, p] : acc) out.push_back(p.first / p.second);
  return out;
}

DeskRun pretrain_run(const ViTConfig& mc, const LabeledData& data,
                     const CorruptionSpec& corruption, const SamplerConfig& sampler,
                     long epochs, double lr, double wd, std::uint64_t seed) {
  Rng init(seed);
  DeskRun run{EnergyModel::init(mc, init), data, {}, sampler, corruption};
  run.model.set_requires_grad(true);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.base_lr = lr;
  tc.weight_decay = wd;
  tc.epochs = epochs;
  tc.seed = seed;
  Trainer trainer(run.model, run.sampler, tc, run.corruption, data.stats);
  trainer.run(data.train, epochs, [&](const StepMetrics& m) { run.metrics.push_back(m); });
  run.alpha = trainer.alpha();
  set_precision(Precision::f64);
  return run;
}

// ---- cached heavy runs -----------------------------------------------------

const DeskRun& denoise_run() {  // criteria 6, 7, 8
  static DeskRun run = [] {
    LabeledData data = make_split(40, 4, 32, 101);
    CorruptionSpec cs;
    cs.kind = PretextKind::DiffuseNoise;
    SamplerConfig sc;
    sc.steps = 2;
    return pretrain_run(ViTConfig{}, data, cs, sc, 30, 3e-4, 0.05, 7);
  }();
  return run;
}

const DeskRun& sort_run() {  // criterion 9
  static DeskRun run = [] {
    LabeledData data = make_split(32, 4, 16, 102);
    CorruptionSpec cs;
    cs.kind = PretextKind::ShufflePE;
    SamplerConfig sc;
    sc.steps = 2;
    return pretrain_run(grid16_cfg(), data, cs, sc, 30, 3e-4, 0.05, 11);
  }();
  return run;
}

const DeskRun& ablation_run(long steps) {  // criteria 5, 10
  static std::map<long, DeskRun> runs;
  auto it = runs.find(steps);
  if (it == runs.end()) {
    LabeledData data = make_split(512, 2, 8, 103);
    ViTConfig mc;
    mc.image_size = 8;
    mc.patch_size = 4;
    mc.embed_dim = 32;
    mc.depth = 3;
    mc.heads = 4;
    mc.mlp_ratio = 2.0;
    CorruptionSpec cs;
    cs.kind = PretextKind::SuperRes;
    cs.sr.factor = 2;
    SamplerConfig sc;
    sc.steps = steps;
    sc.alpha_init = 2.0;
    it = runs.emplace(steps, pretrain_run(mc, data, cs, sc, 20, 1e-2, 0.01, 13)).first;
  }
  return it->second;
}

// ---- criteria --------------------------------------------------------------

bool crit1_autodiff_fd(std::string& detail) {
  set_precision(Precision::f64);
  double worst_op = 0.0;
  std::string worst_name = "-";
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    for (auto& oc : opcat::catalog_cases(rng)) {
      Tensor x = opcat::rand_uniform(oc.in_shape, rng, oc.positive_only ? 0.4 : -1.5,
                                     oc.positive_only ? 2.0 : 1.5)
                     .set_requires_grad(true);
      Tensor w = opcat::rand_uniform(oc.fn(x).shape(), rng, -1.0, 1.0);
      Tensor g = grad(sum(mul(oc.fn(x), w)), {x}, false)[0];
      Tensor fd = numeric_grad(
          [&](const Tensor& t) { return sum(mul(oc.fn(t), w)).item(); }, x, 1e-4);
      for (long i = 0; i < g.numel(); ++i) {
        double e = rel_err(g.data()[i], fd.data()[i]);
        if (e > worst_op) {
          worst_op = e;
          worst_name = oc.name;
        }
      }
    }
  }

  // energy() end-to-end on ViT-micro, FD at 400 sampled input coordinates
  Rng rng(5);
  EnergyModel model = EnergyModel::init(ViTConfig{}, rng);
  Tensor x = Tensor::randn({1, 3, 32, 32}, rng, 0.5).set_requires_grad(true);
  Tensor g = grad(sum(energy(model, x)), {x}, false)[0];
  double worst_e = 0.0;
  Tensor probe = x.detach();
  for (long trial = 0; trial < 400; ++trial) {
    long i = static_cast<long>(rng.uniform_int(probe.numel()));
    double keep = probe.mutable_data()[i];
    probe.mutable_data()[i] = keep + 1e-4;
    double hi = sum(energy(model, probe)).item();
    probe.mutable_data()[i] = keep - 1e-4;
    double lo = sum(energy(model, probe)).item();
    probe.mutable_data()[i] = keep;
    worst_e = std::max(worst_e, rel_err(g.data()[i], (hi - lo) / 2e-4));
  }
  detail = "catalog worst " + fmt(worst_op) + " (" + worst_name + "), energy worst " +
           fmt(worst_e);
  return worst_op <= 1e-4 && worst_e <= 1e-4;
}

bool crit2_double_backprop_fd(std::string& detail) {
  set_precision(Precision::f64);
  Rng rng(21);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  model.set_requires_grad(true);
  Tensor target = Tensor::randn({1, 3, 8, 8}, rng, 0.5);
  ImageBatch tb = from_tensor(target);
  Rng mrng(3);
  Tensor corrupt = to_tensor(mask_gridded(tb, 4, 0.5, mrng));
  Tensor raw = Tensor::scalar(alpha_raw_init(0.1)).set_requires_grad(true);
  SamplerConfig cfg;
  cfg.steps = 1;

  auto loss_value = [&] {
    return conditional_restore(model, corrupt, target, cfg, alpha_value(raw))
        .total_loss;
  };
  std::vector<Tensor> params;
  for (auto& [name, p] : model.params()) params.push_back(p);
  params.push_back(raw);
  std::vector<Tensor> g = grad(loss_value(), params, false);

  double worst = 0.0;
  long checked = 0;
  const double eps = 1e-4;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].mutable_data();
    for (size_t k = 0; k < data.size(); ++k, ++checked) {
      double keep = data[k];
      data[k] = keep + eps;
      double hi = loss_value().item();
      data[k] = keep - eps;
      double lo = loss_value().item();
      data[k] = keep;
      worst = std::max(worst, rel_err(g[pi].data()[k], (hi - lo) / (2 * eps), 1e-5));
    }
  }
  detail = fmt(worst) + " worst rel err over " + std::to_string(checked) +
           " parameters (denominator floor 1e-5)";
  return worst <= 1e-3;
}

bool crit3_stop_gradient(std::string& detail) {
  set_precision(Precision::f64);
  Rng rng(14);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  model.set_requires_grad(true);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng, 0.5);
  Tensor target = Tensor::randn({2, 3, 8, 8}, rng, 0.5);
  Tensor raw = Tensor::scalar(alpha_raw_init(0.08)).set_requires_grad(true);
  SamplerConfig cfg;
  cfg.steps = 2;

  std::vector<Tensor> params;
  for (auto& [name, p] : model.params()) params.push_back(p);
  params.push_back(raw);
  RestoreResult rr = conditional_restore(model, x, target, cfg, alpha_value(raw));
  std::vector<Tensor> whole = grad(rr.total_loss, params, false);

  std::vector<std::vector<double>> acc(params.size());
  for (size_t i = 0; i < params.size(); ++i) acc[i].assign(params[i].numel(), 0.0);
  for (long j = 1; j <= cfg.steps; ++j) {
    Tensor step_in = rr.chain.states[j - 1].detach().set_requires_grad(true);
    Tensor g = grad(sum(energy(model, step_in)), {step_in}, true)[0];
    Tensor next = sub(step_in, mul(alpha_value(raw), g));
    Tensor loss = mul(smooth_l1(next, target, cfg.smooth_l1_beta), 1.0 / cfg.steps);
    std::vector<Tensor> gs = grad(loss, params, false);
    for (size_t i = 0; i < params.size(); ++i)
      for (long k = 0; k < params[i].numel(); ++k) acc[i][k] += gs[i].data()[k];
  }
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i)
    for (long k = 0; k < params[i].numel(); ++k)
      worst = std::max(worst, rel_err(whole[i].data()[k], acc[i][k]));
  detail = fmt(worst) + " worst rel err, N=2 whole-chain vs summed per-step grads";
  return worst <= 1e-5;
}

bool crit4_chain_oracle(std::string& detail) {
  set_precision(Precision::f64);
  Rng rng(13);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  oracle::ModelParams ref = oracle::snapshot(model);
  const long n = 2, T = model.cfg.tokens(), D = model.cfg.embed_dim;
  Tensor x = Tensor::randn({n, 3, 8, 8}, rng, 0.5);
  Tensor target = Tensor::randn({n, 3, 8, 8}, rng, 0.5);

  SamplerConfig cfg;
  cfg.steps = 2;
  double worst = 0.0;
  RestoreResult rr = conditional_restore(model, x, target, cfg, Tensor::scalar(0.05));
  oracle::ChainRef want =
      oracle::restore_chain(ref, x.data(), n, target.data(), model.pe_table.data(),
                            0.05, cfg.steps, true, cfg.smooth_l1_beta);
  for (long j = 1; j <= cfg.steps; ++j) {
    for (size_t i = 0; i < want.states[j].size(); ++i)
      worst = std::max(worst, rel_err(rr.chain.states[j].data()[i], want.states[j][i]));
    worst = std::max(worst, rel_err(rr.chain.step_losses[j - 1], want.step_losses[j - 1]));
  }
  worst = std::max(worst, rel_err(rr.total_loss.item(), want.total_loss));

  Rng prng(4);
  std::vector<Tensor> tables;
  for (long i = 0; i < n; ++i) {
    auto [shuf, perm] = shuffle_pe(model.pe_table, prng);
    tables.push_back(reshape(shuf, {1, T, D}));
  }
  Tensor shuffled = concat(tables, 0);
  Rng reg(5);
  RestoreResult sr = sort_restore(model, x, shuffled, model.pe_table, cfg,
                                  Tensor::scalar(0.05), SortOptions::plain(), reg);
  std::vector<double> tiled =
      broadcast_to(reshape(model.pe_table, {1, T, D}), {n, T, D}).data();
  oracle::ChainRef swant =
      oracle::sort_chain(ref, x.data(), n, shuffled.data(), tiled, 0.05, cfg.steps);
  for (long j = 1; j <= cfg.steps; ++j)
    for (size_t i = 0; i < swant.states[j].size(); ++i)
      worst = std::max(worst, rel_err(sr.chain.states[j].data()[i], swant.states[j][i]));
  worst = std::max(worst, rel_err(sr.total_loss.item(), swant.total_loss));

  detail = fmt(worst) + " worst rel err vs complex-step scalar reference, both chains";
  return worst <= 1e-6;
}

bool crit5_alpha_contract(std::string& detail) {
  set_precision(Precision::f64);
  double a0 = alpha_value_of(alpha_raw_init(0.1));
  bool init_ok = std::abs(a0 - 0.1) < 1e-9;

  const DeskRun& run = ablation_run(2);  // 20-epoch run
  double min_alpha = 1e300;
  for (const StepMetrics& m : run.metrics) min_alpha = std::min(min_alpha, m.alpha);
  bool positive_ok = min_alpha > 0.0;

  Rng rng(31);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng, 0.5);
  Tensor target = Tensor::randn({2, 3, 8, 8}, rng, 0.5);
  SamplerConfig cfg;
  cfg.steps = 3;
  RestoreResult rr = conditional_restore(model, x, target, cfg, Tensor::scalar(0.0));
  bool degenerate_ok =
      rr.total_loss.item() == smooth_l1(x, target, cfg.smooth_l1_beta).item();

  detail = "init " + fmt(a0) + ", min over run " + fmt(min_alpha) +
           ", alpha=0 loss equality " + (degenerate_ok ? "exact" : "BROKEN");
  return init_ok && positive_ok && degenerate_ok;
}

bool crit6_energy_separation(std::string& detail) {
  const DeskRun& run = denoise_run();
  SeededRng streams(909);
  Rng crng = streams.stream("histogram");
  HistogramReport rep = energy_histogram(run.model, run.data.held, run.corruption,
                                         run.sampler, run.alpha, run.data.stats, crng);
  detail = "mean(real) " + fmt(rep.group_means[0]) + " vs mean(corrupted) " +
           fmt(rep.group_means[1]) + ", paired gap " + fmt(rep.paired_gap_mean) +
           " > 2*se " + fmt(2.0 * rep.paired_gap_se);
  return rep.group_means[0] < rep.group_means[1] &&
         rep.paired_gap_mean > 2.0 * rep.paired_gap_se;
}

bool crit7_restoration_improvement(std::string& detail) {
  const DeskRun& run = denoise_run();
  SeededRng streams(910);
  Rng crng = streams.stream("restoration");
  RestorationReport rep =
      restoration_quality(run.model, run.data.held, run.corruption, run.sampler,
                          run.alpha, run.data.stats, crng);
  detail = "held-out mse restored " + fmt(rep.mse_restored) + " vs corrupted " +
           fmt(rep.mse_corrupted) + " (ratio " +
           fmt(rep.mse_restored / rep.mse_corrupted) + ", needs <= 0.7)";
  return rep.mse_restored <= 0.7 * rep.mse_corrupted;
}

bool crit8_transfer_direction(std::string& detail) {
  const DeskRun& run = denoise_run();
  Rng rinit(999);
  EnergyModel random_model = EnergyModel::init(run.model.cfg, rinit);

  ProbeConfig pc;
  pc.seed = 55;
  pc.holdout_frac = 0.25;
  ProbeResult pre = linear_probe(run.model, run.data.all, pc);
  ProbeResult rnd = linear_probe(random_model, run.data.all, pc);

  FinetuneConfig fc;
  fc.epochs = 6;
  fc.lr = 1e-3;
  fc.batch_size = 16;
  fc.holdout_frac = 0.25;
  fc.seed = 56;
  ProbeResult ft_pre = finetune(run.model, run.data.all, fc);
  ProbeResult ft_scratch = finetune(random_model, run.data.all, fc);
  set_precision(Precision::f64);

  detail = "probe " + fmt(pre.accuracy) + " vs random " + fmt(rnd.accuracy) +
           " (gap needs >= 0.10); finetune " + fmt(ft_pre.accuracy) + " vs scratch " +
           fmt(ft_scratch.accuracy);
  return pre.accuracy - rnd.accuracy >= 0.10 && ft_pre.accuracy >= ft_scratch.accuracy;
}

bool crit9_sorting_above_chance(std::string& detail) {
  const DeskRun& run = sort_run();
  SamplerConfig sc = run.sampler;
  double acc = sort_accuracy(run.model, run.data.held, sc, run.alpha,
                             SortOptions::plain(), 77);
  double chance = 1.0 / run.model.cfg.tokens();
  detail = "position accuracy " + fmt(acc) + ", chance " + fmt(chance) +
           ", needs >= " + fmt(3.0 * chance) +
           " (trained with edge mask + 50% patch dropout)";
  return acc >= 3.0 * chance;
}

bool crit10_step_ablation(std::string& detail) {
  std::string parts;
  bool ok = true;
  for (long steps : {1L, 2L}) {
    const DeskRun& run = ablation_run(steps);
    std::vector<double> em = epoch_means(run.metrics);
    bool halved = em.back() < 0.5 * em.front();
    long late_rollbacks = 0;
    for (const StepMetrics& m : run.metrics)
      if (m.epoch >= 10 && m.rolled_back) ++late_rollbacks;
    ok = ok && halved && late_rollbacks == 0;
    parts += "N=" + std::to_string(steps) + ": epoch1 " + fmt(em.front()) +
             " -> epoch20 " + fmt(em.back()) +
             (late_rollbacks ? " ROLLBACKS" : "") + "  ";
  }
  detail = parts + "(needs epoch20 < 0.5*epoch1, clean final 10 epochs)";
  return ok;
}

bool crit11_determinism(std::string& detail) {
#ifndef EBMPRE_BIN
  detail = "CLI binary path not compiled in";
  return false;
#else
  fs::path dir = fs::temp_directory_path() / "ebm-accept-determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::path cfg_path = dir / "config.json";
  fs::path out = dir / "out";
  {
    std::ofstream o(cfg_path);
    o << R"({
      "model": {"image_size": 8, "patch_size": 4, "embed_dim": 16, "depth": 2, "heads": 2, "mlp_ratio": 2.0},
      "trainer": {"batch_size": 8, "epochs": 3, "base_lr": 0.001},
      "dataset": {"n_per_class": 8, "classes": 2, "image_size": 8},
      "out_dir": ")" << out.string() << R"(",
      "seed": 17,
      "checkpoint_every": 3
    })";
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  auto run_once = [&](std::string& metrics, std::string& ckpt) {
    fs::remove_all(out);
    std::string cmd = std::string(EBMPRE_BIN) + " pretrain --config " +
                      cfg_path.string() + " >/dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return false;
    metrics = slurp(out / "metrics.csv");
    ckpt = slurp(out / "checkpoint-final.bin");
    return !metrics.empty() && !ckpt.empty();
  };
  std::string m1, c1, m2, c2;
  if (!run_once(m1, c1) || !run_once(m2, c2)) {
    detail = "pretrain run failed";
    return false;
  }
  detail = std::string("metrics.csv ") + (m1 == m2 ? "identical" : "DIFFER") +
           ", checkpoint-final.bin " + (c1 == c2 ? "identical" : "DIFFER") + " (" +
           std::to_string(c1.size()) + " bytes)";
  return m1 == m2 && c1 == c2;
#endif
}

bool crit12_corruption_stats(std::string& detail) {
  set_precision(Precision::f64);
  // gridded mask frequency: each cell masked with ratio probability
  {
    ImageBatch ones;
    ones.n = 1;
    ones.c = 1;
    ones.h = 8;
    ones.w = 8;
    ones.labels = {0};
    Rng rng(1);
    long hits[4] = {0, 0, 0, 0};
    const long trials = 10000;
    for (long t = 0; t < trials; ++t) {
      ones.data.assign(64, 1.0);
      ImageBatch masked = mask_gridded(ones, 4, 0.5, rng);
      for (long cell = 0; cell < 4; ++cell) {
        long y = (cell / 2) * 4, x = (cell % 2) * 4;
        if (masked.data[y * 8 + x] == 0.0) ++hits[cell];
      }
    }
    for (long cell = 0; cell < 4; ++cell) {
      double f = static_cast<double>(hits[cell]) / trials;
      if (std::abs(f - 0.5) > 0.02) {
        detail = "gridded mask frequency off: " + fmt(f);
        return false;
      }
    }
  }
  // diffuse noise: at gamma=0 output is unit-variance noise
  {
    ImageBatch x;
    x.n = 100;
    x.c = 1;
    x.h = 10;
    x.w = 10;
    x.labels.assign(100, 0);
    x.data.assign(10000, 0.7);
    Rng rng(2);
    ImageBatch noised = noise_diffuse(x, rng, nullptr, 0.0);
    double mu = 0.0;
    for (double v : noised.data) mu += v;
    mu /= noised.data.size();
    double var = 0.0;
    for (double v : noised.data) var += (v - mu) * (v - mu);
    var /= noised.data.size();
    if (std::abs(var - 1.0) > 0.05) {
      detail = "diffuse noise variance off: " + fmt(var);
      return false;
    }
  }
  // PE shuffle: all 24 permutations of 4 rows equally likely
  {
    Tensor pe = Tensor::from_data({4, 1}, {0.0, 1.0, 2.0, 3.0});
    Rng rng(3);
    std::map<std::vector<long>, long> counts;
    const long trials = 100000;
    for (long t = 0; t < trials; ++t) {
      auto [shuf, perm] = shuffle_pe(pe, rng);
      ++counts[perm];
    }
    if (counts.size() != 24) {
      detail = "PE shuffle missed permutations: " + std::to_string(counts.size());
      return false;
    }
    for (auto& [perm, k] : counts) {
      double f = static_cast<double>(k) / trials;
      if (std::abs(f - 1.0 / 24.0) > 0.01) {
        detail = "PE shuffle nonuniform: " + fmt(f);
        return false;
      }
    }
  }
  // mixed pretext: per-image dispatch matches the configured weights
  {
    SyntheticSpec spec;
    spec.n_per_class = 8;
    spec.classes = 2;
    spec.image_size = 8;
    Rng drng(4);
    ImageBatch raw = gen_synthetic(spec, drng);
    ChannelStats st = compute_stats(raw);
    ImageBatch ds = normalize(raw, st);
    CorruptionSpec cs;
    cs.kind = PretextKind::Mixed;
    Rng rng(5);
    std::map<PretextKind, long> counts;
    const long rounds = 10000 / ds.n;
    for (long t = 0; t < rounds; ++t) {
      CorruptedBatch cb = apply(cs, ds, st, rng);
      for (PretextKind k : cb.pretexts) ++counts[k];
    }
    for (auto& [kind, k] : counts) {
      double f = static_cast<double>(k) / (rounds * ds.n);
      if (std::abs(f - 0.25) > 0.02) {
        detail = std::string("mixed frequency off for ") + pretext_name(kind) + ": " +
                 fmt(f);
        return false;
      }
    }
  }
  detail = "mask frequency, noise variance, permutation uniformity, mixed dispatch all in tolerance";
  return true;
}

struct Criterion {
  int id;
  const char* name;
  std::function<bool(std::string&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> all = {
      {1, "autodiff matches finite differences (catalog + energy)", crit1_autodiff_fd},
      {2, "double backprop through the restoration step matches FD", crit2_double_backprop_fd},
      {3, "stop-gradient splits the chain gradient exactly", crit3_stop_gradient},
      {4, "chains match the independent scalar oracle", crit4_chain_oracle},
      {5, "step-size contract (init, positivity, alpha=0 degenerate)", crit5_alpha_contract},
      {6, "real images score below corrupted ones after pretraining", crit6_energy_separation},
      {7, "restoration beats the corrupted baseline by >= 30%", crit7_restoration_improvement},
      {8, "pretrained features transfer better than random init", crit8_transfer_direction},
      {9, "sorting accuracy >= 3x chance on the 16-position grid", crit9_sorting_above_chance},
      {10, "N=1 and N=2 runs halve their loss with no late rollbacks", crit10_step_ablation},
      {11, "bit-identical metrics and checkpoints across reruns", crit11_determinism},
      {12, "corruption Monte Carlo statistics in tolerance", crit12_corruption_stats},
  };

  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (Criterion& c : all) {
    if (!wanted.empty() &&
        std::find(wanted.begin(), wanted.end(), c.id) == wanted.end())
      continue;
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << c.id << ". " << c.name << " — "
              << detail << " (" << fmt(secs) << "s)\n";
    if (!ok) ++failures;
  }
  return failures;
}
