#include <cmath>
#include <vector>

#include "doctest.h"
#include "ebm/eval.hpp"

using namespace ebm;

namespace {

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

std::vector<double> flat_params(const EnergyModel& m) {
  std::vector<double> out;
  for (auto& [name, p] : m.params()) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

ImageBatch make_labeled(long per_class, long classes, long image, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticSpec spec;
  spec.n_per_class = per_class;
  spec.classes = classes;
  spec.image_size = image;
  return gen_synthetic(spec, rng);
}

}  // namespace

TEST_CASE("energy histogram: groups are paired and a zero head scores zero") {
  set_precision(Precision::f64);
  Rng rng(3);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  for (double& v : model.head_w.mutable_data()) v = 0.0;

  ImageBatch raw = make_labeled(4, 2, 8, 11);
  ChannelStats st = compute_stats(raw);
  ImageBatch ds = normalize(raw, st);

  CorruptionSpec spec;
  spec.kind = PretextKind::GriddedMask;
  SamplerConfig sc;
  sc.steps = 2;
  Rng crng(7);
  std::vector<double> before = flat_params(model);
  HistogramReport rep = energy_histogram(model, ds, spec, sc, 0.1, st, crng);
  CHECK(flat_params(model) == before);

  CHECK(rep.n_eval == ds.n);
  CHECK(rep.real.size() == static_cast<size_t>(ds.n));
  REQUIRE(rep.steps.size() == 3);  // corrupted + 2 restoration steps
  for (auto& g : rep.steps) CHECK(g.size() == static_cast<size_t>(ds.n));
  for (double v : rep.real) CHECK(v == 0.0);
  for (auto& g : rep.steps)
    for (double v : g) CHECK(v == 0.0);
  CHECK(rep.group_means.size() == 4);
  CHECK(rep.bin_edges.size() == 21);
  CHECK(rep.paired_gap_mean == 0.0);
}

TEST_CASE("energy histogram rejects the PE-shuffle pretext") {
  set_precision(Precision::f64);
  Rng rng(4);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  ImageBatch raw = make_labeled(2, 2, 8, 12);
  ChannelStats st = compute_stats(raw);
  ImageBatch ds = normalize(raw, st);
  CorruptionSpec spec;
  spec.kind = PretextKind::ShufflePE;
  SamplerConfig sc;
  Rng crng(7);
  CHECK_THROWS_AS(energy_histogram(model, ds, spec, sc, 0.1, st, crng), contract_error);
}

TEST_CASE("restoration quality: identity and zero-step-size boundaries") {
  set_precision(Precision::f64);
  Rng rng(5);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  ImageBatch raw = make_labeled(4, 2, 8, 13);
  ChannelStats st = compute_stats(raw);
  ImageBatch ds = normalize(raw, st);
  Tensor x = to_tensor(ds);
  SamplerConfig sc;
  sc.steps = 2;

  // uncorrupted input: the chain may only perturb it slightly
  RestorationReport ident = restoration_quality_core(model, x, x, sc, 0.1, st);
  CHECK(ident.mse_corrupted == 0.0);
  CHECK(ident.mse_restored <= 1e-3);

  // alpha = 0: the chain is a no-op, restored error equals corrupted error
  CorruptionSpec spec;
  spec.kind = PretextKind::DiffuseNoise;
  Rng crng(9);
  RestorationReport still = restoration_quality(model, ds, spec, sc, 0.0, st, crng);
  CHECK(still.mse_restored == still.mse_corrupted);
  CHECK(still.psnr_gain == 0.0);
  CHECK(still.mse_corrupted > 0.0);
}

TEST_CASE("linear probe: deterministic, frozen, chance on shuffled labels") {
  set_precision(Precision::f64);
  Rng rng(6);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  ImageBatch raw = make_labeled(64, 4, 8, 14);
  ChannelStats st = compute_stats(raw);
  ImageBatch ds = normalize(raw, st);

  ProbeConfig pc;
  pc.seed = 21;
  pc.holdout_frac = 0.5;
  std::vector<double> before = flat_params(model);
  ProbeResult a = linear_probe(model, ds, pc);
  ProbeResult b = linear_probe(model, ds, pc);
  CHECK(flat_params(model) == before);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.per_class == b.per_class);
  CHECK(a.accuracy >= 0.0);
  CHECK(a.accuracy <= 1.0);
  CHECK(a.per_class.size() == 4);
  CHECK(a.n_eval == 128);

  // destroy the label signal: held-out accuracy must sit near 1/4
  ImageBatch shuffled = ds;
  Rng lrng(8);
  for (long i = shuffled.n - 1; i > 0; --i)
    std::swap(shuffled.labels[i], shuffled.labels[lrng.uniform_int(i + 1)]);
  ProbeResult null = linear_probe(model, shuffled, pc);
  CHECK(std::abs(null.accuracy - 0.25) <= 0.10);
}

TEST_CASE("linear probe rejects single-class data") {
  set_precision(Precision::f64);
  Rng rng(7);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  ImageBatch raw = make_labeled(8, 2, 8, 15);
  for (auto& l : raw.labels) l = 0;
  ChannelStats st = compute_stats(raw);
  ImageBatch ds = normalize(raw, st);
  ProbeConfig pc;
  CHECK_THROWS_AS(linear_probe(model, ds, pc), contract_error);
}

TEST_CASE("finetune: zero epochs scores near chance, runs are reproducible") {
  set_precision(Precision::f64);
  Rng rng(8);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  ImageBatch raw = make_labeled(16, 4, 8, 16);
  ChannelStats st = compute_stats(raw);
  ImageBatch ds = normalize(raw, st);

  FinetuneConfig fc;
  fc.epochs = 0;
  fc.seed = 33;
  std::vector<double> before = flat_params(model);
  ProbeResult zero = finetune(model, ds, fc);
  CHECK(flat_params(model) == before);
  CHECK(std::abs(zero.accuracy - 0.25) <= 0.25);

  fc.epochs = 2;
  fc.batch_size = 16;
  fc.lr = 1e-3;
  ProbeResult a = finetune(model, ds, fc);
  ProbeResult b = finetune(model, ds, fc);
  CHECK(flat_params(model) == before);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.n_eval == zero.n_eval);
}

TEST_CASE("greedy matching: exact rows, tie order, crafted case") {
  // identical row sets match the identity
  std::vector<double> rows = {0, 0, 1, 1, 2, 2};
  std::vector<long> m = greedy_match(rows, rows, 3, 2);
  CHECK(m == std::vector<long>({0, 1, 2}));

  // all-equal distances: ties resolve to the lowest (row, ref) pair first
  std::vector<double> flat(6, 0.0);
  m = greedy_match(flat, flat, 3, 2);
  CHECK(m == std::vector<long>({0, 1, 2}));

  // row 0 is nearest to ref 1; greedy takes that pair first
  std::vector<double> a = {0.9, 0.0, 10.0};
  std::vector<double> r = {0.0, 1.0, 10.0};
  m = greedy_match(a, r, 3, 1);
  CHECK(m == std::vector<long>({1, 0, 2}));
}

TEST_CASE("sorting accuracy: zero step size hits the fixed-point rate of chance") {
  set_precision(Precision::f64);
  ViTConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 4;  // 16 positions
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  Rng rng(9);
  EnergyModel model = EnergyModel::init(cfg, rng);

  ImageBatch raw = make_labeled(100, 2, 16, 17);
  ChannelStats st = compute_stats(raw);
  ImageBatch ds = normalize(raw, st);
  SamplerConfig sc;
  sc.steps = 1;

  // alpha = 0 leaves rows as exact copies of permuted true rows: accuracy is
  // exactly the fixed-point fraction of the drawn permutations (mean 1/16)
  double acc = sort_accuracy(model, ds, sc, 0.0, SortOptions::plain(), 51);
  CHECK(std::abs(acc - 1.0 / 16.0) < 0.02);
}

TEST_CASE("sorting accuracy is deterministic and leaves the model alone") {
  set_precision(Precision::f64);
  Rng rng(10);
  EnergyModel model = EnergyModel::init(tiny_cfg(), rng);
  ImageBatch raw = make_labeled(4, 2, 8, 18);
  ChannelStats st = compute_stats(raw);
  ImageBatch ds = normalize(raw, st);
  SamplerConfig sc;
  sc.steps = 2;
  std::vector<double> before = flat_params(model);
  double a = sort_accuracy(model, ds, sc, 0.05, SortOptions::defaults(), 52);
  double b = sort_accuracy(model, ds, sc, 0.05, SortOptions::defaults(), 52);
  CHECK(flat_params(model) == before);
  CHECK(a == b);
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);
}
