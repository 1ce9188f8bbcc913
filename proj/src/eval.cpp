#include "ebm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace ebm {

namespace {

double vec_mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double vec_std(const std::vector<double>& v) {
  double mu = vec_mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / v.size());
}

double mse_of(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / a.size();
}

// peak 1.0, pixels clamped to [0,1]; capped to avoid infinities at mse ~ 0
double psnr01(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> ca(a), cb(b);
  for (double& v : ca) v = std::clamp(v, 0.0, 1.0);
  for (double& v : cb) v = std::clamp(v, 0.0, 1.0);
  return 10.0 * std::log10(1.0 / std::max(mse_of(ca, cb), 1e-12));
}

EnergyModel clone_model(const EnergyModel& m) {
  Rng scratch(0);
  EnergyModel c = EnergyModel::init(m.cfg, scratch);
  auto src = m.params();
  auto dst = c.params();
  for (size_t i = 0; i < src.size(); ++i) dst[i].second.mutable_data() = src[i].second.data();
  c.pe_table = m.pe_table.detach();
  return c;
}

// stratified holdout split; eval gets ceil(frac * class size), at least 1
void split_labeled(const ImageBatch& ds, double frac, std::uint64_t seed,
                   std::vector<long>& train_idx, std::vector<long>& eval_idx) {
  std::map<int, std::vector<long>> by_class;
  for (long i = 0; i < ds.n; ++i) by_class[ds.labels[i]].push_back(i);
  if (by_class.size() < 2)
    throw contract_error("labeled evaluation needs at least 2 classes");
  SeededRng streams(seed);
  for (auto& [cls, idx] : by_class) {
    Rng rng = streams.stream("split", static_cast<std::uint64_t>(cls), 0);
    for (long i = static_cast<long>(idx.size()) - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
    long hold = std::max<long>(1, std::lround(frac * idx.size()));
    hold = std::min<long>(hold, static_cast<long>(idx.size()) - 1);
    eval_idx.insert(eval_idx.end(), idx.begin(), idx.begin() + hold);
    train_idx.insert(train_idx.end(), idx.begin() + hold, idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
}

long n_classes_of(const ImageBatch& ds) {
  int top = 0;
  for (int l : ds.labels) top = std::max(top, l);
  return top + 1;
}

// mean_i [ logsumexp(z_i) - z_{i, y_i} ], shift constants taken from data
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  long n = logits.shape()[0], C = logits.shape()[1];
  std::vector<double> shift_v(n), onehot_v(n * C, 0.0);
  for (long i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (long c = 0; c < C; ++c) m = std::max(m, logits.data()[i * C + c]);
    shift_v[i] = m;
    onehot_v[i * C + labels[i]] = 1.0;
  }
  Tensor shift = Tensor::from_data({n, 1}, shift_v);
  Tensor onehot = Tensor::from_data({n, C}, onehot_v);
  Tensor z = sub(logits, broadcast_to(shift, {n, C}));
  Tensor lse = add(log_(sum(exp_(z), 1, true)), shift);  // [n,1]
  Tensor picked = sum(mul(onehot, logits), 1, true);     // [n,1]
  return mean(sub(lse, picked));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  long n = logits.shape()[0], C = logits.shape()[1];
  std::vector<int> out(n);
  for (long i = 0; i < n; ++i) {
    long best = 0;
    for (long c = 1; c < C; ++c)
      if (logits.data()[i * C + c] > logits.data()[i * C + best]) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

ProbeResult score_predictions(const std::vector<int>& pred, const ImageBatch& eval_set,
                              long classes) {
  ProbeResult res;
  res.n_eval = eval_set.n;
  std::vector<long> hit(classes, 0), tot(classes, 0);
  long correct = 0;
  for (long i = 0; i < eval_set.n; ++i) {
    ++tot[eval_set.labels[i]];
    if (pred[i] == eval_set.labels[i]) {
      ++correct;
      ++hit[eval_set.labels[i]];
    }
  }
  res.accuracy = static_cast<double>(correct) / eval_set.n;
  for (long c = 0; c < classes; ++c)
    res.per_class.push_back(tot[c] ? static_cast<double>(hit[c]) / tot[c] : 0.0);
  return res;
}

// random crop (zero pad 2) + horizontal flip, in normalized pixel space
ImageBatch augment(const ImageBatch& b, Rng& rng) {
  ImageBatch out = b;
  const long pad = 2;
  for (long i = 0; i < b.n; ++i) {
    long dx = rng.uniform_int(2 * pad + 1) - pad;
    long dy = rng.uniform_int(2 * pad + 1) - pad;
    bool flip = rng.uniform() < 0.5;
    for (long c = 0; c < b.c; ++c)
      for (long y = 0; y < b.h; ++y)
        for (long x = 0; x < b.w; ++x) {
          long sx = flip ? b.w - 1 - x : x;
          long yy = y + dy, xx = sx + dx;
          double v = 0.0;
          if (yy >= 0 && yy < b.h && xx >= 0 && xx < b.w)
            v = b.data[((i * b.c + c) * b.h + yy) * b.w + xx];
          out.data[((i * b.c + c) * b.h + y) * b.w + x] = v;
        }
  }
  return out;
}

}  // namespace

HistogramReport energy_histogram(const EnergyModel& model, const ImageBatch& normed,
                                 const CorruptionSpec& corruption,
                                 const SamplerConfig& sampler, double alpha,
                                 const ChannelStats& stats, Rng& rng, long bins) {
  if (corruption.kind == PretextKind::ShufflePE)
    throw contract_error("energy_histogram: pixel-space corruption required");
  CorruptedBatch cb = apply(corruption, normed, stats, rng);
  Tensor x = to_tensor(normed);
  RestoreResult rr =
      conditional_restore(model, to_tensor(cb.images), x, sampler, Tensor::scalar(alpha));

  HistogramReport rep;
  rep.n_eval = normed.n;
  rep.real = energy(model, x).data();
  for (long j = 0; j <= sampler.steps; ++j)
    rep.steps.push_back(energy(model, rr.chain.states[j]).data());

  auto summarize = [&](const std::vector<double>& g) {
    rep.group_means.push_back(vec_mean(g));
    rep.group_stds.push_back(vec_std(g));
  };
  summarize(rep.real);
  for (auto& g : rep.steps) summarize(g);

  std::vector<double> diff(normed.n);
  for (long i = 0; i < normed.n; ++i) diff[i] = rep.steps[0][i] - rep.real[i];
  rep.paired_gap_mean = vec_mean(diff);
  rep.paired_gap_se = vec_std(diff) / std::sqrt(static_cast<double>(normed.n));

  double lo = rep.real[0], hi = rep.real[0];
  auto widen = [&](const std::vector<double>& g) {
    for (double v : g) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  };
  widen(rep.real);
  for (auto& g : rep.steps) widen(g);
  if (hi <= lo) hi = lo + 1.0;
  for (long b = 0; b <= bins; ++b) rep.bin_edges.push_back(lo + (hi - lo) * b / bins);
  return rep;
}

RestorationReport restoration_quality_core(const EnergyModel& model,
                                           const Tensor& corrupted, const Tensor& original,
                                           const SamplerConfig& sampler, double alpha,
                                           const ChannelStats& stats) {
  RestoreResult rr =
      conditional_restore(model, corrupted, original, sampler, Tensor::scalar(alpha));
  RestorationReport rep;
  rep.mse_corrupted = mse_of(corrupted.data(), original.data());
  rep.mse_restored = mse_of(rr.chain.states.back().data(), original.data());

  ImageBatch orig01 = denormalize(from_tensor(original), stats);
  ImageBatch corr01 = denormalize(from_tensor(corrupted), stats);
  ImageBatch rest01 = denormalize(from_tensor(rr.chain.states.back()), stats);
  rep.psnr_corrupted = psnr01(corr01.data, orig01.data);
  rep.psnr_restored = psnr01(rest01.data, orig01.data);
  rep.psnr_gain = rep.psnr_restored - rep.psnr_corrupted;
  return rep;
}

RestorationReport restoration_quality(const EnergyModel& model, const ImageBatch& normed,
                                      const CorruptionSpec& corruption,
                                      const SamplerConfig& sampler, double alpha,
                                      const ChannelStats& stats, Rng& rng) {
  if (corruption.kind == PretextKind::ShufflePE)
    throw contract_error("restoration_quality: pixel-space corruption required");
  CorruptedBatch cb = apply(corruption, normed, stats, rng);
  return restoration_quality_core(model, to_tensor(cb.images), to_tensor(normed),
                                  sampler, alpha, stats);
}


// Chunked so the tape for a large batch never lives all at once.
static Tensor features_detached(const EnergyModel& model, const ImageBatch& set) {
  std::vector<Tensor> parts;
  Tensor all = to_tensor(set);
  for (long at = 0; at < set.n; at += 32) {
    long take = std::min<long>(32, set.n - at);
    std::vector<long> idx(take);
    for (long i = 0; i < take; ++i) idx[i] = at + i;
    parts.push_back(class_features(model, index_select(all, 0, idx)).detach());
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

ProbeResult linear_probe(const EnergyModel& model, const ImageBatch& normed_labeled,
                         const ProbeConfig& cfg) {
  std::vector<long> train_idx, eval_idx;
  split_labeled(normed_labeled, cfg.holdout_frac, cfg.seed, train_idx, eval_idx);
  ImageBatch train_set = normed_labeled.subset(train_idx);
  ImageBatch eval_set = normed_labeled.subset(eval_idx);
  long C = n_classes_of(normed_labeled);
  long D = model.cfg.embed_dim;

  Tensor f_train = features_detached(model, train_set);
  Tensor f_eval = features_detached(model, eval_set);

  SeededRng streams(cfg.seed);
  Rng init = streams.stream("probe-init");
  Tensor W = Tensor::randn({D, C}, init, 0.01).set_requires_grad(true);
  Tensor b = Tensor::zeros({C}).set_requires_grad(true);
  AdamWState st;
  st.reset({W, b});
  AdamWHyper hy;
  hy.lr = cfg.lr;
  hy.weight_decay = 0.0;

  long n_train = train_set.n;
  for (long e = 0; e < cfg.epochs; ++e) {
    Tensor logits = add(matmul(f_train, W), broadcast_to(reshape(b, {1, C}), {n_train, C}));
    Tensor loss = cross_entropy(logits, train_set.labels);
    std::vector<Tensor> g = grad(loss, {W, b}, false);
    adamw_update({W, b}, g, st, hy, {false, false});
  }

  Tensor logits = add(matmul(f_eval, W), broadcast_to(reshape(b, {1, C}), {eval_set.n, C}));
  return score_predictions(argmax_rows(logits), eval_set, C);
}

ProbeResult finetune(const EnergyModel& model, const ImageBatch& normed_labeled,
                     const FinetuneConfig& cfg) {
  std::vector<long> train_idx, eval_idx;
  split_labeled(normed_labeled, cfg.holdout_frac, cfg.seed, train_idx, eval_idx);
  ImageBatch train_set = normed_labeled.subset(train_idx);
  ImageBatch eval_set = normed_labeled.subset(eval_idx);
  long C = n_classes_of(normed_labeled);
  long D = model.cfg.embed_dim;

  EnergyModel net = clone_model(model);
  net.set_requires_grad(true);
  SeededRng streams(cfg.seed);
  Rng init = streams.stream("head-init");
  Tensor W = Tensor::randn({D, C}, init, 0.01).set_requires_grad(true);
  Tensor b = Tensor::zeros({C}).set_requires_grad(true);

  std::vector<Tensor> params;
  std::vector<bool> decay;
  for (auto& [name, p] : net.params()) {
    params.push_back(p);
    decay.push_back(name.find("norm") == std::string::npos);
  }
  params.push_back(W);
  decay.push_back(true);
  params.push_back(b);
  decay.push_back(false);
  AdamWState st;
  st.reset(params);

  long steps_per_epoch = (train_set.n + cfg.batch_size - 1) / cfg.batch_size;
  long total_steps = std::max<long>(1, steps_per_epoch * cfg.epochs);
  long step = 0;
  for (long e = 0; e < cfg.epochs; ++e) {
    Rng order_rng = streams.stream("order", e);
    Rng aug_rng = streams.stream("augment", e);
    std::vector<long> order(train_set.n);
    std::iota(order.begin(), order.end(), 0);
    for (long i = train_set.n - 1; i > 0; --i)
      std::swap(order[i], order[order_rng.uniform_int(i + 1)]);
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      long lo = s * cfg.batch_size;
      long hi = std::min(lo + cfg.batch_size, train_set.n);
      std::vector<long> idx(order.begin() + lo, order.begin() + hi);
      ImageBatch batch = augment(train_set.subset(idx), aug_rng);
      long n = batch.n;
      Tensor feats = class_features(net, to_tensor(batch));
      Tensor logits = add(matmul(feats, W), broadcast_to(reshape(b, {1, C}), {n, C}));
      Tensor loss = cross_entropy(logits, batch.labels);
      std::vector<Tensor> g = grad(loss, params, false);
      for (const Tensor& gi : g) check_finite(gi, "finetune gradient");
      AdamWHyper hy;
      hy.lr = lr_schedule(cfg.lr, step, total_steps, 0.05);
      hy.weight_decay = cfg.weight_decay;
      adamw_update(params, g, st, hy, decay);
    }
  }

  Tensor feats = features_detached(net, eval_set);
  Tensor logits = add(matmul(feats, W), broadcast_to(reshape(b, {1, C}), {eval_set.n, C}));
  return score_predictions(argmax_rows(logits), eval_set, C);
}

std::vector<long> greedy_match(const std::vector<double>& rows,
                               const std::vector<double>& ref, long n, long d) {
  std::vector<double> dist(n * n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) {
      double acc = 0.0;
      for (long k = 0; k < d; ++k) {
        double diff = rows[i * d + k] - ref[j * d + k];
        acc += diff * diff;
      }
      dist[i * n + j] = acc;
    }
  std::vector<long> match(n, -1);
  std::vector<bool> row_used(n, false), col_used(n, false);
  for (long pick = 0; pick < n; ++pick) {
    double best = std::numeric_limits<double>::infinity();
    long bi = -1, bj = -1;
    for (long i = 0; i < n; ++i) {
      if (row_used[i]) continue;
      for (long j = 0; j < n; ++j) {
        if (col_used[j]) continue;
        if (dist[i * n + j] < best) {
          best = dist[i * n + j];
          bi = i;
          bj = j;
        }
      }
    }
    match[bi] = bj;
    row_used[bi] = true;
    col_used[bj] = true;
  }
  return match;
}

double sort_accuracy(const EnergyModel& model, const ImageBatch& normed,
                     const SamplerConfig& sampler, double alpha,
                     const SortOptions& opts, std::uint64_t seed) {
  const long n = normed.n, T = model.cfg.tokens(), D = model.cfg.embed_dim;
  SeededRng streams(seed);
  Rng shuffle_rng = streams.stream("shuffle");
  std::vector<Tensor> tables;
  for (long i = 0; i < n; ++i) {
    auto [shuf, perm] = shuffle_pe(model.pe_table, shuffle_rng);
    tables.push_back(reshape(shuf, {1, T, D}));
  }
  Tensor shuffled = n == 1 ? tables[0] : concat(tables, 0);
  Rng reg_rng = streams.stream("regularizers");
  RestoreResult rr = sort_restore(model, to_tensor(normed), shuffled, model.pe_table,
                                  sampler, Tensor::scalar(alpha), opts, reg_rng);

  const std::vector<double>& final_pe = rr.chain.states.back().data();
  const std::vector<double>& true_pe = model.pe_table.data();
  long correct = 0;
  for (long i = 0; i < n; ++i) {
    std::vector<double> rows(final_pe.begin() + i * T * D,
                             final_pe.begin() + (i + 1) * T * D);
    std::vector<long> match = greedy_match(rows, true_pe, T, D);
    for (long t = 0; t < T; ++t)
      if (match[t] == t) ++correct;
  }
  return static_cast<double>(correct) / (n * T);
}

}  // namespace ebm
