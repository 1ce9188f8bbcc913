#pragma once

#include <cstdint>
#include <vector>

#include "ebm/corruptions.hpp"
#include "ebm/data.hpp"
#include "ebm/sampler.hpp"
#include "ebm/vit.hpp"

namespace ebm {

// Energy scores of the same image set in every state: real, corrupted
// (step 0), and after each restoration step. Paired by index.
struct HistogramReport {
  std::vector<double> real;
  std::vector<std::vector<double>> steps;  // steps[0] = corrupted, steps[j] = x^j
  std::vector<double> group_means, group_stds;
  std::vector<double> bin_edges;
  double paired_gap_mean = 0.0;  // mean(corrupted - real)
  double paired_gap_se = 0.0;    // standard error of that paired difference
  long n_eval = 0;
};

HistogramReport energy_histogram(const EnergyModel& model, const ImageBatch& normed,
                                 const CorruptionSpec& corruption,
                                 const SamplerConfig& sampler, double alpha,
                                 const ChannelStats& stats, Rng& rng, long bins = 20);

struct RestorationReport {
  double mse_corrupted = 0.0;  // normalized space
  double mse_restored = 0.0;
  double psnr_corrupted = 0.0;  // [0,1] space, peak 1.0
  double psnr_restored = 0.0;
  double psnr_gain = 0.0;
};

// Core form takes a pre-corrupted batch; the wrapper draws the corruption.
RestorationReport restoration_quality_core(const EnergyModel& model,
                                           const Tensor& corrupted, const Tensor& original,
                                           const SamplerConfig& sampler, double alpha,
                                           const ChannelStats& stats);
RestorationReport restoration_quality(const EnergyModel& model, const ImageBatch& normed,
                                      const CorruptionSpec& corruption,
                                      const SamplerConfig& sampler, double alpha,
                                      const ChannelStats& stats, Rng& rng);

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> per_class;
  long n_eval = 0;
};

struct ProbeConfig {
  long epochs = 100;
  double lr = 1e-3;
  double holdout_frac = 0.2;
  std::uint64_t seed = 0;
};

// Frozen class-token features, multinomial logistic regression on top,
// held-out accuracy. The model is never modified.
ProbeResult linear_probe(const EnergyModel& model, const ImageBatch& normed_labeled,
                         const ProbeConfig& cfg);

struct FinetuneConfig {
  long epochs = 20;
  double lr = 1e-4;
  double weight_decay = 0.05;
  long batch_size = 64;
  double holdout_frac = 0.2;
  std::uint64_t seed = 0;
};

// Swaps the energy head for a class-count head and trains every parameter on
// an internal copy; random crop and horizontal flip are the only augmentations.
ProbeResult finetune(const EnergyModel& model, const ImageBatch& normed_labeled,
                     const FinetuneConfig& cfg);

// Shuffles each image's PE table, runs the sorting chain, then greedily
// assigns restored rows to nearest true rows; fraction assigned to their own
// grid position.
double sort_accuracy(const EnergyModel& model, const ImageBatch& normed,
                     const SamplerConfig& sampler, double alpha,
                     const SortOptions& opts, std::uint64_t seed);

// Greedy best-first one-to-one row matching, exposed for direct testing.
// rows/ref are [n, d] flattened; returns for each row index the matched ref index.
std::vector<long> greedy_match(const std::vector<double>& rows,
                               const std::vector<double>& ref, long n, long d);

}  // namespace ebm
