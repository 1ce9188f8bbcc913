#pragma once

#include <utility>
#include <vector>

#include "ebm/data.hpp"
#include "ebm/rng.hpp"
#include "ebm/tensor.hpp"

namespace ebm {

enum class PretextKind {
  GriddedMask,
  RandomMask,
  SuperRes,
  DiffuseNoise,
  Grayscale,
  ShufflePE,
  Mixed,
};

const char* pretext_name(PretextKind k);

struct GriddedMaskParams {
  long patch_px = 4;
  double ratio = 0.7;
};

struct RandomMaskParams {
  long count = 75;  // "random small" preset; large preset is 25 / (0.02, 0.05)
  double area_lo = 0.01, area_hi = 0.025;
  double aspect_lo = 0.5, aspect_hi = 2.0;
};

struct SuperResParams {
  long factor = 4;
};

// One pretext corruption and its parameters. Mixed draws an independent
// pixel pretext per image according to the weights.
struct CorruptionSpec {
  PretextKind kind = PretextKind::GriddedMask;
  GriddedMaskParams gridded;
  RandomMaskParams random_mask;
  SuperResParams sr;
  std::vector<std::pair<PretextKind, double>> mixed_weights = {
      {PretextKind::GriddedMask, 0.25},
      {PretextKind::SuperRes, 0.25},
      {PretextKind::DiffuseNoise, 0.25},
      {PretextKind::Grayscale, 0.25},
  };
  void validate(long image_size) const;
};

struct CorruptedBatch {
  ImageBatch images;                  // corrupted pixels, normalized space
  std::vector<PretextKind> pretexts;  // provenance per image
  std::vector<double> gammas;         // DiffuseNoise gamma per image (else 0)
  Tensor shuffled_pe;                            // ShufflePE only, [n, T, dim]
  std::vector<std::vector<long>> permutations;   // ShufflePE only, one per image
};

// Exactly round(ratio*P*Q) grid cells zeroed per image, uniform w/o replacement.
ImageBatch mask_gridded(const ImageBatch& x, long patch_px, double ratio, Rng& rng);

// `count` rectangles per image with area ~ U(area range) of the frame and
// aspect ~ U(aspect range); interiors zeroed; rectangles may overlap.
ImageBatch mask_random(const ImageBatch& x, const RandomMaskParams& p, Rng& rng);

// Bicubic (Catmull-Rom, edge clamp) downsample by s, nearest-neighbor back up.
ImageBatch downsample_sr(const ImageBatch& x, long s);

// out = sqrt(gamma)*x + sqrt(1-gamma)*eps with gamma ~ U(0,1) per image.
// gamma is reported for logging only. forced_gamma >= 0 pins gamma (tests).
ImageBatch noise_diffuse(const ImageBatch& x, Rng& rng, std::vector<double>* gammas,
                         double forced_gamma = -1.0);

// Luminance replicated to all channels; computed in [0,1] space.
ImageBatch grayscale(const ImageBatch& x, const ChannelStats& stats);

// Rows permuted by a uniform random permutation.
std::pair<Tensor, std::vector<long>> shuffle_pe(const Tensor& pe_table, Rng& rng);

// Dispatch; pe_table is required only for ShufflePE.
CorruptedBatch apply(const CorruptionSpec& spec, const ImageBatch& x,
                     const ChannelStats& stats, Rng& rng,
                     const Tensor* pe_table = nullptr);

}  // namespace ebm
