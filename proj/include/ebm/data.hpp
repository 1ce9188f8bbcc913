#pragma once

#include <string>
#include <vector>

#include "ebm/rng.hpp"
#include "ebm/tensor.hpp"

namespace ebm {

// Rank-4 [n, c, h, w] image store with optional integer labels. Pixel values
// are in [0,1] when "raw" and standardized after normalize().
struct ImageBatch {
  long n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;
  std::vector<int> labels;

  long image_elems() const { return c * h * w; }
  double* image(long i) { return data.data() + i * image_elems(); }
  const double* image(long i) const { return data.data() + i * image_elems(); }
  ImageBatch subset(const std::vector<long>& indices) const;
};

struct ChannelStats {
  std::vector<double> mean, stddev;  // per channel, [0,1] space
};

struct SyntheticSpec {
  long n_per_class = 32;
  long classes = 4;
  long image_size = 32;
};

// Colored geometric shapes (circle/square/triangle/cross) on hue-correlated
// backgrounds; class = shape kind. Output in [0,1] space.
ImageBatch gen_synthetic(const SyntheticSpec& spec, Rng& rng);

ChannelStats compute_stats(const ImageBatch& raw01);
ImageBatch normalize(const ImageBatch& raw01, const ChannelStats& stats);
ImageBatch denormalize(const ImageBatch& normed, const ChannelStats& stats);

Tensor to_tensor(const ImageBatch& b);
ImageBatch from_tensor(const Tensor& t, std::vector<int> labels = {});

// ---- PNG I/O (8-bit RGB; values clamped to [0,1] on write) ----------------

void save_png(const std::string& path, const ImageBatch& raw01, long index);
// Writes class_<k>/img_<i>.png under root.
void write_dataset_pngs(const std::string& root, const ImageBatch& raw01);
// Reads class_* subdirectories of PNGs, resizing to image_size.
ImageBatch load_folder(const std::string& root, long image_size);

// Side-by-side panel (corrupted | original | restored), one row per image.
void save_triptych_png(const std::string& path, const ImageBatch& corrupted,
                       const ImageBatch& original, const ImageBatch& restored);

}  // namespace ebm
