#include "ebm/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ebm {

namespace {

// Catmull-Rom cubic kernel (a = -0.5)
double cubic_weight(double d) {
  constexpr double a = -0.5;
  d = std::abs(d);
  if (d < 1.0) return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0;
  if (d < 2.0) return (((d - 5.0) * d + 8.0) * d - 4.0) * a;
  return 0.0;
}

long clampl(long v, long lo, long hi) { return std::max(lo, std::min(hi, v)); }

}  // namespace

const char* pretext_name(PretextKind k) {
  switch (k) {
    case PretextKind::GriddedMask: return "gridded_mask";
    case PretextKind::RandomMask: return "random_mask";
    case PretextKind::SuperRes: return "super_res";
    case PretextKind::DiffuseNoise: return "diffuse_noise";
    case PretextKind::Grayscale: return "grayscale";
    case PretextKind::ShufflePE: return "shuffle_pe";
    case PretextKind::Mixed: return "mixed";
  }
  return "?";
}

void CorruptionSpec::validate(long image_size) const {
  auto check_one = [&](PretextKind k) {
    switch (k) {
      case PretextKind::GriddedMask: {
        if (gridded.ratio <= 0.0 || gridded.ratio > 1.0)
          throw contract_error("CorruptionSpec: gridded ratio must be in (0,1]");
        if (gridded.patch_px <= 0 || image_size % gridded.patch_px != 0)
          throw contract_error("CorruptionSpec: gridded patch_px must divide image size");
        long cells = (image_size / gridded.patch_px) * (image_size / gridded.patch_px);
        if (std::lround(gridded.ratio * cells) == 0)
          throw contract_error("CorruptionSpec: gridded ratio masks zero patches");
        break;
      }
      case PretextKind::RandomMask:
        if (random_mask.count < 1)
          throw contract_error("CorruptionSpec: random mask count must be >= 1");
        if (!(random_mask.area_lo > 0.0 && random_mask.area_hi < 1.0 &&
              random_mask.area_lo <= random_mask.area_hi))
          throw contract_error("CorruptionSpec: random mask area range must be within (0,1)");
        break;
      case PretextKind::SuperRes:
        if (sr.factor < 2 || image_size % sr.factor != 0 || image_size / sr.factor < 1)
          throw contract_error("CorruptionSpec: SR factor must be >= 2 and divide image size");
        break;
      default:
        break;
    }
  };
  if (kind == PretextKind::Mixed) {
    double total = 0.0;
    for (auto& [k, wgt] : mixed_weights) {
      if (k == PretextKind::Mixed || k == PretextKind::ShufflePE)
        throw contract_error("CorruptionSpec: mixed weights must name pixel pretexts");
      if (wgt < 0.0) throw contract_error("CorruptionSpec: negative mixed weight");
      total += wgt;
      check_one(k);
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw contract_error("CorruptionSpec: mixed weights must sum to 1");
  } else {
    check_one(kind);
  }
}

ImageBatch mask_gridded(const ImageBatch& x, long patch_px, double ratio, Rng& rng) {
  if (patch_px <= 0 || x.h % patch_px != 0 || x.w % patch_px != 0)
    throw contract_error("mask_gridded: patch_px must divide image size");
  long gy = x.h / patch_px, gx = x.w / patch_px;
  long cells = gy * gx;
  long k = std::lround(ratio * cells);
  if (k == 0) throw contract_error("mask_gridded: ratio masks zero patches");
  ImageBatch out = x;
  std::vector<long> order(cells);
  long hw = x.h * x.w;
  for (long img = 0; img < x.n; ++img) {
    std::iota(order.begin(), order.end(), 0);
    for (long i = 0; i < k; ++i) {
      long j = i + rng.uniform_int(cells - i);
      std::swap(order[i], order[j]);
    }
    double* d = out.image(img);
    for (long i = 0; i < k; ++i) {
      long cy = (order[i] / gx) * patch_px, cx = (order[i] % gx) * patch_px;
      for (long ch = 0; ch < x.c; ++ch)
        for (long yy = 0; yy < patch_px; ++yy)
          for (long xx = 0; xx < patch_px; ++xx)
            d[ch * hw + (cy + yy) * x.w + cx + xx] = 0.0;
    }
  }
  return out;
}

ImageBatch mask_random(const ImageBatch& x, const RandomMaskParams& p, Rng& rng) {
  if (p.count < 1) throw contract_error("mask_random: count must be >= 1");
  ImageBatch out = x;
  long hw = x.h * x.w;
  for (long img = 0; img < x.n; ++img) {
    double* d = out.image(img);
    for (long r = 0; r < p.count; ++r) {
      double a = rng.uniform(p.area_lo, p.area_hi);
      double asp = rng.uniform(p.aspect_lo, p.aspect_hi);
      long rh = clampl(std::lround(std::sqrt(a * x.h * x.w * asp)), 1, x.h);
      long rw = clampl(std::lround(std::sqrt(a * x.h * x.w / asp)), 1, x.w);
      long top = rng.uniform_int(x.h - rh + 1);
      long left = rng.uniform_int(x.w - rw + 1);
      for (long ch = 0; ch < x.c; ++ch)
        for (long yy = 0; yy < rh; ++yy)
          for (long xx = 0; xx < rw; ++xx)
            d[ch * hw + (top + yy) * x.w + left + xx] = 0.0;
    }
  }
  return out;
}

ImageBatch downsample_sr(const ImageBatch& x, long s) {
  if (s < 2) throw contract_error("downsample_sr: factor must be >= 2 (s=1 is a no-op)");
  if (x.h % s != 0 || x.w % s != 0)
    throw contract_error("downsample_sr: factor must divide image size");
  long lh = x.h / s, lw = x.w / s;
  ImageBatch out = x;
  long hw = x.h * x.w;
  std::vector<double> low(lh * lw);
  for (long img = 0; img < x.n; ++img) {
    const double* src = x.image(img);
    double* dst = out.image(img);
    for (long ch = 0; ch < x.c; ++ch) {
      const double* plane = src + ch * hw;
      // bicubic sample at destination-center source coordinates
      for (long ly = 0; ly < lh; ++ly)
        for (long lx = 0; lx < lw; ++lx) {
          double sy = (ly + 0.5) * s - 0.5;
          double sx = (lx + 0.5) * s - 0.5;
          long iy = static_cast<long>(std::floor(sy));
          long ix = static_cast<long>(std::floor(sx));
          double acc = 0.0;
          for (long m = -1; m <= 2; ++m) {
            double wy = cubic_weight(sy - (iy + m));
            if (wy == 0.0) continue;
            long yy = clampl(iy + m, 0, x.h - 1);
            for (long nn = -1; nn <= 2; ++nn) {
              double wx = cubic_weight(sx - (ix + nn));
              if (wx == 0.0) continue;
              long xx = clampl(ix + nn, 0, x.w - 1);
              acc += wy * wx * plane[yy * x.w + xx];
            }
          }
          low[ly * lw + lx] = acc;
        }
      // nearest-neighbor upsample
      for (long y = 0; y < x.h; ++y)
        for (long xx = 0; xx < x.w; ++xx)
          dst[ch * hw + y * x.w + xx] = low[(y / s) * lw + xx / s];
    }
  }
  return out;
}

ImageBatch noise_diffuse(const ImageBatch& x, Rng& rng, std::vector<double>* gammas,
                         double forced_gamma) {
  ImageBatch out = x;
  long per = x.image_elems();
  if (gammas) gammas->assign(x.n, 0.0);
  for (long img = 0; img < x.n; ++img) {
    double gamma = forced_gamma >= 0.0 ? forced_gamma : rng.uniform();
    if (gammas) (*gammas)[img] = gamma;
    double sg = std::sqrt(gamma), sn = std::sqrt(1.0 - gamma);
    double* d = out.image(img);
    for (long i = 0; i < per; ++i) d[i] = sg * d[i] + sn * rng.normal();
  }
  return out;
}

ImageBatch grayscale(const ImageBatch& x, const ChannelStats& stats) {
  if (x.c != 3) throw contract_error("grayscale: 3-channel input required");
  ImageBatch raw = denormalize(x, stats);
  long hw = x.h * x.w;
  for (long img = 0; img < x.n; ++img) {
    double* d = raw.image(img);
    for (long p = 0; p < hw; ++p) {
      double y = 0.299 * d[p] + 0.587 * d[hw + p] + 0.114 * d[2 * hw + p];
      d[p] = d[hw + p] = d[2 * hw + p] = y;
    }
  }
  return normalize(raw, stats);
}

std::pair<Tensor, std::vector<long>> shuffle_pe(const Tensor& pe_table, Rng& rng) {
  if (pe_table.dim() != 2) throw contract_error("shuffle_pe: rank-2 table required");
  long rows = pe_table.shape()[0];
  std::vector<long> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  for (long i = rows - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  return {index_select(pe_table, 0, perm), perm};
}

CorruptedBatch apply(const CorruptionSpec& spec, const ImageBatch& x,
                     const ChannelStats& stats, Rng& rng, const Tensor* pe_table) {
  spec.validate(x.h);
  CorruptedBatch out;
  out.gammas.assign(x.n, 0.0);

  auto run_single = [&](PretextKind k, const ImageBatch& in, Rng& r) -> ImageBatch {
    switch (k) {
      case PretextKind::GriddedMask:
        return mask_gridded(in, spec.gridded.patch_px, spec.gridded.ratio, r);
      case PretextKind::RandomMask:
        return mask_random(in, spec.random_mask, r);
      case PretextKind::SuperRes:
        return downsample_sr(in, spec.sr.factor);
      case PretextKind::DiffuseNoise: {
        std::vector<double> g;
        ImageBatch o = noise_diffuse(in, r, &g);
        for (long i = 0; i < in.n; ++i) out.gammas[/*offset filled below*/ i] = g[i];
        return o;
      }
      case PretextKind::Grayscale:
        return grayscale(in, stats);
      default:
        throw contract_error("apply: unsupported pretext in pixel path");
    }
  };

  if (spec.kind == PretextKind::ShufflePE) {
    if (!pe_table) throw contract_error("apply: ShufflePE needs the PE table");
    out.images = x;
    out.pretexts.assign(x.n, PretextKind::ShufflePE);
    long rows = pe_table->shape()[0], dim = pe_table->shape()[1];
    std::vector<Tensor> tables;
    for (long img = 0; img < x.n; ++img) {
      auto [pe, perm] = shuffle_pe(*pe_table, rng);
      tables.push_back(reshape(pe, {1, rows, dim}));
      out.permutations.push_back(std::move(perm));
    }
    out.shuffled_pe = x.n == 1 ? tables[0] : concat(tables, 0);
    return out;
  }

  if (spec.kind != PretextKind::Mixed) {
    out.images = run_single(spec.kind, x, rng);
    out.pretexts.assign(x.n, spec.kind);
    return out;
  }

  // Mixed: draw a pretext per image, corrupt each image independently
  out.images = x;
  out.pretexts.resize(x.n);
  for (long img = 0; img < x.n; ++img) {
    double u = rng.uniform();
    double acc = 0.0;
    PretextKind k = spec.mixed_weights.back().first;
    for (auto& [cand, wgt] : spec.mixed_weights) {
      acc += wgt;
      if (u < acc) {
        k = cand;
        break;
      }
    }
    out.pretexts[img] = k;
    ImageBatch single;
    single.n = 1;
    single.c = x.c;
    single.h = x.h;
    single.w = x.w;
    single.data.assign(x.image(img), x.image(img) + x.image_elems());
    if (k == PretextKind::DiffuseNoise) {
      std::vector<double> g;
      single = noise_diffuse(single, rng, &g);
      out.gammas[img] = g[0];
    } else {
      single = run_single(k, single, rng);
    }
    std::copy(single.data.begin(), single.data.end(), out.images.image(img));
  }
  return out;
}

}  // namespace ebm
