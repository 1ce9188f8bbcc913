#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ebm/rng.hpp"
#include "ebm/tensor.hpp"

namespace ebm {

struct ViTConfig {
  long image_size = 32;
  long patch_size = 4;
  long embed_dim = 64;
  long depth = 4;
  long heads = 4;
  double mlp_ratio = 4.0;
  long channels = 3;

  long grid() const { return image_size / patch_size; }
  long tokens() const { return grid() * grid(); }
  long patch_dim() const { return channels * patch_size * patch_size; }
  long mlp_hidden() const { return static_cast<long>(mlp_ratio * embed_dim); }
  void validate() const;
};

// Distribution over the outer-pixel band width k zeroed per patch.
struct EdgeMaskSpec {
  bool active = false;
  std::vector<std::pair<long, double>> k_probs = {{1, 0.5}, {2, 0.5}};
  long draw_k(Rng& rng) const;
  void validate() const;
};

// 2D sin-cos table [grid_h*grid_w, dim]; first half row-coded, second half
// column-coded, each alternating sin/cos over geometric frequencies.
Tensor sincos_pe(long grid_h, long grid_w, long dim);

struct TransformerBlock {
  Tensor norm1_w, norm1_b;
  Tensor qkv_w, qkv_b;    // [D, 3D], [3D]
  Tensor proj_w, proj_b;  // [D, D], [D]
  Tensor norm2_w, norm2_b;
  Tensor fc1_w, fc1_b;  // [D, H], [H]
  Tensor fc2_w, fc2_b;  // [H, D], [D]
};

// ViT backbone plus single-output linear head: E(x) = h(psi(x)).
struct EnergyModel {
  ViTConfig cfg;
  Tensor patch_w, patch_b;  // [patch_dim, D], [D]
  Tensor cls_token;         // [1, 1, D]
  std::vector<TransformerBlock> blocks;
  Tensor norm_w, norm_b;  // final layer norm affine
  Tensor head_w;          // [D, 1], bias-free
  Tensor pe_table;        // fixed sin-cos, not a parameter

  static EnergyModel init(const ViTConfig& cfg, Rng& rng);

  // Named parameter handles (shared storage; mutating updates the model).
  std::vector<std::pair<std::string, Tensor>> params() const;
  long param_count() const;
  void set_requires_grad(bool v);
};

// Closed-form parameter count for a config; cross-checks checkpoints.
long vit_param_count(const ViTConfig& cfg);

// Per-sample energy scores [n] for x [n,c,h,w].
Tensor energy(const EnergyModel& model, const Tensor& x);

// As energy() but with a caller-supplied PE table (differentiable w.r.t. it).
Tensor energy_with_pe(const EnergyModel& model, const Tensor& x, const Tensor& pe);

// Class-token feature [n, D] after the final norm; used by probing.
Tensor class_features(const EnergyModel& model, const Tensor& x);

// Patch tokens for one image after edge masking and patch dropout.
// tokens: [1, S, D] embeddings of the S surviving patches (no PE added);
// indices: their grid positions.
struct TokenSet {
  Tensor tokens;
  std::vector<long> indices;
};

// Applies the sorting-pretext regularizers per image: zero the k outermost
// pixels of every patch (k drawn per patch) and drop patches independently.
// Resamples the dropout draw until at least one patch survives.
std::vector<TokenSet> patch_embed_with_regularizers(const EnergyModel& model,
                                                    const Tensor& x,
                                                    const EdgeMaskSpec& edge_mask,
                                                    double patch_dropout, Rng& rng);

// Energy of one image given surviving tokens and the PE table to read their
// rows from; the sorting-pretext forward.
Tensor energy_from_tokens(const EnergyModel& model, const TokenSet& tokens,
                          const Tensor& pe);

}  // namespace ebm
