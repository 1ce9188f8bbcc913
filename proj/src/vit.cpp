#include "ebm/vit.hpp"

#include <cmath>
#include <memory>

namespace ebm {

namespace {

constexpr double kLnEps = 1e-6;

Tensor trunc_normal(Shape shape, Rng& rng, double stddev) {
  long n = numel_of(shape);
  std::vector<double> d(n);
  for (long i = 0; i < n; ++i) {
    double v;
    do {
      v = rng.normal();
    } while (std::abs(v) > 2.0);
    d[i] = v * stddev;
  }
  return Tensor::from_data(std::move(shape), std::move(d));
}

// Element map turning [n,c,h,w] pixels into [n, T, c*p*p] patch vectors.
std::shared_ptr<std::vector<long>> patch_map(const ViTConfig& cfg, long n) {
  long c = cfg.channels, h = cfg.image_size, w = cfg.image_size, p = cfg.patch_size;
  long g = cfg.grid();
  auto map = std::make_shared<std::vector<long>>(n * c * h * w);
  long out = 0;
  for (long img = 0; img < n; ++img)
    for (long gy = 0; gy < g; ++gy)
      for (long gx = 0; gx < g; ++gx)
        for (long ch = 0; ch < c; ++ch)
          for (long py = 0; py < p; ++py)
            for (long px = 0; px < p; ++px)
              (*map)[out++] =
                  ((img * c + ch) * h + gy * p + py) * w + gx * p + px;
  return map;
}

Tensor extract_patches(const ViTConfig& cfg, const Tensor& x) {
  long n = x.shape()[0];
  return permute_elements(x, patch_map(cfg, n), {n, cfg.tokens(), cfg.patch_dim()});
}

Tensor affine_norm(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(mul(layer_norm(x, kLnEps), w), b);
}

// Transformer encoder over seq [n, t, D], pre-norm residual blocks.
Tensor encode(const EnergyModel& m, Tensor seq) {
  const long D = m.cfg.embed_dim, H = m.cfg.heads, hd = D / H;
  const long n = seq.shape()[0], t = seq.shape()[1];
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (const TransformerBlock& blk : m.blocks) {
    Tensor h = affine_norm(seq, blk.norm1_w, blk.norm1_b);
    Tensor qkv = add(matmul(h, blk.qkv_w), blk.qkv_b);  // [n,t,3D]
    auto split_heads = [&](long off) {
      Tensor part = slice(qkv, 2, off * D, (off + 1) * D);
      return permute(reshape(part, {n, t, H, hd}), {0, 2, 1, 3});  // [n,H,t,hd]
    };
    Tensor q = split_heads(0), k = split_heads(1), v = split_heads(2);
    Tensor att = softmax_lastdim(mul(matmul(q, transpose_last2(k)), scale));
    Tensor out = matmul(att, v);                               // [n,H,t,hd]
    out = reshape(permute(out, {0, 2, 1, 3}), {n, t, D});      // merge heads
    seq = add(seq, add(matmul(out, blk.proj_w), blk.proj_b));
    Tensor h2 = affine_norm(seq, blk.norm2_w, blk.norm2_b);
    Tensor mid = gelu(add(matmul(h2, blk.fc1_w), blk.fc1_b));
    seq = add(seq, add(matmul(mid, blk.fc2_w), blk.fc2_b));
  }
  return affine_norm(seq, m.norm_w, m.norm_b);
}

Tensor cls_feature_of(const Tensor& encoded) {
  long n = encoded.shape()[0], D = encoded.shape()[2];
  return reshape(slice(encoded, 1, 0, 1), {n, D});
}

Tensor head_scores(const EnergyModel& m, const Tensor& cls) {
  long n = cls.shape()[0];
  return reshape(matmul(cls, m.head_w), {n});
}

Tensor encode_with_pe(const EnergyModel& m, const Tensor& x, const Tensor& pe) {
  if (x.dim() != 4 || x.shape()[1] != m.cfg.channels ||
      x.shape()[2] != m.cfg.image_size || x.shape()[3] != m.cfg.image_size)
    throw contract_error("energy: input " + shape_str(x.shape()) +
                         " does not match model config");
  if (pe.shape() != Shape{m.cfg.tokens(), m.cfg.embed_dim})
    throw contract_error("energy: PE shape " + shape_str(pe.shape()) + " mismatch");
  long n = x.shape()[0];
  Tensor tokens = extract_patches(m.cfg, x);                       // [n,T,pd]
  Tensor emb = add(matmul(tokens, m.patch_w), m.patch_b);          // [n,T,D]
  emb = add(emb, reshape(pe, {1, m.cfg.tokens(), m.cfg.embed_dim}));
  Tensor cls = broadcast_to(m.cls_token, {n, 1, m.cfg.embed_dim});
  return encode(m, concat({cls, emb}, 1));
}

}  // namespace

void ViTConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    throw contract_error("ViTConfig: image_size must be a positive multiple of patch_size");
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
    throw contract_error("ViTConfig: embed_dim must be a positive multiple of heads");
  if (depth <= 0 || mlp_ratio <= 0 || channels <= 0)
    throw contract_error("ViTConfig: depth/mlp_ratio/channels must be positive");
  if (embed_dim % 4 != 0)
    throw contract_error("ViTConfig: embed_dim must be divisible by 4 for sin-cos PE");
}

long EdgeMaskSpec::draw_k(Rng& rng) const {
  double u = rng.uniform();
  double acc = 0.0;
  for (auto& [k, p] : k_probs) {
    acc += p;
    if (u < acc) return k;
  }
  return k_probs.back().first;
}

void EdgeMaskSpec::validate() const {
  double total = 0.0;
  for (auto& [k, p] : k_probs) {
    if (k < 0 || p < 0) throw contract_error("EdgeMaskSpec: negative k or probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw contract_error("EdgeMaskSpec: probabilities must sum to 1");
}

Tensor sincos_pe(long grid_h, long grid_w, long dim) {
  if (dim % 4 != 0) throw contract_error("sincos_pe: dim must be divisible by 4");
  long quarter = dim / 4;
  std::vector<double> data(grid_h * grid_w * dim);
  for (long r = 0; r < grid_h; ++r)
    for (long c = 0; c < grid_w; ++c) {
      double* row = data.data() + (r * grid_w + c) * dim;
      for (long i = 0; i < quarter; ++i) {
        double omega = std::pow(10000.0, -static_cast<double>(i) / quarter);
        row[2 * i] = std::sin(r * omega);
        row[2 * i + 1] = std::cos(r * omega);
        row[dim / 2 + 2 * i] = std::sin(c * omega);
        row[dim / 2 + 2 * i + 1] = std::cos(c * omega);
      }
    }
  return Tensor::from_data({grid_h * grid_w, dim}, std::move(data));
}

EnergyModel EnergyModel::init(const ViTConfig& cfg, Rng& rng) {
  cfg.validate();
  const long D = cfg.embed_dim, H = cfg.mlp_hidden();
  EnergyModel m;
  m.cfg = cfg;
  auto w = [&](Shape s) { return trunc_normal(std::move(s), rng, 0.02); };
  m.patch_w = w({cfg.patch_dim(), D});
  m.patch_b = Tensor::zeros({D});
  m.cls_token = w({1, 1, D});
  for (long i = 0; i < cfg.depth; ++i) {
    TransformerBlock b;
    b.norm1_w = Tensor::full({D}, 1.0);
    b.norm1_b = Tensor::zeros({D});
    b.qkv_w = w({D, 3 * D});
    b.qkv_b = Tensor::zeros({3 * D});
    b.proj_w = w({D, D});
    b.proj_b = Tensor::zeros({D});
    b.norm2_w = Tensor::full({D}, 1.0);
    b.norm2_b = Tensor::zeros({D});
    b.fc1_w = w({D, H});
    b.fc1_b = Tensor::zeros({H});
    b.fc2_w = w({H, D});
    b.fc2_b = Tensor::zeros({D});
    m.blocks.push_back(std::move(b));
  }
  m.norm_w = Tensor::full({D}, 1.0);
  m.norm_b = Tensor::zeros({D});
  m.head_w = w({D, 1});
  m.pe_table = sincos_pe(cfg.grid(), cfg.grid(), D);
  m.set_requires_grad(true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> EnergyModel::params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch_embed.weight", patch_w);
  out.emplace_back("patch_embed.bias", patch_b);
  out.emplace_back("cls_token", cls_token);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    std::string p = "blocks." + std::to_string(i) + ".";
    out.emplace_back(p + "norm1.weight", b.norm1_w);
    out.emplace_back(p + "norm1.bias", b.norm1_b);
    out.emplace_back(p + "attn.qkv.weight", b.qkv_w);
    out.emplace_back(p + "attn.qkv.bias", b.qkv_b);
    out.emplace_back(p + "attn.proj.weight", b.proj_w);
    out.emplace_back(p + "attn.proj.bias", b.proj_b);
    out.emplace_back(p + "norm2.weight", b.norm2_w);
    out.emplace_back(p + "norm2.bias", b.norm2_b);
    out.emplace_back(p + "mlp.fc1.weight", b.fc1_w);
    out.emplace_back(p + "mlp.fc1.bias", b.fc1_b);
    out.emplace_back(p + "mlp.fc2.weight", b.fc2_w);
    out.emplace_back(p + "mlp.fc2.bias", b.fc2_b);
  }
  out.emplace_back("norm.weight", norm_w);
  out.emplace_back("norm.bias", norm_b);
  out.emplace_back("head.weight", head_w);
  return out;
}

long EnergyModel::param_count() const {
  long n = 0;
  for (auto& [name, t] : params()) n += t.numel();
  return n;
}

void EnergyModel::set_requires_grad(bool v) {
  for (auto& [name, t] : params()) Tensor(t).set_requires_grad(v);
}

long vit_param_count(const ViTConfig& cfg) {
  const long D = cfg.embed_dim, H = cfg.mlp_hidden();
  long per_block = 2 * D            // norm1
                   + D * 3 * D + 3 * D  // qkv
                   + D * D + D          // proj
                   + 2 * D              // norm2
                   + D * H + H          // fc1
                   + H * D + D;         // fc2
  return cfg.patch_dim() * D + D  // patch embed
         + D                      // cls token
         + cfg.depth * per_block  //
         + 2 * D                  // final norm
         + D;                     // head
}

Tensor energy(const EnergyModel& m, const Tensor& x) {
  Tensor e = head_scores(m, cls_feature_of(encode_with_pe(m, x, m.pe_table)));
  check_finite(e, "energy()");
  return e;
}

Tensor energy_with_pe(const EnergyModel& m, const Tensor& x, const Tensor& pe) {
  Tensor e = head_scores(m, cls_feature_of(encode_with_pe(m, x, pe)));
  check_finite(e, "energy_with_pe()");
  return e;
}

Tensor class_features(const EnergyModel& m, const Tensor& x) {
  return cls_feature_of(encode_with_pe(m, x, m.pe_table));
}

std::vector<TokenSet> patch_embed_with_regularizers(const EnergyModel& m,
                                                    const Tensor& x,
                                                    const EdgeMaskSpec& edge_mask,
                                                    double patch_dropout, Rng& rng) {
  if (patch_dropout < 0.0 || patch_dropout >= 1.0)
    throw contract_error("patch_embed_with_regularizers: dropout must be in [0,1)");
  edge_mask.validate();
  const long n = x.shape()[0], T = m.cfg.tokens(), pd = m.cfg.patch_dim();
  const long p = m.cfg.patch_size, c = m.cfg.channels;
  Tensor patches = extract_patches(m.cfg, x);  // [n,T,pd]

  // multiplicative edge mask, constant w.r.t. the graph
  Tensor masked = patches;
  if (edge_mask.active) {
    std::vector<double> mask(n * T * pd, 1.0);
    for (long img = 0; img < n; ++img)
      for (long t = 0; t < T; ++t) {
        long k = edge_mask.draw_k(rng);
        double* mp = mask.data() + (img * T + t) * pd;
        for (long ch = 0; ch < c; ++ch)
          for (long py = 0; py < p; ++py)
            for (long px = 0; px < p; ++px)
              if (py < k || py >= p - k || px < k || px >= p - k)
                mp[(ch * p + py) * p + px] = 0.0;
      }
    masked = mul(patches, Tensor::from_data({n, T, pd}, std::move(mask)));
  }
  Tensor emb = add(matmul(masked, m.patch_w), m.patch_b);  // [n,T,D]

  std::vector<TokenSet> out;
  out.reserve(n);
  for (long img = 0; img < n; ++img) {
    std::vector<long> keep;
    do {
      keep.clear();
      for (long t = 0; t < T; ++t)
        if (rng.uniform() >= patch_dropout) keep.push_back(t);
    } while (keep.empty());
    TokenSet ts;
    ts.tokens = index_select(slice(emb, 0, img, img + 1), 1, keep);  // [1,S,D]
    ts.indices = std::move(keep);
    out.push_back(std::move(ts));
  }
  return out;
}

Tensor energy_from_tokens(const EnergyModel& m, const TokenSet& ts, const Tensor& pe) {
  if (pe.shape() != Shape{m.cfg.tokens(), m.cfg.embed_dim})
    throw contract_error("energy_from_tokens: PE shape mismatch");
  long S = static_cast<long>(ts.indices.size()), D = m.cfg.embed_dim;
  Tensor pe_rows = reshape(index_select(pe, 0, ts.indices), {1, S, D});
  Tensor seq = concat({m.cls_token, add(ts.tokens, pe_rows)}, 1);
  Tensor e = head_scores(m, cls_feature_of(encode(m, seq)));
  check_finite(e, "energy_from_tokens()");
  return e;
}

}  // namespace ebm
