#include "ebm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ebm {

namespace {

using nlohmann::json;

void expect_keys(const json& obj, const std::string& where,
                 const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw config_error(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw config_error(where + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
void read(const json& obj, const std::string& where, const std::string& key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(where + "." + key + ": " + e.what());
  }
}

void read_model(const json& j, ViTConfig& m) {
  expect_keys(j, "model",
              {"image_size", "patch_size", "embed_dim", "depth", "heads",
               "mlp_ratio", "channels"});
  read(j, "model", "image_size", m.image_size);
  read(j, "model", "patch_size", m.patch_size);
  read(j, "model", "embed_dim", m.embed_dim);
  read(j, "model", "depth", m.depth);
  read(j, "model", "heads", m.heads);
  read(j, "model", "mlp_ratio", m.mlp_ratio);
  read(j, "model", "channels", m.channels);
}

void read_sampler(const json& j, SamplerConfig& s) {
  expect_keys(j, "sampler",
              {"N", "alpha_init", "alpha_learnable", "noise_scale", "loss",
               "smooth_l1_beta"});
  read(j, "sampler", "N", s.steps);
  read(j, "sampler", "alpha_init", s.alpha_init);
  read(j, "sampler", "alpha_learnable", s.alpha_learnable);
  read(j, "sampler", "noise_scale", s.noise_scale);
  read(j, "sampler", "smooth_l1_beta", s.smooth_l1_beta);
  if (j.contains("loss")) {
    std::string name = j.at("loss").get<std::string>();
    if (name == "smooth_l1")
      s.loss_kind = LossKind::SmoothL1;
    else if (name == "mse")
      s.loss_kind = LossKind::Mse;
    else
      throw config_error("sampler.loss: unknown loss \"" + name + "\"");
  }
}

void read_trainer(const json& j, TrainConfig& t) {
  expect_keys(j, "trainer",
              {"base_lr", "beta1", "beta2", "weight_decay", "warmup_frac",
               "batch_size", "epochs", "precision"});
  read(j, "trainer", "base_lr", t.base_lr);
  read(j, "trainer", "beta1", t.beta1);
  read(j, "trainer", "beta2", t.beta2);
  read(j, "trainer", "weight_decay", t.weight_decay);
  read(j, "trainer", "warmup_frac", t.warmup_frac);
  read(j, "trainer", "batch_size", t.batch_size);
  read(j, "trainer", "epochs", t.epochs);
  if (j.contains("precision")) {
    std::string p = j.at("precision").get<std::string>();
    if (p == "f32")
      t.precision = Precision::f32;
    else if (p == "f64")
      t.precision = Precision::f64;
    else
      throw config_error("trainer.precision: expected \"f32\" or \"f64\"");
  }
}

void read_corruption(const json& j, CorruptionSpec& c) {
  expect_keys(j, "corruption", {"kind", "gridded", "random_mask", "sr", "mixed_weights"});
  if (j.contains("kind")) c.kind = pretext_from_name(j.at("kind").get<std::string>());
  if (j.contains("gridded")) {
    const json& g = j.at("gridded");
    expect_keys(g, "corruption.gridded", {"patch_px", "ratio"});
    read(g, "corruption.gridded", "patch_px", c.gridded.patch_px);
    read(g, "corruption.gridded", "ratio", c.gridded.ratio);
  }
  if (j.contains("random_mask")) {
    const json& r = j.at("random_mask");
    expect_keys(r, "corruption.random_mask",
                {"count", "area_lo", "area_hi", "aspect_lo", "aspect_hi"});
    read(r, "corruption.random_mask", "count", c.random_mask.count);
    read(r, "corruption.random_mask", "area_lo", c.random_mask.area_lo);
    read(r, "corruption.random_mask", "area_hi", c.random_mask.area_hi);
    read(r, "corruption.random_mask", "aspect_lo", c.random_mask.aspect_lo);
    read(r, "corruption.random_mask", "aspect_hi", c.random_mask.aspect_hi);
  }
  if (j.contains("sr")) {
    const json& s = j.at("sr");
    expect_keys(s, "corruption.sr", {"factor"});
    read(s, "corruption.sr", "factor", c.sr.factor);
  }
  if (j.contains("mixed_weights")) {
    const json& w = j.at("mixed_weights");
    if (!w.is_object()) throw config_error("corruption.mixed_weights: expected an object");
    c.mixed_weights.clear();
    for (auto it = w.begin(); it != w.end(); ++it)
      c.mixed_weights.emplace_back(pretext_from_name(it.key()), it.value().get<double>());
  }
}

void read_dataset(const json& j, DatasetDescriptor& d) {
  expect_keys(j, "dataset", {"type", "n_per_class", "classes", "image_size", "seed", "root"});
  if (j.contains("type")) {
    std::string t = j.at("type").get<std::string>();
    if (t == "synthetic")
      d.kind = DatasetDescriptor::Kind::Synthetic;
    else if (t == "folder")
      d.kind = DatasetDescriptor::Kind::Folder;
    else
      throw config_error("dataset.type: expected \"synthetic\" or \"folder\"");
  }
  read(j, "dataset", "n_per_class", d.n_per_class);
  read(j, "dataset", "classes", d.classes);
  read(j, "dataset", "image_size", d.image_size);
  read(j, "dataset", "seed", d.seed);
  read(j, "dataset", "root", d.root);
}

json to_json_tree(const RunConfig& c) {
  json j;
  j["model"] = {{"image_size", c.model.image_size}, {"patch_size", c.model.patch_size},
                {"embed_dim", c.model.embed_dim},   {"depth", c.model.depth},
                {"heads", c.model.heads},           {"mlp_ratio", c.model.mlp_ratio},
                {"channels", c.model.channels}};
  j["sampler"] = {{"N", c.sampler.steps},
                  {"alpha_init", c.sampler.alpha_init},
                  {"alpha_learnable", c.sampler.alpha_learnable},
                  {"noise_scale", c.sampler.noise_scale},
                  {"loss", c.sampler.loss_kind == LossKind::SmoothL1 ? "smooth_l1" : "mse"},
                  {"smooth_l1_beta", c.sampler.smooth_l1_beta}};
  j["trainer"] = {{"base_lr", c.trainer.base_lr},
                  {"beta1", c.trainer.beta1},
                  {"beta2", c.trainer.beta2},
                  {"weight_decay", c.trainer.weight_decay},
                  {"warmup_frac", c.trainer.warmup_frac},
                  {"batch_size", c.trainer.batch_size},
                  {"epochs", c.trainer.epochs},
                  {"precision", c.trainer.precision == Precision::f32 ? "f32" : "f64"}};
  json weights = json::object();
  for (auto& [k, w] : c.corruption.mixed_weights) weights[pretext_name(k)] = w;
  j["corruption"] = {{"kind", pretext_name(c.corruption.kind)},
                     {"gridded",
                      {{"patch_px", c.corruption.gridded.patch_px},
                       {"ratio", c.corruption.gridded.ratio}}},
                     {"random_mask",
                      {{"count", c.corruption.random_mask.count},
                       {"area_lo", c.corruption.random_mask.area_lo},
                       {"area_hi", c.corruption.random_mask.area_hi},
                       {"aspect_lo", c.corruption.random_mask.aspect_lo},
                       {"aspect_hi", c.corruption.random_mask.aspect_hi}}},
                     {"sr", {{"factor", c.corruption.sr.factor}}},
                     {"mixed_weights", weights}};
  j["dataset"] = {{"type", c.dataset.kind == DatasetDescriptor::Kind::Synthetic
                               ? "synthetic"
                               : "folder"},
                  {"n_per_class", c.dataset.n_per_class},
                  {"classes", c.dataset.classes},
                  {"image_size", c.dataset.image_size},
                  {"seed", c.dataset.seed},
                  {"root", c.dataset.root}};
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

}  // namespace

PretextKind pretext_from_name(const std::string& name) {
  for (PretextKind k :
       {PretextKind::GriddedMask, PretextKind::RandomMask, PretextKind::SuperRes,
        PretextKind::DiffuseNoise, PretextKind::Grayscale, PretextKind::ShufflePE,
        PretextKind::Mixed})
    if (name == pretext_name(k)) return k;
  throw config_error("unknown corruption kind \"" + name + "\"");
}

void DatasetDescriptor::validate() const {
  if (kind == Kind::Synthetic) {
    if (classes < 2 || classes > 8)
      throw contract_error("dataset: classes must be in [2,8]");
    if (n_per_class < 1) throw contract_error("dataset: n_per_class must be >= 1");
  } else if (root.empty()) {
    throw contract_error("dataset: folder root is required");
  }
  if (image_size < 4) throw contract_error("dataset: image_size must be >= 4");
}

void RunConfig::validate() const {
  model.validate();
  sampler.validate();
  trainer.validate();
  corruption.validate(model.image_size);
  dataset.validate();
  if (dataset.image_size != model.image_size)
    throw contract_error("config: dataset and model image_size disagree");
  if (checkpoint_every < 1)
    throw contract_error("config: checkpoint_every must be >= 1");
  if (out_dir.empty()) throw contract_error("config: out_dir is required");
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw config_error(std::string("config parse: ") + e.what());
  }
  expect_keys(j, "config",
              {"model", "sampler", "trainer", "corruption", "dataset", "out_dir",
               "seed", "checkpoint_every"});
  RunConfig c;
  if (j.contains("model")) read_model(j.at("model"), c.model);
  if (j.contains("sampler")) read_sampler(j.at("sampler"), c.sampler);
  if (j.contains("trainer")) read_trainer(j.at("trainer"), c.trainer);
  if (j.contains("corruption")) read_corruption(j.at("corruption"), c.corruption);
  if (j.contains("dataset")) read_dataset(j.at("dataset"), c.dataset);
  read(j, "config", "out_dir", c.out_dir);
  read(j, "config", "seed", c.seed);
  read(j, "config", "checkpoint_every", c.checkpoint_every);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw config_error("override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  // route the assignment through the strict parser by building a patch tree
  json patch = json::object();
  json* node = &patch;
  size_t pos = 0;
  while (true) {
    size_t dot = path.find('.', pos);
    std::string part = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (part.empty()) throw config_error("bad override path: " + path);
    if (dot == std::string::npos) {
      json leaf;
      try {
        leaf = json::parse(value);
      } catch (const json::exception&) {
        leaf = value;  // bare strings need no quotes on the command line
      }
      (*node)[part] = leaf;
      break;
    }
    (*node)[part] = json::object();
    node = &(*node)[part];
    pos = dot + 1;
  }

  json full = json::parse(config_json(cfg));
  full.merge_patch(patch);
  cfg = parse_config(full.dump());
}

std::string config_json(const RunConfig& cfg) { return to_json_tree(cfg).dump(2); }

}  // namespace ebm
