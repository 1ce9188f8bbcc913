#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "ebm/corruptions.hpp"
#include "ebm/sampler.hpp"
#include "ebm/vit.hpp"

namespace ebm {

// Bad config file or override; the CLI maps this to its own exit code.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetDescriptor {
  enum class Kind { Synthetic, Folder };
  Kind kind = Kind::Synthetic;
  long n_per_class = 32;
  long classes = 4;
  long image_size = 32;
  std::uint64_t seed = 0;
  std::string root;  // Folder only
  void validate() const;
};

struct RunConfig {
  ViTConfig model;
  SamplerConfig sampler;
  TrainConfig trainer;
  CorruptionSpec corruption;
  DatasetDescriptor dataset;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  long checkpoint_every = 10;
  void validate() const;
};

// Strict: any unknown key anywhere in the document is a config_error.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

// Dotted-path override, e.g. "sampler.N=1" or "trainer.base_lr=3e-4".
void apply_override(RunConfig& cfg, const std::string& assignment);

// Canonical serialization; parse_config(config_json(c)) round-trips.
std::string config_json(const RunConfig& cfg);

PretextKind pretext_from_name(const std::string& name);

}  // namespace ebm
