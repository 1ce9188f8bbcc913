#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebm/config.hpp"
#include "ebm/sampler.hpp"
#include "ebm/vit.hpp"

namespace ebm {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// On-disk layout: 8-byte magic "EBMPRE01", u64 header length, JSON header
// (config snapshot, counters, blob directory with byte offsets), then raw
// little-endian f64 blobs in directory order.
struct Blob {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  RunConfig config;
  std::vector<Blob> blobs;  // model params, optimizer moments, raw alpha
  long step = 0;
  long epoch = 0;
  long opt_t = 0;
  std::uint64_t rng_seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot a live trainer; blob order is params(), then opt.m/v, then alpha.
Checkpoint snapshot_training(const RunConfig& cfg, const EnergyModel& model,
                             const Trainer& trainer, long epoch);

// Writes blobs back into a model/trainer built from the same config.
// Shape or name mismatches are contract violations.
void restore_training(const Checkpoint& c, EnergyModel& model, Trainer& trainer);

// Model-only restore for eval commands.
void restore_model(const Checkpoint& c, EnergyModel& model);

}  // namespace ebm
