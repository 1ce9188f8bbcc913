#include "ebm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace ebm {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'E', 'B', 'M', 'P', 'R', 'E', '0', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw io_error("corrupt checkpoint: truncated length field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  json dir = json::array();
  std::uint64_t offset = 0;
  for (const Blob& b : c.blobs) {
    std::uint64_t bytes = b.data.size() * sizeof(double);
    dir.push_back({{"name", b.name},
                   {"shape", b.shape},
                   {"dtype", "f64"},
                   {"offset", offset},
                   {"bytes", bytes}});
    offset += bytes;
  }
  json header = {{"version", 1},
                 {"config", json::parse(config_json(c.config))},
                 {"step", c.step},
                 {"epoch", c.epoch},
                 {"opt_t", c.opt_t},
                 {"rng_seed", c.rng_seed},
                 {"blobs", dir}};
  std::string head = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  write_u64(out, head.size());
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const Blob& b : c.blobs)
    out.write(reinterpret_cast<const char*>(b.data.data()),
              static_cast<std::streamsize>(b.data.size() * sizeof(double)));
  if (!out) throw io_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw io_error("corrupt checkpoint: bad magic in " + path);
  std::uint64_t head_len = read_u64(in);
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw io_error("corrupt checkpoint: truncated header in " + path);

  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw io_error(std::string("corrupt checkpoint: header parse: ") + e.what());
  }
  if (header.value("version", 0) != 1)
    throw io_error("unsupported checkpoint version in " + path);

  Checkpoint c;
  c.config = parse_config(header.at("config").dump());
  c.step = header.at("step").get<long>();
  c.epoch = header.at("epoch").get<long>();
  c.opt_t = header.at("opt_t").get<long>();
  c.rng_seed = header.at("rng_seed").get<std::uint64_t>();

  for (const json& entry : header.at("blobs")) {
    Blob b;
    b.name = entry.at("name").get<std::string>();
    b.shape = entry.at("shape").get<Shape>();
    if (entry.at("dtype").get<std::string>() != "f64")
      throw io_error("corrupt checkpoint: unexpected dtype for " + b.name);
    std::uint64_t bytes = entry.at("bytes").get<std::uint64_t>();
    if (bytes != numel_of(b.shape) * sizeof(double))
      throw io_error("corrupt checkpoint: size/shape mismatch for " + b.name);
    b.data.resize(bytes / sizeof(double));
    in.read(reinterpret_cast<char*>(b.data.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw io_error("corrupt checkpoint: truncated blob " + b.name);
    c.blobs.push_back(std::move(b));
  }
  return c;
}

Checkpoint snapshot_training(const RunConfig& cfg, const EnergyModel& model,
                             const Trainer& trainer, long epoch) {
  Checkpoint c;
  c.config = cfg;
  c.step = trainer.global_step();
  c.epoch = epoch;
  c.opt_t = trainer.opt_state().t;
  c.rng_seed = cfg.seed;
  for (auto& [name, p] : model.params()) c.blobs.push_back({name, p.shape(), p.data()});
  const AdamWState& st = trainer.opt_state();
  for (size_t i = 0; i < st.m.size(); ++i) {
    c.blobs.push_back({"opt.m." + std::to_string(i),
                       {static_cast<long>(st.m[i].size())},
                       st.m[i]});
    c.blobs.push_back({"opt.v." + std::to_string(i),
                       {static_cast<long>(st.v[i].size())},
                       st.v[i]});
  }
  c.blobs.push_back({"alpha.raw", {1}, {trainer.raw_alpha().item()}});
  return c;
}

namespace {

const Blob& find_blob(const Checkpoint& c, const std::string& name) {
  for (const Blob& b : c.blobs)
    if (b.name == name) return b;
  throw contract_error("checkpoint: missing blob " + name);
}

}  // namespace

void restore_model(const Checkpoint& c, EnergyModel& model) {
  for (auto& [name, p] : model.params()) {
    const Blob& b = find_blob(c, name);
    if (b.shape != p.shape())
      throw contract_error("checkpoint: shape mismatch for " + name);
    p.mutable_data() = b.data;
  }
}

void restore_training(const Checkpoint& c, EnergyModel& model, Trainer& trainer) {
  restore_model(c, model);
  AdamWState& st = trainer.opt_state();
  for (size_t i = 0; i < st.m.size(); ++i) {
    const Blob& m = find_blob(c, "opt.m." + std::to_string(i));
    const Blob& v = find_blob(c, "opt.v." + std::to_string(i));
    if (m.data.size() != st.m[i].size() || v.data.size() != st.v[i].size())
      throw contract_error("checkpoint: optimizer blob size mismatch");
    st.m[i] = m.data;
    st.v[i] = v.data;
  }
  st.t = c.opt_t;
  trainer.set_raw_alpha(find_blob(c, "alpha.raw").data[0]);
  trainer.set_global_step(c.step);
}

}  // namespace ebm
