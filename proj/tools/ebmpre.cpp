#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ebm/checkpoint.hpp"
#include "ebm/config.hpp"
#include "ebm/eval.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint_path;  // eval commands
};

ebm::RunConfig resolve_config(const CommonArgs& args) {
  ebm::RunConfig cfg;
  if (!args.config_path.empty()) cfg = ebm::load_config(args.config_path);
  for (const std::string& ov : args.overrides) ebm::apply_override(cfg, ov);
  cfg.validate();
  return cfg;
}

long thread_cap() {
  const char* env = std::getenv("EBMPRE_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1)
    throw ebm::config_error("EBMPRE_THREADS must be a positive integer");
  return v;
}

// dataset stats live beside the outputs and are reused bit-exactly once written
ebm::ChannelStats stats_for(const ebm::RunConfig& cfg, const ebm::ImageBatch& raw01) {
  fs::path path = fs::path(cfg.out_dir) / "stats.json";
  if (fs::exists(path)) {
    std::ifstream in(path);
    json j;
    in >> j;
    ebm::ChannelStats st;
    st.mean = j.at("mean").get<std::vector<double>>();
    st.stddev = j.at("stddev").get<std::vector<double>>();
    if (st.mean.size() != static_cast<size_t>(raw01.c))
      throw ebm::io_error("stats.json channel count mismatch");
    return st;
  }
  ebm::ChannelStats st = ebm::compute_stats(raw01);
  fs::create_directories(cfg.out_dir);
  std::ofstream out(path);
  out << json{{"mean", st.mean}, {"stddev", st.stddev}}.dump(2) << "\n";
  return st;
}

ebm::ImageBatch load_dataset(const ebm::RunConfig& cfg) {
  if (cfg.dataset.kind == ebm::DatasetDescriptor::Kind::Synthetic) {
    ebm::SyntheticSpec spec;
    spec.n_per_class = cfg.dataset.n_per_class;
    spec.classes = cfg.dataset.classes;
    spec.image_size = cfg.dataset.image_size;
    ebm::Rng rng(cfg.dataset.seed);
    return ebm::gen_synthetic(spec, rng);
  }
  return ebm::load_folder(cfg.dataset.root, cfg.dataset.image_size);
}

ebm::Checkpoint load_eval_checkpoint(const ebm::RunConfig& cfg, const CommonArgs& args) {
  std::string path = args.checkpoint_path.empty()
                         ? (fs::path(cfg.out_dir) / "checkpoint-final.bin").string()
                         : args.checkpoint_path;
  if (!fs::exists(path)) throw ebm::io_error("missing checkpoint: " + path);
  return ebm::load_checkpoint(path);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ebm::io_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void cmd_gen_data(const ebm::RunConfig& cfg) {
  ebm::ImageBatch raw = load_dataset(cfg);
  fs::create_directories(cfg.out_dir);
  ebm::write_dataset_pngs((fs::path(cfg.out_dir) / "dataset").string(), raw);
  stats_for(cfg, raw);
  std::cout << "wrote " << raw.n << " images under " << cfg.out_dir << "/dataset\n";
}

void cmd_pretrain(const ebm::RunConfig& cfg) {
  ebm::ImageBatch raw = load_dataset(cfg);
  ebm::ChannelStats st = stats_for(cfg, raw);
  ebm::ImageBatch ds = ebm::normalize(raw, st);

  ebm::Rng init(cfg.seed);
  ebm::EnergyModel model = ebm::EnergyModel::init(cfg.model, init);
  model.set_requires_grad(true);
  ebm::TrainConfig tc = cfg.trainer;
  tc.seed = cfg.seed;
  ebm::Trainer trainer(model, cfg.sampler, tc, cfg.corruption, st);

  fs::create_directories(cfg.out_dir);
  std::ofstream metrics(fs::path(cfg.out_dir) / "metrics.csv");
  if (!metrics) throw ebm::io_error("cannot write metrics.csv");
  metrics << "step,epoch,loss,alpha,lr,grad_norm\n";
  metrics.precision(17);

  long steps_per_epoch = (ds.n + tc.batch_size - 1) / tc.batch_size;
  long epoch_done = -1;
  trainer.run(ds, tc.epochs, [&](const ebm::StepMetrics& met) {
    metrics << met.step << "," << met.epoch << "," << met.loss << "," << met.alpha
            << "," << met.lr << "," << met.grad_norm << "\n";
    if (met.epoch != epoch_done && met.step % steps_per_epoch == steps_per_epoch - 1) {
      epoch_done = met.epoch;
      if ((met.epoch + 1) % cfg.checkpoint_every == 0) {
        ebm::Checkpoint c = ebm::snapshot_training(cfg, model, trainer, met.epoch + 1);
        ebm::save_checkpoint(
            (fs::path(cfg.out_dir) / ("checkpoint-" + std::to_string(met.epoch + 1) + ".bin"))
                .string(),
            c);
      }
    }
  });
  ebm::Checkpoint final = ebm::snapshot_training(cfg, model, trainer, tc.epochs);
  ebm::save_checkpoint((fs::path(cfg.out_dir) / "checkpoint-final.bin").string(), final);
  std::cout << "pretrained " << tc.epochs << " epochs, final alpha " << trainer.alpha()
            << ", rollbacks " << trainer.rollback_count() << "\n";
}

void cmd_restore(const ebm::RunConfig& cfg, const CommonArgs& args) {
  ebm::Checkpoint ck = load_eval_checkpoint(cfg, args);
  ebm::Rng init(0);
  ebm::EnergyModel model = ebm::EnergyModel::init(ck.config.model, init);
  ebm::restore_model(ck, model);

  ebm::ImageBatch raw = load_dataset(cfg);
  ebm::ChannelStats st = stats_for(cfg, raw);
  long n = std::min<long>(8, raw.n);
  std::vector<long> idx(n);
  for (long i = 0; i < n; ++i) idx[i] = i;
  ebm::ImageBatch subset = ebm::normalize(raw, st).subset(idx);

  ebm::SeededRng streams(cfg.seed);
  ebm::Rng crng = streams.stream("restore-corruption");
  ebm::CorruptedBatch cb = ebm::apply(cfg.corruption, subset, st, crng);
  double alpha = ebm::alpha_value_of(0.0);
  for (const ebm::Blob& b : ck.blobs)
    if (b.name == "alpha.raw") alpha = ebm::alpha_value_of(b.data[0]);
  ebm::RestoreResult rr =
      ebm::conditional_restore(model, ebm::to_tensor(cb.images), ebm::to_tensor(subset),
                               cfg.sampler, ebm::Tensor::scalar(alpha));

  fs::path samples = fs::path(cfg.out_dir) / "samples";
  fs::create_directories(samples);
  ebm::ImageBatch corrupted01 = ebm::denormalize(cb.images, st);
  ebm::ImageBatch original01 = ebm::denormalize(subset, st);
  ebm::ImageBatch restored01 =
      ebm::denormalize(ebm::from_tensor(rr.chain.states.back(), subset.labels), st);
  ebm::save_triptych_png((samples / "restore.png").string(), corrupted01, original01,
                         restored01);
  std::cout << "wrote " << (samples / "restore.png").string() << "\n";
}

void cmd_histogram(const ebm::RunConfig& cfg, const CommonArgs& args) {
  ebm::Checkpoint ck = load_eval_checkpoint(cfg, args);
  ebm::Rng init(0);
  ebm::EnergyModel model = ebm::EnergyModel::init(ck.config.model, init);
  ebm::restore_model(ck, model);

  ebm::ImageBatch raw = load_dataset(cfg);
  ebm::ChannelStats st = stats_for(cfg, raw);
  ebm::ImageBatch ds = ebm::normalize(raw, st);
  ebm::SeededRng streams(cfg.seed);
  ebm::Rng crng = streams.stream("histogram-corruption");
  double alpha = 0.1;
  for (const ebm::Blob& b : ck.blobs)
    if (b.name == "alpha.raw") alpha = ebm::alpha_value_of(b.data[0]);
  ebm::HistogramReport rep =
      ebm::energy_histogram(model, ds, cfg.corruption, cfg.sampler, alpha, st, crng);

  json groups = json::array();
  groups.push_back({{"name", "real"}, {"scores", rep.real}});
  for (size_t j = 0; j < rep.steps.size(); ++j)
    groups.push_back({{"name", "step-" + std::to_string(j)}, {"scores", rep.steps[j]}});
  write_json(fs::path(cfg.out_dir) / "histogram.json",
             {{"groups", groups},
              {"means", rep.group_means},
              {"stds", rep.group_stds},
              {"bin_edges", rep.bin_edges},
              {"paired_gap_mean", rep.paired_gap_mean},
              {"paired_gap_se", rep.paired_gap_se},
              {"n_eval", rep.n_eval}});
  std::cout << "paired gap " << rep.paired_gap_mean << " (se " << rep.paired_gap_se
            << ")\n";
}

void cmd_probe(const ebm::RunConfig& cfg, const CommonArgs& args) {
  ebm::Checkpoint ck = load_eval_checkpoint(cfg, args);
  ebm::Rng init(0);
  ebm::EnergyModel model = ebm::EnergyModel::init(ck.config.model, init);
  ebm::restore_model(ck, model);

  ebm::ImageBatch raw = load_dataset(cfg);
  ebm::ChannelStats st = stats_for(cfg, raw);
  ebm::ProbeConfig pc;
  pc.seed = cfg.seed;
  ebm::ProbeResult res = ebm::linear_probe(model, ebm::normalize(raw, st), pc);
  write_json(fs::path(cfg.out_dir) / "probe.json",
             {{"accuracy", res.accuracy},
              {"per_class", res.per_class},
              {"n_eval", res.n_eval}});
  std::cout << "probe accuracy " << res.accuracy << " on " << res.n_eval << " images\n";
}

void cmd_finetune(const ebm::RunConfig& cfg, const CommonArgs& args) {
  ebm::Checkpoint ck = load_eval_checkpoint(cfg, args);
  ebm::Rng init(0);
  ebm::EnergyModel model = ebm::EnergyModel::init(ck.config.model, init);
  ebm::restore_model(ck, model);

  ebm::ImageBatch raw = load_dataset(cfg);
  ebm::ChannelStats st = stats_for(cfg, raw);
  ebm::FinetuneConfig fc;
  fc.epochs = cfg.trainer.epochs;
  fc.lr = cfg.trainer.base_lr;
  fc.weight_decay = cfg.trainer.weight_decay;
  fc.batch_size = cfg.trainer.batch_size;
  fc.seed = cfg.seed;
  ebm::ProbeResult res = ebm::finetune(model, ebm::normalize(raw, st), fc);
  write_json(fs::path(cfg.out_dir) / "finetune.json",
             {{"accuracy", res.accuracy},
              {"per_class", res.per_class},
              {"n_eval", res.n_eval}});
  std::cout << "finetune accuracy " << res.accuracy << " on " << res.n_eval
            << " images\n";
}

void cmd_sort_eval(const ebm::RunConfig& cfg, const CommonArgs& args) {
  ebm::Checkpoint ck = load_eval_checkpoint(cfg, args);
  ebm::Rng init(0);
  ebm::EnergyModel model = ebm::EnergyModel::init(ck.config.model, init);
  ebm::restore_model(ck, model);

  ebm::ImageBatch raw = load_dataset(cfg);
  ebm::ChannelStats st = stats_for(cfg, raw);
  double alpha = 0.1;
  for (const ebm::Blob& b : ck.blobs)
    if (b.name == "alpha.raw") alpha = ebm::alpha_value_of(b.data[0]);
  double acc = ebm::sort_accuracy(model, ebm::normalize(raw, st), cfg.sampler, alpha,
                                  ebm::SortOptions::plain(), cfg.seed);
  write_json(fs::path(cfg.out_dir) / "sort_eval.json",
             {{"accuracy", acc},
              {"positions", model.cfg.tokens()},
              {"chance", 1.0 / model.cfg.tokens()}});
  std::cout << "sort accuracy " << acc << " (chance " << 1.0 / model.cfg.tokens()
            << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"energy-guided self-supervised pretraining harness"};
  app.require_subcommand(1);
  CommonArgs args;

  auto add_common = [&](CLI::App* sub, bool eval_cmd) {
    sub->add_option("--config", args.config_path, "JSON config file");
    sub->add_option("--set", args.overrides, "dotted override, e.g. sampler.N=1");
    if (eval_cmd)
      sub->add_option("--checkpoint", args.checkpoint_path,
                      "checkpoint path (default <out_dir>/checkpoint-final.bin)");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "render the synthetic dataset to PNGs");
  CLI::App* pre = app.add_subcommand("pretrain", "run the restoration pretraining loop");
  CLI::App* fin = app.add_subcommand("finetune", "classifier finetuning from a checkpoint");
  CLI::App* prb = app.add_subcommand("probe", "linear probe on frozen features");
  CLI::App* res = app.add_subcommand("restore", "dump corrupted|original|restored panels");
  CLI::App* his = app.add_subcommand("histogram", "energy scores per restoration step");
  CLI::App* srt = app.add_subcommand("sort-eval", "PE sorting position accuracy");
  add_common(gen, false);
  add_common(pre, false);
  for (CLI::App* sub : {fin, prb, res, his, srt}) add_common(sub, true);

  CLI11_PARSE(app, argc, argv);
  try {
    thread_cap();  // validated; all pipelines here are single-threaded
    ebm::RunConfig cfg = resolve_config(args);
    if (gen->parsed()) cmd_gen_data(cfg);
    if (pre->parsed()) cmd_pretrain(cfg);
    if (fin->parsed()) cmd_finetune(cfg, args);
    if (prb->parsed()) cmd_probe(cfg, args);
    if (res->parsed()) cmd_restore(cfg, args);
    if (his->parsed()) cmd_histogram(cfg, args);
    if (srt->parsed()) cmd_sort_eval(cfg, args);
  } catch (const ebm::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ebm::contract_error& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 2;
  } catch (const ebm::numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ebm::io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
