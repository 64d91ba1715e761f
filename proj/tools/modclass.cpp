// Command-line front end: synth, train, eval, ensemble, report.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modclass/common/files.hpp"
#include "modclass/data/shard.hpp"
#include "modclass/data/split.hpp"
#include "modclass/ensemble/ensemble.hpp"
#include "modclass/nn/parallel.hpp"
#include "modclass/signal/synthesis.hpp"
#include "modclass/train/trainer.hpp"

#ifndef MODCLASS_VERSION
#define MODCLASS_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace modclass;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;

// Bad flag values that CLI11 itself cannot catch.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Global {
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> argv;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("MODCLASS_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("MODCLASS_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

class RunClock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_run_manifest(const fs::path& out, const std::string& command, const json& config, std::uint64_t seed,
                        const Global& g, const json& timings) {
  json m{{"command", command},  {"config", config},         {"root_seed", seed},
         {"toolkit_version", MODCLASS_VERSION}, {"threads", g.threads}, {"argv", g.argv},
         {"timings", timings}};
  write_text_atomic(out / "run_manifest.json", m.dump(2) + "\n");
}

fs::path shard_path(const fs::path& data) { return fs::is_directory(data) ? data / "frames.iqs" : data; }

data::Shard load_data(const fs::path& data) {
  const fs::path p = shard_path(data);
  if (!fs::exists(p)) throw ConfigError("no shard at " + p.string());
  return data::read_shard(p);
}

std::vector<std::size_t> select_split(const data::SplitResult& s, const std::string& which, std::size_t total) {
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  std::vector<std::size_t> all(total);
  for (std::size_t i = 0; i < total; ++i) all[i] = i;
  return all;
}

void check_compatible(const json& header, const data::Shard& shard, const std::string& who) {
  if (header.contains("label_names") && header["label_names"].get<std::vector<std::string>>() != shard.label_names) {
    throw ConfigError(who + " was trained on different classes than the data provides");
  }
  const auto cfg = header.at("model").get<model::ModelConfig>();
  if (cfg.num_classes != shard.label_names.size()) {
    throw ConfigError(who + " has " + std::to_string(cfg.num_classes) + " outputs but the data has " +
                      std::to_string(shard.label_names.size()) + " classes");
  }
  if (!shard.frames.empty() && cfg.input_length != shard.frames.front().i.size()) {
    throw ConfigError(who + " expects frames of length " + std::to_string(cfg.input_length));
  }
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string modes = "OOK,4ASK,BPSK,QPSK,8PSK,16QAM,64QAM,GMSK,FM";
  int snr_min = -20, snr_max = 30, snr_step = 2;
  std::size_t frames_per_cell = 100;
  fs::path out;
  signal::ImpairmentConfig imp;
  std::string pulse = "rrc";
};

int run_synth(const SynthArgs& a, const Global& g) {
  RunClock clock;
  signal::DatasetRequest req;
  std::stringstream ss(a.modes);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok.empty()) continue;
    const auto mode = signal::parse_mode(tok);
    if (!mode) throw ConfigError("unknown modulation '" + tok + "'");
    req.modes.push_back(*mode);
  }
  if (a.snr_step <= 0) throw ConfigError("--snr-step must be positive");
  if (a.snr_min > a.snr_max) throw ConfigError("--snr-min exceeds --snr-max");
  for (int s = a.snr_min; s <= a.snr_max; s += a.snr_step) req.snr_grid.push_back(s);
  req.frames_per_cell = a.frames_per_cell;
  json imp_json = a.imp;
  imp_json["pulse"] = a.pulse;
  req.impairments = imp_json.get<signal::ImpairmentConfig>();
  req.seed = resolve_seed(g.seed);

  const auto files = signal::synth_dataset(req, a.out);
  std::printf("wrote %zu frames (%zu modes x %zu SNRs x %zu) to %s\n", files.frame_count, req.modes.size(),
              req.snr_grid.size(), req.frames_per_cell, files.shard.string().c_str());
  json config = signal::dataset_manifest(req, {});
  config.erase("cells");
  config.erase("frame_count");
  write_run_manifest(a.out, "synth", config, req.seed, g, {{"total_seconds", clock.seconds()}});
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  fs::path data, out;
  model::ModelConfig model;
  bool no_se = false;
  train::TrainConfig train;
  std::size_t patience = 0;
  std::optional<std::uint64_t> split_seed;
  bool grid = false;
};

struct TrainOutcome {
  double best_val = 0.0;
  train::EvalReport test;
  std::size_t parameters = 0;
};

TrainOutcome train_one(const TrainArgs& a, model::ModelConfig cfg, const data::Shard& shard, const fs::path& out,
                       std::uint64_t seed, const Global& g) {
  RunClock clock;
  cfg.num_classes = shard.label_names.size();
  if (!shard.frames.empty()) cfg.input_length = shard.frames.front().i.size();
  for (const auto& w : model::validate(cfg)) std::fprintf(stderr, "warning: %s\n", w.c_str());

  train::TrainConfig tc = a.train;
  tc.seed = seed;
  if (a.patience > 0) tc.early_stop_patience = a.patience;
  train::validate(tc);
  const std::uint64_t split_seed = a.split_seed.value_or(seed);
  const auto split = data::split(shard.frames, data::SplitSpec{.seed = split_seed});
  for (const auto& w : split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (split.val.empty() || split.test.empty()) throw ConfigError("dataset too small for an 8:1:1 split");

  fs::create_directories(out);
  model::SeMsfnModel<float> m(cfg);
  m.init(seed);
  std::printf("model: k=%zu blocks=%zu r=%zu repetition=%zu se=%s, %zu parameters\n", cfg.kernel_size, cfg.blocks,
              cfg.reduction_ratio, cfg.repetition, cfg.se_enabled ? "on" : "off", m.parameter_count());
  std::printf("data: %zu train, %zu val, %zu test frames\n", split.train.size(), split.val.size(), split.test.size());

  json extras{{"label_names", shard.label_names}, {"split_seed", split_seed}, {"train", tc}};
  train::TrainHooks hooks;
  hooks.checkpoint_extras = extras;
  if (tc.checkpoint_every > 0) hooks.checkpoint_dir = out / "checkpoints";
  hooks.on_epoch = [](const train::EpochRecord& r) {
    std::printf("epoch %3zu  train loss %.4f acc %.4f  val loss %.4f acc %.4f\n", r.epoch, r.train_loss,
                r.train_accuracy, r.val_loss, r.val_accuracy);
    std::fflush(stdout);
  };
  const auto result = train::train(m, shard.frames, split.train, split.val, tc, hooks);
  const double train_seconds = clock.seconds();

  extras["best_epoch"] = result.best_epoch;
  extras["best_val_accuracy"] = result.best_val_accuracy;
  nn::save_checkpoint(out / "model.mck", m.to_checkpoint(extras));

  const auto report = train::evaluate(train::model_predictor(m), shard.frames, split.test, shard.label_names);
  train::report_csv(report, &result.curve, out);
  std::printf("best epoch %zu, val accuracy %.4f, test accuracy %.4f\n", result.best_epoch, result.best_val_accuracy,
              report.overall_accuracy());

  json config{{"data", fs::absolute(a.data).lexically_normal().string()}, {"model", cfg}, {"train", tc},
              {"split_seed", split_seed}};
  write_run_manifest(out, "train", config, seed, g,
                     {{"train_seconds", train_seconds}, {"total_seconds", clock.seconds()},
                      {"epochs_run", result.curve.epochs.size()}});
  return {result.best_val_accuracy, report, m.parameter_count()};
}

int run_train(const TrainArgs& a, const Global& g) {
  const std::uint64_t seed = resolve_seed(g.seed);
  const data::Shard shard = load_data(a.data);
  model::ModelConfig cfg = a.model;
  cfg.se_enabled = !a.no_se;
  if (!a.grid) {
    train_one(a, cfg, shard, a.out, seed, g);
    return kExitOk;
  }
  RunClock clock;
  std::string csv = "row,block,reduction_ratio,repetition,kernel_size,parameters,val_accuracy,test_accuracy,accuracy_0_10_db\n";
  for (const auto& row : model::kHyperparameterGrid) {
    model::ModelConfig c = cfg;
    c.blocks = row.blocks;
    c.reduction_ratio = row.reduction_ratio;
    c.repetition = row.repetition;
    char dir[16];
    std::snprintf(dir, sizeof dir, "row_%02d", row.number);
    std::printf("== grid row %d: block=%zu r=%zu repetition=%zu\n", row.number, row.blocks, row.reduction_ratio,
                row.repetition);
    const auto outcome = train_one(a, c, shard, a.out / dir, seed, g);
    const auto band = outcome.test.band_0_10_accuracy();
    char line[256];
    std::snprintf(line, sizeof line, "%d,%zu,%zu,%zu,%zu,%zu,%.6f,%.6f,%s\n", row.number, row.blocks,
                  row.reduction_ratio, row.repetition, c.kernel_size, outcome.parameters, outcome.best_val,
                  outcome.test.overall_accuracy(), band ? std::to_string(*band).c_str() : "");
    csv += line;
    write_text_atomic(a.out / "grid.csv", csv);
  }
  write_run_manifest(a.out, "train --grid", json{{"model", cfg}, {"train", a.train}}, seed, g,
                     {{"total_seconds", clock.seconds()}});
  return kExitOk;
}

// ---- eval / ensemble / report ---------------------------------------------

struct EvalArgs {
  fs::path model, data, out;
  std::string split = "test";
  std::optional<std::uint64_t> split_seed;
  std::optional<int> snr;
  std::size_t batch_size = 256;
};

int run_eval(const EvalArgs& a, const Global& g) {
  RunClock clock;
  const nn::Checkpoint ck = nn::load_checkpoint(a.model);
  auto m = model::SeMsfnModel<float>::from_checkpoint(ck);
  const data::Shard shard = load_data(a.data);
  check_compatible(ck.header, shard, a.model.string());
  const std::uint64_t split_seed = a.split_seed ? *a.split_seed : ck.header.value("split_seed", std::uint64_t{0});
  const auto idx = select_split(data::split(shard.frames, data::SplitSpec{.seed = split_seed}), a.split,
                                shard.frames.size());
  if (idx.empty()) throw ConfigError("the " + a.split + " split is empty");
  const auto report = train::evaluate(train::model_predictor(m), shard.frames, idx, shard.label_names, a.batch_size, a.snr);
  train::report_csv(report, nullptr, a.out);
  std::printf("%s: %zu frames, accuracy %.4f\n", a.split.c_str(), idx.size(), report.overall_accuracy());
  json config{{"model", fs::absolute(a.model).lexically_normal().string()},
              {"data", fs::absolute(a.data).lexically_normal().string()},
              {"split", a.split},
              {"split_seed", split_seed},
              {"confusion_snr", a.snr ? json(*a.snr) : json(nullptr)}};
  write_run_manifest(a.out, "eval", config, split_seed, g, {{"total_seconds", clock.seconds()}});
  return kExitOk;
}

struct EnsembleArgs {
  fs::path spec, data, out;
  std::string split = "test";
  std::optional<std::uint64_t> split_seed;
};

int run_ensemble(const EnsembleArgs& a, const Global& g) {
  RunClock clock;
  const auto spec = ensemble::load_spec(a.spec);
  if (spec.members.size() < 2) throw ConfigError("an ensemble needs at least 2 members");
  const data::Shard shard = load_data(a.data);
  std::optional<std::uint64_t> member_split;
  for (const auto& p : spec.members) {
    const auto ck = nn::load_checkpoint(p);
    check_compatible(ck.header, shard, p.string());
    const auto s = ck.header.value("split_seed", std::uint64_t{0});
    if (member_split && *member_split != s && !a.split_seed) {
      throw ConfigError("members were trained on different splits; pass --split-seed");
    }
    member_split = s;
  }
  auto ens = ensemble::Ensemble::load(spec);
  const std::uint64_t split_seed = a.split_seed.value_or(*member_split);
  const auto idx = select_split(data::split(shard.frames, data::SplitSpec{.seed = split_seed}), a.split,
                                shard.frames.size());
  if (idx.empty()) throw ConfigError("the " + a.split + " split is empty");
  const auto result = ens.evaluate(shard.frames, idx, shard.label_names);
  train::report_csv(result.ensemble, nullptr, a.out);
  write_text_atomic(a.out / "members.csv", ensemble::member_table_csv(result));
  for (const auto& m : result.members) std::printf("member %s: %.4f\n", m.name.c_str(), m.report.overall_accuracy());
  std::printf("ensemble: %.4f\n", result.ensemble.overall_accuracy());
  write_run_manifest(a.out, "ensemble", json{{"spec", spec}, {"split", a.split}, {"split_seed", split_seed}}, split_seed,
                     g, {{"total_seconds", clock.seconds()}, {"seconds_per_frame", result.seconds_per_frame}});
  return kExitOk;
}

int run_report(const fs::path& dir) {
  const auto report = train::read_report_csv(dir);
  write_text_atomic(dir / "summary.json", train::summary_json(report).dump(2) + "\n");
  std::printf("overall accuracy %.4f over %zu frames\n", report.overall_accuracy(), report.overall.total);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modulation classification with multi-scale SE residual networks"};
  app.set_version_flag("--version", MODCLASS_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);
  std::uint64_t seed_flag = 0;
  app.add_option("--threads", g.threads, "Worker threads; 1 is bit-reproducible")->capture_default_str()->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed_flag, "Root seed (falls back to $MODCLASS_SEED, then 0)");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthesize a labelled I/Q dataset");
  synth->add_option("--modes", sa.modes, "Comma-separated modulation list")->capture_default_str();
  synth->add_option("--snr-min", sa.snr_min, "Lowest SNR in dB")->capture_default_str();
  synth->add_option("--snr-max", sa.snr_max, "Highest SNR in dB (inclusive)")->capture_default_str();
  synth->add_option("--snr-step", sa.snr_step, "SNR step in dB")->capture_default_str();
  synth->add_option("--frames-per-cell", sa.frames_per_cell, "Frames per (mode, SNR) cell")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--amplitude", sa.imp.amplitude, "Amplitude fade A")->capture_default_str();
  synth->add_option("--carrier-offset", sa.imp.carrier_offset, "Carrier offset f0, cycles/sample")->capture_default_str();
  synth->add_option("--phase-jitter", sa.imp.phase_jitter_std, "Phase jitter std, radians")->capture_default_str();
  synth->add_option("--timing-error", sa.imp.timing_error, "Timing error, fraction of a symbol")->capture_default_str();
  synth->add_option("--samples-per-symbol", sa.imp.samples_per_symbol, "Samples per symbol")->capture_default_str();
  synth->add_option("--pulse", sa.pulse, "Pulse shape")->capture_default_str()->check(CLI::IsMember({"rrc", "rectangular", "none"}));
  synth->add_option("--rolloff", sa.imp.rolloff, "RRC rolloff")->capture_default_str();
  synth->add_option("--filter-span", sa.imp.filter_span, "RRC span in symbols")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model on a shard");
  trn->add_option("--data", ta.data, "Dataset directory or shard file")->required();
  trn->add_option("--kernel-size", ta.model.kernel_size, "Convolution kernel size k")->capture_default_str();
  trn->add_option("--blocks", ta.model.blocks, "Bottleneck blocks per residual layer")->capture_default_str();
  trn->add_option("--reduction", ta.model.reduction_ratio, "SE reduction ratio r")->capture_default_str();
  trn->add_option("--repetition", ta.model.repetition, "Residual layer repetitions")->capture_default_str();
  trn->add_option("--base-filters", ta.model.base_filters, "Channels per branch")->capture_default_str();
  trn->add_flag("--no-se", ta.no_se, "Disable squeeze-and-excitation");
  trn->add_option("--epochs", ta.train.epochs, "Maximum epochs")->capture_default_str();
  trn->add_option("--batch-size", ta.train.batch_size, "Mini-batch size")->capture_default_str();
  trn->add_option("--lr", ta.train.learning_rate, "Adam learning rate")->capture_default_str();
  trn->add_option("--patience", ta.patience, "Stop after this many epochs without a better val accuracy (0: never)")->capture_default_str();
  trn->add_option("--checkpoint-every", ta.train.checkpoint_every, "Also save every N epochs (0: best only)")->capture_default_str();
  trn->add_option("--split-seed", ta.split_seed, "Seed of the 8:1:1 split (default: --seed)");
  trn->add_flag("--grid", ta.grid, "Train all 16 (block, r, repetition) grid rows");
  trn->add_option("--out", ta.out, "Output directory")->required();

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  evl->add_option("--model", ea.model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  evl->add_option("--data", ea.data, "Dataset directory or shard file")->required();
  evl->add_option("--split", ea.split, "Which split to score")->capture_default_str()->check(CLI::IsMember({"train", "val", "test", "all"}));
  evl->add_option("--split-seed", ea.split_seed, "Split seed (default: from the checkpoint)");
  evl->add_option("--snr", ea.snr, "Also write a confusion matrix at this SNR");
  evl->add_option("--batch-size", ea.batch_size, "Inference batch size")->capture_default_str()->check(CLI::PositiveNumber);
  evl->add_option("--out", ea.out, "Output directory")->required();

  EnsembleArgs na;
  auto* ens = app.add_subcommand("ensemble", "Evaluate a voting ensemble");
  ens->add_option("--spec", na.spec, "Ensemble spec JSON")->required()->check(CLI::ExistingFile);
  ens->add_option("--data", na.data, "Dataset directory or shard file")->required();
  ens->add_option("--split", na.split, "Which split to score")->capture_default_str()->check(CLI::IsMember({"train", "val", "test", "all"}));
  ens->add_option("--split-seed", na.split_seed, "Split seed (default: from the members)");
  ens->add_option("--out", na.out, "Output directory")->required();

  fs::path report_dir;
  auto* rep = app.add_subcommand("report", "Rebuild summary.json from stored CSVs");
  rep->add_option("--dir", report_dir, "Directory written by train, eval or ensemble")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }
  if (*seed_opt) g.seed = seed_flag;
  nn::set_worker_count(g.threads);

  try {
    if (*synth) return run_synth(sa, g);
    if (*trn) return run_train(ta, g);
    if (*evl) return run_eval(ea, g);
    if (*ens) return run_ensemble(na, g);
    if (*rep) return run_report(report_dir);
  } catch (const nn::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
