#include "psym/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "psym/errors.hpp"

namespace psym::cli {

namespace fs = std::filesystem;

namespace {

bool dir_has_entries(const fs::path& dir) { return fs::exists(dir) && !fs::is_empty(dir); }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::string fmt(double v, const char* spec = "%.6f") {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

/// Loads paths.data_dir and adopts its data config; the encoder input side
/// follows the dataset's patch size.
synth::Dataset open_dataset(ExperimentConfig& config) {
  if (config.paths.data_dir.empty()) throw ConfigError("no dataset directory given (--data)");
  auto ds = synth::load_dataset(config.paths.data_dir);
  config.data = ds.config;
  config.train.encoder.input_side = static_cast<std::size_t>(ds.config.patch_size);
  return ds;
}

fs::path checkpoint_path(const ExperimentConfig& config) {
  if (!config.paths.checkpoint.empty()) return config.paths.checkpoint;
  if (!config.paths.run_dir.empty()) return fs::path(config.paths.run_dir) / "best.psym";
  throw ConfigError("no checkpoint given (--checkpoint)");
}

cotrain::CoTrainState load_checkpoint_for(const ExperimentConfig& config, const synth::Dataset& ds) {
  auto state = cotrain::load_state(checkpoint_path(config));
  if (static_cast<int>(state.config.encoder.input_side) != ds.config.patch_size)
    throw DataError("checkpoint encoder expects " + std::to_string(state.config.encoder.input_side) +
                    "-pixel patches, dataset has " + std::to_string(ds.config.patch_size));
  return state;
}

nlohmann::json train_without_epochs(const cotrain::TrainConfig& c) {
  nlohmann::json j = c;
  j.erase("epochs");
  return j;
}

RunSummary train_one(const ExperimentConfig& config, const synth::Dataset& ds, const fs::path& dir, bool resume,
                     std::ostream& log, std::mutex& log_mutex) {
  const auto train_bank = cotrain::PairBank::from_pairs(ds.pairs_in(synth::Split::Train));
  const auto val_bank = cotrain::PairBank::from_pairs(ds.pairs_in(synth::Split::Val));
  const auto test_bank = cotrain::PairBank::from_pairs(ds.pairs_in(synth::Split::Test));
  const auto echo = config_echo(config);

  std::optional<cotrain::CoTrainState> state;
  if (resume) {
    const auto last = dir / "last.psym";
    if (!fs::exists(last)) throw DataError("cannot resume: " + last.string() + " does not exist");
    state.emplace(cotrain::load_state(last));
    const auto ckpt_meta = nn::load_checkpoint(last).metadata;
    const auto& ckpt_data = ckpt_meta.at("config").at("data");
    if (ckpt_data != nlohmann::json(ds.config))
      throw DataError("cannot resume: checkpoint was trained on a different dataset configuration");
    if (train_without_epochs(state->config) != train_without_epochs(config.train))
      throw ConfigError("cannot resume: training configuration differs from the checkpoint's");
    state->config.epochs = config.train.epochs;
    state->config.validate();
  } else {
    state.emplace(config.train);
  }

  fs::create_directories(dir);
  write_file(dir / "config.json", echo.dump(2) + "\n");
  cotrain::TrainHooks hooks;
  hooks.out_dir = dir;
  hooks.config_echo = echo;
  hooks.on_epoch = [&](const cotrain::EpochMetrics& m) {
    std::lock_guard lock(log_mutex);
    log << "[B=" << config.train.batch_size << " lr=" << config.train.learning_rate << "] epoch " << m.epoch
        << " loss1 " << fmt(m.loss1) << " loss2 " << fmt(m.loss2) << " val_avg_auc " << fmt(m.val_avg_auc) << '\n';
  };
  cotrain::train(*state, train_bank, val_bank, hooks);

  RunSummary s;
  s.batch_size = config.train.batch_size;
  s.learning_rate = config.train.learning_rate;
  s.run_dir = dir.string();
  s.best_epoch = state->best_epoch;
  s.best_val_auc = state->best_val_auc;
  s.test_auc = std::numeric_limits<double>::quiet_NaN();
  if (test_bank.size()) {
    const auto best = cotrain::load_state(dir / "best.psym");
    try {
      s.test_auc = cotrain::validation_auc(best, test_bank);
    } catch (const UndefinedMetricError&) {
    }
  }
  nlohmann::json summary{{"config", echo},
                         {"best_epoch", s.best_epoch},
                         {"best_val_avg_auc", std::isfinite(s.best_val_auc) ? nlohmann::json(s.best_val_auc) : nullptr},
                         {"test_avg_auc", std::isfinite(s.test_auc) ? nlohmann::json(s.test_auc) : nullptr}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  return s;
}

std::string lr_tag(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", lr);
  return buf;
}

}  // namespace

SplitCounts cmd_synth(const ExperimentConfig& config, bool force, std::ostream& log) {
  config.validate();
  if (config.paths.data_dir.empty()) throw ConfigError("no output directory given (--out)");
  const fs::path dir = config.paths.data_dir;
  if (dir_has_entries(dir)) {
    if (!force) throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    fs::remove(dir / "manifest.json");
    fs::remove_all(dir / "images");
  }
  const auto ds = synth::build_dataset(config.data);
  synth::write_dataset(ds, dir, config_echo(config));
  SplitCounts c;
  for (const auto& p : ds.pairs) {
    if (p.split == synth::Split::Train) ++c.train;
    if (p.split == synth::Split::Val) ++c.val;
    if (p.split == synth::Split::Test) ++c.test;
  }
  c.labeled = ds.labeled.size();
  log << "cases " << ds.cases.size() << ", pairs train " << c.train << " val " << c.val << " test " << c.test
      << ", labeled patches " << c.labeled << '\n';
  return c;
}

std::size_t best_run(const std::vector<RunSummary>& runs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].best_val_auc > runs[best].best_val_auc || std::isnan(runs[best].best_val_auc)) best = i;
  return best;
}

std::string sweep_table(const std::vector<RunSummary>& runs) {
  std::ostringstream out;
  out << "batch_size,learning_rate,best_epoch,avg_val_auc,avg_test_auc,best\n";
  const std::size_t b = runs.empty() ? 0 : best_run(runs);
  for (std::size_t i = 0; i < runs.size(); ++i)
    out << runs[i].batch_size << ',' << lr_tag(runs[i].learning_rate) << ',' << runs[i].best_epoch << ','
        << fmt(runs[i].best_val_auc) << ',' << fmt(runs[i].test_auc) << ',' << (i == b ? "*" : "") << '\n';
  return out.str();
}

std::vector<RunSummary> cmd_pretrain(const ExperimentConfig& config, bool resume, bool force, std::ostream& log) {
  if (config.paths.run_dir.empty()) throw ConfigError("no run directory given (--out)");
  ExperimentConfig base = config;
  const auto ds = open_dataset(base);
  base.validate();

  const fs::path root = base.paths.run_dir;
  if (!resume && dir_has_entries(root) && !force)
    throw ConfigError("run directory " + root.string() + " is not empty (use --force, or --resume to continue)");

  std::vector<ExperimentConfig> runs;
  std::vector<fs::path> dirs;
  if (!base.sweep.enabled()) {
    runs.push_back(base);
    dirs.push_back(root);
  } else {
    auto bs = base.sweep.batch_sizes.empty() ? std::vector<std::size_t>{base.train.batch_size} : base.sweep.batch_sizes;
    auto lrs =
        base.sweep.learning_rates.empty() ? std::vector<double>{base.train.learning_rate} : base.sweep.learning_rates;
    for (auto b : bs)
      for (auto lr : lrs) {
        ExperimentConfig c = base;
        c.train.batch_size = b;
        c.train.learning_rate = lr;
        if (c.train.accumulation_microbatch > 0 && b % c.train.accumulation_microbatch != 0)
          c.train.accumulation_microbatch = 0;
        c.validate();
        runs.push_back(c);
        dirs.push_back(root / ("b" + std::to_string(b) + "_lr" + lr_tag(lr)));
      }
  }

  std::vector<RunSummary> results(runs.size());
  std::mutex log_mutex;
  const std::size_t jobs = std::min(base.sweep.jobs, runs.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < runs.size(); ++i) results[i] = train_one(runs[i], ds, dirs[i], resume, log, log_mutex);
  } else {
    std::vector<std::exception_ptr> errors(runs.size());
    std::size_t next = 0;
    std::mutex next_mutex;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w)
      workers.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(next_mutex);
            if (next >= runs.size()) return;
            i = next++;
          }
          try {
            results[i] = train_one(runs[i], ds, dirs[i], resume, log, log_mutex);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  if (base.sweep.enabled()) {
    const std::string table = sweep_table(results);
    write_file(root / "sweep_summary.csv", "# config " + config_echo(base).dump() + "\n" + table);
    const auto& b = results[best_run(results)];
    log << table << "best: batch_size " << b.batch_size << ", lr " << lr_tag(b.learning_rate) << ", validation "
        << fmt(b.best_val_auc) << ", test " << fmt(b.test_auc) << '\n';
  } else {
    log << "best epoch " << results[0].best_epoch << ", validation avg AUC " << fmt(results[0].best_val_auc)
        << ", test avg AUC " << fmt(results[0].test_auc) << '\n';
  }
  return results;
}

eval::EvalReport cmd_eval(const ExperimentConfig& requested, const std::string& task, std::ostream& log) {
  ExperimentConfig config = requested;
  if (std::find(kEvalTasks.begin(), kEvalTasks.end(), task) == kEvalTasks.end())
    throw ConfigError("unknown eval task '" + task + "'");
  config.validate();
  if (config.paths.out.empty()) throw ConfigError("no output directory given (--out)");
  const auto ds = open_dataset(config);
  const fs::path out_dir = config.paths.out;
  fs::create_directories(out_dir);

  eval::EvalReport report;
  report.task = task;
  report.config = config_echo(config);

  const bool probe = task == "probe-binary" || task == "probe-multiclass";
  const bool untrained = probe && config.eval.untrained;
  std::optional<cotrain::CoTrainState> state;
  if (untrained)
    state.emplace(config.train);
  else
    state.emplace(load_checkpoint_for(config, ds));
  if (!untrained) report.config["checkpoint_train_config"] = state->config;

  if (task == "pair-auc") {
    const auto pairs = ds.pairs_in(config.eval.split);
    const auto bank = cotrain::PairBank::from_pairs(pairs);
    std::vector<double> scores;
    std::string score_name = config.eval.score.empty() ? cotrain::to_string(state->config.score) : config.eval.score;
    if (score_name == "oracle") {
      scores = bank.area;
    } else {
      state->config.score = cotrain::score_source_from_string(score_name);
      scores = cotrain::pair_scores(*state, bank);
    }
    report.sweep = eval::average_auc_over_cutoffs(scores, bank.area, config.eval.cutoffs);
    report.has_sweep = true;
    std::size_t abnormal = 0;
    for (double a : bank.area) abnormal += a > 0.0;
    report.metrics = {{"avg_auc", report.sweep.mean_auc},
                      {"evaluated_cutoffs", report.sweep.evaluated},
                      {"skipped_cutoffs", report.sweep.skipped},
                      {"n_pairs", bank.size()},
                      {"n_abnormal", abnormal},
                      {"score", score_name},
                      {"split", synth::to_string(config.eval.split)}};
    log << "pair-auc (" << score_name << ") on " << synth::to_string(config.eval.split) << ": "
        << fmt(report.sweep.mean_auc) << " over " << report.sweep.evaluated << " cutoffs\n";
  } else if (probe) {
    if (ds.labeled.empty()) throw DataError("dataset has no labeled patches; probe tasks need labels");
    const std::size_t k = task == "probe-binary" ? 2 : 3;
    const std::vector<const nn::Encoder<float>*> encoders{&state->net1.encoder(), &state->net2.encoder()};
    const auto before1 = eval::parameter_checksum(*encoders[0]);
    const auto before2 = eval::parameter_checksum(*encoders[1]);
    const auto r = eval::probe_train_eval(encoders, ds.labeled, k, config.eval.probe);
    const bool unchanged = before1 == eval::parameter_checksum(*encoders[0]) &&
                           before2 == eval::parameter_checksum(*encoders[1]);
    report.per_class_auc = r.per_class_auc;
    report.metrics = {{k == 2 ? "test_auc" : "test_ovr_auc", r.test_auc},
                      {"head1_auc", r.single_head_auc.at(0)},
                      {"head2_auc", r.single_head_auc.at(1)},
                      {"n_train", r.n_train},
                      {"n_test", r.n_test},
                      {"n_classes", k},
                      {"untrained_encoders", untrained},
                      {"encoder_checksum_unchanged", unchanged}};
    log << task << ": test AUC " << fmt(r.test_auc) << '\n';
  } else {
    const auto pairs = ds.pairs_in(config.eval.split);
    const auto path = out_dir / "embeddings.csv";
    eval::export_embeddings(state->net1.encoder(), pairs, path, report.config);
    report.metrics = {{"rows", pairs.size()},
                      {"columns", 3 + 2 * state->config.encoder.embedding_dim},
                      {"split", synth::to_string(config.eval.split)},
                      {"file", path.filename().string()}};
    log << "wrote " << pairs.size() << " rows to " << path.string() << '\n';
  }
  report.write(out_dir / (task + ".json"), out_dir / (task + ".csv"));
  return report;
}

std::size_t cmd_export(const ExperimentConfig& requested, int net, std::ostream& log) {
  ExperimentConfig config = requested;
  config.validate();
  if (net != 1 && net != 2) throw ConfigError("--net must be 1 or 2");
  if (config.paths.out.empty()) throw ConfigError("no output file given (--out)");
  const auto ds = open_dataset(config);
  const auto state = load_checkpoint_for(config, ds);
  const auto pairs = ds.pairs_in(config.eval.split);
  const fs::path out = config.paths.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  auto echo = config_echo(config);
  echo["net"] = net;
  eval::export_embeddings((net == 1 ? state.net1 : state.net2).encoder(), pairs, out, echo);
  log << "wrote " << pairs.size() << " rows to " << out.string() << '\n';
  return pairs.size();
}

// ---------------------------------------------------------------------------
// Command line

namespace {

/// Flag values; unset flags leave the config untouched.
struct Overrides {
  std::string config_file;
  std::optional<std::string> data_dir, out, checkpoint;
  // data
  std::optional<int> cases, patch_size, height, width, max_lesions;
  std::optional<std::uint64_t> data_seed;
  std::optional<double> lesion_contrast, lesion_probability, noise, asymmetry;
  bool no_leakage_guard = false;
  // train
  std::optional<std::size_t> batch_size, epochs, accum, warmup, embedding_dim;
  std::optional<double> lr, momentum, weight_decay, triplet_margin, head_init_scale;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> channels, loss, label_source, score, pooling;
  bool no_batch_norm = false;
  bool single = false;
  bool experimental = false;
  // sweep
  bool sweep = false;
  std::optional<std::string> sweep_batch_sizes, sweep_lrs;
  std::optional<std::size_t> jobs;
  // eval
  std::optional<std::size_t> probe_epochs, probe_batch_size, cutoffs;
  std::optional<double> probe_lr, probe_weight_decay;
  std::optional<std::uint64_t> probe_seed;
  std::optional<std::string> split, task;
  bool untrained = false;
  int classes = 2;
  int net = 1;
  bool force = false;
  bool resume = false;
};

template <typename T>
void set_if(const std::optional<T>& v, T& target) {
  if (v) target = *v;
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config_file.empty() ? ExperimentConfig{} : load_config(o.config_file);
  set_if(o.data_dir, c.paths.data_dir);
  set_if(o.checkpoint, c.paths.checkpoint);
  set_if(o.cases, c.data.n_cases);
  set_if(o.patch_size, c.data.patch_size);
  if (o.patch_size) c.train.encoder.input_side = static_cast<std::size_t>(*o.patch_size);
  set_if(o.height, c.data.phantom.height);
  set_if(o.width, c.data.phantom.width);
  set_if(o.max_lesions, c.data.phantom.max_lesions);
  set_if(o.data_seed, c.data.seed);
  set_if(o.lesion_contrast, c.data.phantom.lesion_contrast);
  set_if(o.lesion_probability, c.data.phantom.lesion_probability);
  set_if(o.noise, c.data.phantom.noise_level);
  set_if(o.asymmetry, c.data.phantom.asymmetry);
  if (o.no_leakage_guard) c.data.leakage_guard = false;
  set_if(o.batch_size, c.train.batch_size);
  set_if(o.epochs, c.train.epochs);
  set_if(o.accum, c.train.accumulation_microbatch);
  set_if(o.warmup, c.train.warmup_epochs);
  set_if(o.embedding_dim, c.train.encoder.embedding_dim);
  set_if(o.lr, c.train.learning_rate);
  set_if(o.momentum, c.train.momentum);
  set_if(o.weight_decay, c.train.weight_decay);
  set_if(o.triplet_margin, c.train.triplet_margin);
  set_if(o.head_init_scale, c.train.head_init_scale);
  set_if(o.seed, c.train.seed);
  if (o.channels) c.train.encoder.channels_per_stage = parse_size_list(*o.channels);
  set_if(o.pooling, c.train.encoder.pooling);
  if (o.no_batch_norm) c.train.encoder.batch_norm = false;
  if (o.loss) c.train.loss = cotrain::loss_mode_from_string(*o.loss);
  if (o.label_source) c.train.label_source = cotrain::label_source_from_string(*o.label_source);
  if (o.single) c.train.dual = false;
  if (o.sweep_batch_sizes) c.sweep.batch_sizes = parse_size_list(*o.sweep_batch_sizes);
  if (o.sweep_lrs) c.sweep.learning_rates = parse_double_list(*o.sweep_lrs);
  set_if(o.jobs, c.sweep.jobs);
  set_if(o.probe_epochs, c.eval.probe.epochs);
  set_if(o.probe_batch_size, c.eval.probe.batch_size);
  set_if(o.cutoffs, c.eval.cutoffs);
  set_if(o.probe_lr, c.eval.probe.learning_rate);
  set_if(o.probe_weight_decay, c.eval.probe.weight_decay);
  set_if(o.probe_seed, c.eval.probe.seed);
  if (o.split) {
    try {
      c.eval.split = synth::split_from_string(*o.split);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.untrained) c.eval.untrained = true;
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "JSON experiment config; flags override its values");
}

void add_data_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--cases", o.cases, "number of phantom cases");
  cmd->add_option("--data-seed", o.data_seed, "dataset seed");
  cmd->add_option("--patch-size", o.patch_size, "patch side in pixels");
  cmd->add_option("--height", o.height, "phantom image height");
  cmd->add_option("--width", o.width, "phantom image width");
  cmd->add_option("--max-lesions", o.max_lesions, "maximum lesions per case");
  cmd->add_option("--lesion-contrast", o.lesion_contrast, "mean lesion contrast");
  cmd->add_option("--lesion-probability", o.lesion_probability, "probability a case has lesions");
  cmd->add_option("--noise", o.noise, "independent per-side pixel noise");
  cmd->add_option("--asymmetry", o.asymmetry, "smooth per-side tissue variation");
  cmd->add_flag("--no-leakage-guard", o.no_leakage_guard, "split labeled patches independently of cases");
}

void add_train_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--batch-size,-B", o.batch_size, "pairs per optimizer step");
  cmd->add_option("--lr", o.lr, "LARS learning rate");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--accum", o.accum, "gradient accumulation microbatch (0 = off)");
  cmd->add_option("--warmup", o.warmup, "epochs with uniform soft labels");
  cmd->add_option("--momentum", o.momentum, "LARS momentum");
  cmd->add_option("--weight-decay", o.weight_decay, "LARS weight decay");
  cmd->add_option("--head-init-scale", o.head_init_scale, "scale of the head's He-uniform initialization");
  cmd->add_option("--seed", o.seed, "training seed");
  cmd->add_option("--embedding-dim", o.embedding_dim, "encoder embedding size");
  cmd->add_option("--channels", o.channels, "comma-separated channels per encoder stage");
  cmd->add_option("--pooling", o.pooling, "global embedding pooling: max or avg");
  cmd->add_flag("--no-batch-norm", o.no_batch_norm, "encoder convs with biases instead of batch norm");
  cmd->add_option("--score", o.score, "validation score: q, p or d");
  cmd->add_option("--loss", o.loss, "cross-bce, triplet or ssl-mix (non-default needs --experimental)");
  cmd->add_option("--soft-label-source", o.label_source, "distance or logit (logit needs --experimental)");
  cmd->add_option("--triplet-margin", o.triplet_margin, "margin of the soft triplet loss");
  cmd->add_flag("--single", o.single, "train one network on its own soft labels (needs --experimental)");
  cmd->add_flag("--experimental", o.experimental, "allow the non-default training modes");
}

void add_probe_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--probe-epochs", o.probe_epochs, "linear probe epochs");
  cmd->add_option("--probe-batch-size", o.probe_batch_size, "linear probe batch size");
  cmd->add_option("--probe-lr", o.probe_lr, "linear probe Adam learning rate");
  cmd->add_option("--probe-weight-decay", o.probe_weight_decay, "linear probe weight decay");
  cmd->add_option("--probe-seed", o.probe_seed, "linear probe seed");
  cmd->add_flag("--untrained", o.untrained, "probe freshly initialized encoders (control)");
  cmd->add_option("--seed", o.seed, "encoder seed for --untrained");
}

void check_experimental(const ExperimentConfig& c, const Overrides& o) {
  if (c.train.experimental() && !o.experimental)
    throw ConfigError("single-network, triplet, ssl-mix and logit-label modes require --experimental");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Bilateral-symmetry Siamese co-training on synthetic phantoms"};
  app.require_subcommand(1);
  Overrides o;

  auto* synth_cmd = app.add_subcommand("synth", "generate a phantom dataset");
  add_common(synth_cmd, o);
  synth_cmd->add_option("--out,-o", o.data_dir, "dataset directory");
  add_data_flags(synth_cmd, o);
  synth_cmd->add_flag("--force", o.force, "overwrite a non-empty output directory");

  auto* pre = app.add_subcommand("pretrain", "co-train the Siamese networks");
  add_common(pre, o);
  pre->add_option("--data,-d", o.data_dir, "dataset directory");
  pre->add_option("--out,-o", o.out, "run directory");
  add_train_flags(pre, o);
  pre->add_flag("--sweep", o.sweep, "expand the batch-size x learning-rate grid");
  pre->add_option("--sweep-batch-sizes", o.sweep_batch_sizes, "comma-separated batch sizes");
  pre->add_option("--sweep-lrs", o.sweep_lrs, "comma-separated learning rates");
  pre->add_option("--jobs,-j", o.jobs, "parallel sweep runs");
  pre->add_flag("--resume", o.resume, "continue from last.psym in the run directory");
  pre->add_flag("--force", o.force, "write into a non-empty run directory");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, o);
  ev->add_option("--checkpoint,-c", o.checkpoint, "checkpoint file");
  ev->add_option("--data,-d", o.data_dir, "dataset directory");
  ev->add_option("--task,-t", o.task, "pair-auc, probe-binary, probe-multiclass or export-embeddings")->required();
  ev->add_option("--out,-o", o.out, "report directory");
  ev->add_option("--split", o.split, "split for pair-auc and export: train, val or test");
  ev->add_option("--score", o.score, "pair-auc score: q, p, d or oracle");
  ev->add_option("--cutoffs", o.cutoffs, "number of abnormal-area cutoffs");
  add_probe_flags(ev, o);

  auto* pr = app.add_subcommand("probe", "linear-probe a checkpoint's frozen encoders");
  add_common(pr, o);
  pr->add_option("--checkpoint,-c", o.checkpoint, "checkpoint file");
  pr->add_option("--data,-d", o.data_dir, "dataset directory");
  pr->add_option("--classes,-k", o.classes, "2 (binary) or 3 (multiclass)");
  pr->add_option("--out,-o", o.out, "report directory");
  add_probe_flags(pr, o);

  auto* ex = app.add_subcommand("export", "export pair embeddings to CSV");
  add_common(ex, o);
  ex->add_option("--checkpoint,-c", o.checkpoint, "checkpoint file");
  ex->add_option("--data,-d", o.data_dir, "dataset directory");
  ex->add_option("--out,-o", o.out, "CSV file");
  ex->add_option("--split", o.split, "train, val or test");
  ex->add_option("--net", o.net, "network 1 or 2");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig c = resolve(o);
    if (synth_cmd->parsed()) {
      cmd_synth(c, o.force, std::cout);
    } else if (pre->parsed()) {
      set_if(o.out, c.paths.run_dir);
      if (o.score) c.train.score = cotrain::score_source_from_string(*o.score);
      if (!o.sweep) {
        c.sweep.batch_sizes.clear();
        c.sweep.learning_rates.clear();
      } else if (!c.sweep.enabled()) {
        throw ConfigError("--sweep needs --sweep-batch-sizes and/or --sweep-lrs (or a sweep config section)");
      }
      check_experimental(c, o);
      cmd_pretrain(c, o.resume, o.force, std::cout);
    } else if (ev->parsed()) {
      set_if(o.out, c.paths.out);
      set_if(o.score, c.eval.score);
      cmd_eval(c, *o.task, std::cout);
    } else if (pr->parsed()) {
      set_if(o.out, c.paths.out);
      if (o.classes != 2 && o.classes != 3) throw ConfigError("--classes must be 2 or 3");
      cmd_eval(c, o.classes == 2 ? "probe-binary" : "probe-multiclass", std::cout);
    } else if (ex->parsed()) {
      set_if(o.out, c.paths.out);
      cmd_export(c, o.net, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace psym::cli
