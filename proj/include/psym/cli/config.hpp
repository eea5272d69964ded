#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psym/cotrain.hpp"
#include "psym/eval.hpp"
#include "psym/synthdata.hpp"

namespace psym::cli {

inline constexpr int kConfigFormatVersion = 1;

struct EvalSettings {
  eval::ProbeConfig probe;
  std::size_t cutoffs = eval::kDefaultCutoffs;
  /// Split scored by pair-auc and exported by export.
  synth::Split split = synth::Split::Test;
  /// Probe tasks use freshly initialized encoders instead of the checkpoint's.
  bool untrained = false;
  /// pair-auc score: "" keeps the checkpoint's score source; also q, p, d or
  /// "oracle" (the abnormal area itself).
  std::string score;

  void validate() const;
};

struct SweepSettings {
  std::vector<std::size_t> batch_sizes;
  std::vector<double> learning_rates;
  std::size_t jobs = 1;

  bool enabled() const { return !batch_sizes.empty() || !learning_rates.empty(); }
};

struct Paths {
  std::string data_dir;
  std::string run_dir;
  std::string checkpoint;
  std::string out;
};

/// Everything needed to reproduce a run; echoed into every artifact.
struct ExperimentConfig {
  synth::DataConfig data;
  cotrain::TrainConfig train;
  EvalSettings eval;
  SweepSettings sweep;
  Paths paths;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalSettings& e);
void to_json(nlohmann::json& j, const SweepSettings& s);
void to_json(nlohmann::json& j, const Paths& p);
void to_json(nlohmann::json& j, const ExperimentConfig& c);

/// Parses a (possibly partial) configuration on top of the defaults. Unknown
/// keys are rejected with ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// The config echo embedded in artifacts: the config without file paths, plus
/// its format version. Artifacts of one experiment match wherever they are written.
nlohmann::json config_echo(const ExperimentConfig& c);

std::vector<std::size_t> parse_size_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace psym::cli
