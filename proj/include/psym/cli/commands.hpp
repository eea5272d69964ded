#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "psym/cli/config.hpp"

namespace psym::cli {

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t labeled = 0;
};

/// Builds the phantom dataset and writes it to paths.data_dir. Refuses a
/// non-empty directory unless force is set.
SplitCounts cmd_synth(const ExperimentConfig& config, bool force, std::ostream& log);

struct RunSummary {
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  std::string run_dir;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
  double test_auc = 0.0;
};

/// Trains one run (or a batch-size x learning-rate sweep) on the dataset at
/// paths.data_dir, writing into paths.run_dir. With resume, continues from
/// run_dir/last.psym.
std::vector<RunSummary> cmd_pretrain(const ExperimentConfig& config, bool resume, bool force, std::ostream& log);

/// Index of the sweep entry with the highest validation AUC (first on ties).
std::size_t best_run(const std::vector<RunSummary>& runs);
std::string sweep_table(const std::vector<RunSummary>& runs);

inline const std::vector<std::string> kEvalTasks = {"pair-auc", "probe-binary", "probe-multiclass",
                                                     "export-embeddings"};

/// Runs one evaluation task and writes <task>.json and <task>.csv into
/// paths.out (export-embeddings also writes embeddings.csv there).
eval::EvalReport cmd_eval(const ExperimentConfig& config, const std::string& task, std::ostream& log);

/// Writes the embeddings of the configured split's pairs under network
/// `net` (1 or 2) to the CSV file paths.out.
std::size_t cmd_export(const ExperimentConfig& config, int net, std::ostream& log);

/// Full command-line entry point; returns the process exit code
/// (0 ok, 2 config error, 3 data error, 4 numeric failure, 1 other).
int run_cli(int argc, const char* const* argv);

}  // namespace psym::cli
