// Run configuration for the command-line tool: one `key = value` file with
// `data.`, `pipeline.`, `train.`, `loss.` and `baseline.` sections.

#pragma once

#include <filesystem>
#include <string>

#include "sofpi/phantoms.hpp"
#include "sofpi/pipeline.hpp"

namespace sofpi {

struct RunConfig {
  std::string command;
  /// Seeds the dataset and the network initialisation.
  std::uint64_t seed = 1;
  std::filesystem::path out = "run";
  /// Record wall-clock seconds in metrics.csv; off keeps the file
  /// byte-stable across runs.
  bool timing = false;

  DatasetManifest data;
  PipelineConfig pipeline;
  TrainConfig train;
  /// Empty selects LossConfig::defaults(pipeline.stages).
  LossConfig loss;
  RegisterConfig baseline{10000.0, 200, 1e-4, 20, 1e-9};

  LossConfig effective_loss() const;

  KeyValues to_key_values() const;
  /// Rejects keys that no field reads.
  static RunConfig from_key_values(const KeyValues& kv);
  static RunConfig read(const std::filesystem::path& path);
};

}  // namespace sofpi
