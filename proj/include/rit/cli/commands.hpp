#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rit/cli/train.hpp"
#include "rit/partition/partition.hpp"

namespace rit::cli {

namespace fs = std::filesystem;

/// Moving-instance statistics of a set of sequences.
struct SceneStats {
  std::size_t scans = 0;
  std::size_t points = 0;
  std::size_t moving_points = 0;
  std::map<std::size_t, std::size_t> instances_per_scan;     ///< count -> scans
  std::map<std::size_t, std::size_t> points_per_instance;    ///< size -> instances

  friend bool operator==(const SceneStats&, const SceneStats&) = default;
};

SceneStats scene_stats(const std::vector<pc::Sequence>& sequences);
std::string stats_table(const SceneStats& s);

/// Reads every sequence under `dir`; at most `max_windows` windows when > 0.
Dataset load_dataset(const fs::path& dir, std::size_t max_windows = 0);

/// Writes `cfg.data.sequences` synthetic scenes of split `split` to `out`.
SceneStats cmd_synth(const PipelineConfig& cfg, const fs::path& out, const std::string& split = "train");

struct TrainOptions {
  std::optional<fs::path> validation;  ///< dataset evaluated after each epoch
  std::optional<fs::path> checkpoint;  ///< written after each epoch
  std::optional<fs::path> resume;      ///< checkpoint to continue from
  std::ostream* log = nullptr;
};

/// Trains from a fresh seeded model (or `resume`) up to cfg.train.epochs
/// and writes the weights to `out_weights`.
std::vector<EpochLog> cmd_train(const PipelineConfig& cfg, const fs::path& data, const fs::path& out_weights,
                                const TrainOptions& options = {});

/// Results go to <out>/<sequence id>/<frame file>, one JSONL per scan.
void write_results(const fs::path& out, const Dataset& data, const std::vector<metrics::PanopticResult>& results);

void cmd_infer(const PipelineConfig& cfg, const fs::path& weights, const fs::path& data, const fs::path& out);
void cmd_baseline(const PipelineConfig& cfg, const fs::path& data, const fs::path& out);

/// Pools every ground-truth window of `gt` against the result file of the
/// same sequence and frame under `pred`. Missing files are an IoError
/// listing them.
metrics::EvalReport cmd_eval(const fs::path& pred, const fs::path& gt, std::size_t max_windows = 0);

struct PartitionOutcome {
  partition::Partition partition;
  double modularity = 0.0;
};
PartitionOutcome cmd_partition(const fs::path& graph);

}  // namespace rit::cli
