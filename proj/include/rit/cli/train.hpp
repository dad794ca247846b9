#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rit/cli/model.hpp"
#include "rit/metrics/metrics.hpp"
#include "rit/numerics/optim.hpp"

namespace rit::cli {

/// (sequence, frame) pairs over a set of sequences.
struct WindowRef {
  std::size_t sequence = 0;
  std::size_t frame = 0;
};

struct Dataset {
  std::vector<pc::Sequence> sequences;
  std::vector<WindowRef> windows;

  /// Every frame of every sequence, in order; at most `limit` windows when
  /// limit > 0.
  static Dataset from_sequences(std::vector<pc::Sequence> sequences, std::size_t limit = 0);
  const pc::Scan& current(const WindowRef& w) const { return sequences[w.sequence].frames[w.frame]; }
};

/// `data.sequences` synthetic scenes; scene i is seeded from
/// (seed, stream, i) so train and test sets never share scenes.
std::vector<pc::Sequence> synth_sequences(const DataConfig& data, std::uint64_t seed, const std::string& stream);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  ///< mean total loss over windows
  double ftl = 0.0, bce_local = 0.0, bce_global = 0.0;
};

/// Raised when a loss term becomes NaN or infinite.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(const PipelineConfig& cfg, Model& model);

  /// One pass over the shuffled windows in batches; gradients are averaged
  /// over each batch. Shuffle and augmentation draws depend only on
  /// (seed, epoch), so a resumed run repeats an uninterrupted one.
  EpochLog run_epoch(const Dataset& data);
  /// Mean losses in evaluation mode without updating anything.
  EpochLog evaluate_loss(const Dataset& data);

  std::size_t epoch() const { return epoch_; }

  /// Weights, optimizer state and epoch counter.
  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  std::function<void(const EpochLog&)> on_epoch;

 private:
  PipelineConfig cfg_;
  Model& model_;
  nn::ParameterSet params_;
  nn::Optimizer optimizer_;
  std::size_t epoch_ = 0;
};

/// Inference over every window of `data`.
std::vector<metrics::PanopticResult> infer_dataset(Model& model, const Dataset& data, std::size_t T);
metrics::EvalReport evaluate(Model& model, const Dataset& data, std::size_t T);
/// Threshold baseline over every window of `data`.
metrics::EvalReport evaluate_baseline(const Dataset& data, double v_t, double r);

/// Weights-only persistence (parameters and running statistics).
void save_weights(const std::filesystem::path& path, Model& model);
void load_weights(const std::filesystem::path& path, Model& model);

}  // namespace rit::cli
