#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rit/numerics/layers.hpp"
#include "rit/numerics/weights_io.hpp"

namespace rit::nn {

enum class OptimizerKind { adamw, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double lr = 1e-3;
  double weight_decay = 1e-2;  ///< decoupled (AdamW) or added to the gradient (SGD)
  double beta1 = 0.9;          ///< AdamW first moment; SGD momentum
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  ///< global L2 norm clip; 0 disables

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Learning rate divided by `factor` after each milestone fraction of the
/// total epochs (e.g. 0.6 and 0.8).
struct StepSchedule {
  std::vector<double> milestones{0.6, 0.8};
  double factor = 10.0;

  double lr_at(double base_lr, std::size_t epoch, std::size_t total_epochs) const;

  friend bool operator==(const StepSchedule&, const StepSchedule&) = default;
};

/// Per-parameter state is keyed by parameter order in the set.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const ParameterSet& params);

  /// Applies one update with the current gradients at learning rate `lr`.
  void step(double lr);
  std::uint64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }

  /// Moments and step count as named entries ("optim.m.<param>", ...).
  std::vector<WeightEntry> state() const;
  /// Restores state written by state(); throws ParseError when missing.
  void load_state(std::span<const WeightEntry> entries);

 private:
  OptimizerConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  std::uint64_t steps_ = 0;
};

/// Global L2 norm of all gradients.
double grad_norm(const ParameterSet& params);

}  // namespace rit::nn
