#pragma once

#include <functional>
#include <span>
#include <string>

#include "rit/numerics/tape.hpp"

namespace rit::nn {

/// Builds a scalar loss on the given tape from parameters captured by the
/// closure. Must be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double step = 1e-4;
  /// Fourth-order central stencil (f(-2h), f(-h), f(h), f(2h)). The
  /// three-point form at a step small enough for its O(h^2) truncation error
  /// loses ~1e-11 * |f| to rounding, which dominates on exactly-zero
  /// gradients (e.g. key biases under the softmax shift invariance).
  bool five_point = true;
  /// An entry whose stencil crosses a kink of relu/max/clamp/abs (detected
  /// through the tape's branch signature) is retried with the step divided
  /// by 10 up to this many times, then skipped and counted.
  int kink_retries = 3;
  /// Denominator floor of the relative error, so entries whose true
  /// gradient is ~0 are compared absolutely at this scale.
  double floor = 1e-6;
  /// Test hook: multiplies the analytic gradient before comparison.
  double corrupt_scale = 1.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t entries_checked = 0;
  /// Entries within step / 10^kink_retries of a kink, where the function has
  /// no derivative to compare against.
  std::size_t kinks_skipped = 0;
};

double relative_error(double analytic, double numeric, double floor);

/// Compares reverse-mode gradients of `loss` against central differences
/// for every scalar of every parameter.
GradCheckReport fd_check(const LossBuilder& loss, std::span<Parameter* const> params,
                         const GradCheckOptions& options = {});

}  // namespace rit::nn
