#include "rit/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace rit::nn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport fd_check(const LossBuilder& loss, std::span<Parameter* const> params,
                         const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape(true);
    Var l = loss(tape);
    tape.backward(l);
  }

  struct Eval {
    double value;
    std::uint64_t signature;
  };
  auto evaluate = [&] {
    Tape tape(false);
    tape.set_branch_tracking(true);
    const double v = loss(tape).value().item();
    return Eval{v, tape.branch_signature()};
  };

  GradCheckReport report;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      const std::uint64_t base = evaluate().signature;
      bool smooth = false;
      double numeric = 0.0;
      double h = options.step;
      for (int attempt = 0; attempt <= options.kink_retries && !smooth; ++attempt, h /= 10.0) {
        smooth = true;
        auto at = [&](double offset) {
          p->value[i] = saved + offset;
          const Eval e = evaluate();
          smooth = smooth && e.signature == base;
          return e.value;
        };
        if (options.five_point) {
          numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
        } else {
          numeric = (at(h) - at(-h)) / (2 * h);
        }
      }
      p->value[i] = saved;
      if (!smooth) {
        ++report.kinks_skipped;
        continue;
      }
      const double analytic = p->grad[i] * options.corrupt_scale;
      const double err = relative_error(analytic, numeric, options.floor);
      ++report.entries_checked;
      if (err > report.max_rel_error || report.worst_entry.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_entry = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace rit::nn
