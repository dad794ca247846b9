#pragma once

#include <vector>

#include "rit/cli/config.hpp"
#include "rit/metrics/metrics.hpp"
#include "rit/pointcloud/scan.hpp"

namespace rit::cli {

using nn::Tape;
using nn::Tensor;
using nn::Var;

/// Network inputs and targets of one window.
struct WindowInput {
  Tensor current_feats;   // [N, 5]
  Tensor current_pts;     // [N, 3]
  Tensor previous_feats;  // [P, 5]
  Tensor previous_pts;    // [P, 3]
  std::vector<int> gt_labels;
  std::vector<int> gt_instances;

  std::size_t size() const { return gt_labels.size(); }
};

/// Frame t of `seq` with T previous scans aligned into the current frame,
/// padded and aggregated. With `augment_rng` one shared augmentation draw
/// is applied to the whole window.
WindowInput prepare_window(const pc::Sequence& seq, std::size_t t, std::size_t T, Rng* augment_rng = nullptr);

/// SAFE -> backbone -> head.
class Model {
 public:
  Model() = default;
  Model(const PipelineConfig& cfg, Rng& rng);

  head::HeadOutput forward(Tape& tape, const WindowInput& in, bool training, bool teacher_forcing = false);
  head::LossTerms loss(const head::HeadOutput& out, const WindowInput& in) const;
  void collect(nn::ParameterSet& set);
  nn::ParameterSet parameters();

  PipelineConfig cfg;
  attn::SafeModule safe;
  backbone::Backbone net;
  head::Head head;
};

/// Evaluation-mode forward followed by graph partitioning of the
/// predicted-moving points. Empty windows give an empty result.
metrics::PanopticResult infer_window(Model& model, const WindowInput& in);

}  // namespace rit::cli
