#pragma once

#include <optional>
#include <span>
#include <vector>

#include "rit/numerics/layers.hpp"
#include "rit/sampling/sampling.hpp"

namespace rit::head {

using nn::Mlp;
using nn::ParameterSet;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using sampling::NeighborIndex;

struct MosPrediction {
  Var probs;                // [N, 2]: (static, moving)
  std::vector<int> labels;  // 1 = moving; ties resolve to static
};

/// Labels from [N, 2] probabilities: moving only when p_moving > p_static.
std::vector<int> argmax_labels(const Tensor& probs);

/// Indices i with mask[i] != 0, ascending.
std::vector<std::size_t> mask_rows(std::span<const int> mask);

struct SimilarityTargets {
  Tensor local;   // [N, k]
  Tensor global;  // [M, M] over the selected rows
};

/// local(i, j) = 1 iff points i and neighbors(i, j) are both gt-moving with
/// the same gt instance. global over `rows`: 1 iff both are gt-moving with
/// the same gt instance, so a row whose gt label is static is all zero.
SimilarityTargets build_targets(const NeighborIndex& neighbors, std::span<const int> gt_labels,
                                std::span<const int> gt_instances, std::span<const std::size_t> rows);

/// sigmoid(q_i . k_j + pos_term(i, j)) for j over the kNN of i, [N, k].
/// pos_term is relu(wr(p_i - p_j)) in the head.
Var local_similarity(const Var& q, const Var& k, const Var& pos_term, const NeighborIndex& neighbors);
/// sigmoid(Q K^T) restricted to `rows`, [M, M]. M = 0 gives a 0x0 tensor.
Var global_similarity(const Var& q, const Var& k, std::span<const std::size_t> rows);

/// Per-instance centroid minus point for gt-moving points, [M, 3] over
/// the moving rows in ascending order.
Tensor offset_targets(const Tensor& points, std::span<const int> gt_labels, std::span<const int> gt_instances);

struct HeadConfig {
  std::size_t width = 48;
  std::size_t k = 12;  ///< N^a
  double ftl_alpha = 0.7;
  double ftl_beta = 0.3;
  double ftl_gamma = 4.0 / 3.0;
  double ftl_smooth = 1.0;
  bool offset_head = false;
  double lambda_local = 1.0;   ///< weight of the local similarity BCE
  double lambda_global = 1.0;  ///< weight of the global similarity BCE

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct HeadOutput {
  MosPrediction mos;
  NeighborIndex neighbors;
  Var s_local;                     // [N, k]
  std::vector<std::size_t> rows;   // rows of s_global
  Var s_global;                    // [M, M]
  std::optional<Var> offsets;      // [N, 3]
};

struct LossTerms {
  Var total;
  double ftl = 0.0;
  double bce_local = 0.0;
  double bce_global = 0.0;
  double offset = 0.0;
};

class Head {
 public:
  Head() = default;
  Head(const HeadConfig& cfg, Rng& rng);

  /// Points flagged in `force_moving` (teacher forcing with gt labels) are
  /// merged into the predicted-moving rows of the global similarity.
  HeadOutput forward(Tape& tape, const Var& xb, const Tensor& points, bool training,
                     std::span<const int> force_moving = {});
  LossTerms loss(const HeadOutput& out, const Tensor& points, std::span<const int> gt_labels,
                 std::span<const int> gt_instances) const;
  void collect(ParameterSet& set);

  HeadConfig cfg;
  Mlp mos;  // D -> D -> 2
  nn::LinearLayer wq, wk, wr;
  std::optional<nn::LinearLayer> offset;
};

}  // namespace rit::head
