#pragma once

#include <array>
#include <string>

#include "rit/numerics/layers.hpp"
#include "rit/sampling/sampling.hpp"

namespace rit::attn {

using nn::Mlp;
using nn::ParameterSet;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using sampling::NeighborIndex;

/// out[i, j] = query[i] - source[neighbors(i, j)], shape [N, k, 3].
Tensor relative_positions(const Tensor& query_pts, const Tensor& source_pts, const NeighborIndex& neighbors);

/// Linear -> BN -> ReLU -> Linear -> ... with `dims` giving every width.
/// The last stage has no activation; it carries a batch norm only when
/// `norm_last` is set. Linears feeding a batch norm have no bias.
Mlp make_mlp(const std::string& name, const std::vector<std::size_t>& dims, bool norm_last, Rng& rng);

/// Per-channel vector attention over a kNN neighborhood:
///   logits = (Q_i - K_j) + R_ij,  R = pos_mlp(p_i - p_j)
///   A = weight_mlp(softmax_j(logits)),  out_i = sum_j A_ij * (V_j + R_ij)
class VectorAttention {
 public:
  VectorAttention() = default;
  VectorAttention(const std::string& name, std::size_t in_dim, std::size_t out_dim, Rng& rng);

  Var forward(Tape& tape, const Var& query_feats, const Var& source_feats, const Tensor& query_pts,
              const Tensor& source_pts, const NeighborIndex& neighbors, bool training);
  void collect(ParameterSet& set);

  std::size_t in_dim() const { return wq.in_dim(); }
  std::size_t out_dim() const { return wq.out_dim(); }

  nn::LinearLayer wq, wk, wv;
  Mlp pos_mlp;     // 3 -> 3 -> D_out
  Mlp weight_mlp;  // D_out -> D_out -> D_out; empty means identity
};

/// Pre-norm residual block: x + FC2(GELU(FC1(LN2(Attn(LN1(x)))))).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, std::size_t dim, Rng& rng);

  /// `neighbors` is a kNN of `pts` into itself.
  Var forward(Tape& tape, const Var& x, const Tensor& pts, const NeighborIndex& neighbors, bool training);
  void collect(ParameterSet& set);
  /// Zeroes the output projection so the block is the identity map.
  void zero_residual();

  std::size_t dim() const { return fc1.in_dim(); }

  nn::NormLayer ln1, ln2;
  VectorAttention attn;
  nn::LinearLayer fc1, fc2;
};

struct SafeConfig {
  std::size_t d1 = 16;
  std::size_t d2 = 32;
  std::size_t k = 12;
  /// Number of previous scans; 0 replaces the temporal features by zeros.
  std::size_t T = 2;
  /// Fixed per-channel multipliers for (x, y, z, rcs, doppler) before the lift.
  std::array<double, 5> input_scale{0.05, 0.05, 0.05, 0.1, 0.5};

  friend bool operator==(const SafeConfig&, const SafeConfig&) = default;
};

/// Temporal feature encoder: lifts current and aggregated previous points
/// separately (per-point MLP 5 -> D1), attends from current to previous
/// points (D1 -> D2) and concatenates [X_temp, X_current].
class SafeModule {
 public:
  SafeModule() = default;
  SafeModule(const SafeConfig& cfg, Rng& rng);

  /// current_feats [N,5], previous_feats [P,5]; positions [N,3] and [P,3].
  /// Returns [N, D1 + D2].
  Var forward(Tape& tape, const Tensor& current_feats, const Tensor& current_pts, const Tensor& previous_feats,
              const Tensor& previous_pts, bool training);
  void collect(ParameterSet& set);

  std::size_t out_dim() const { return cfg.d1 + cfg.d2; }

  SafeConfig cfg;
  Mlp lift_current;
  Mlp lift_previous;
  VectorAttention attn;
};

}  // namespace rit::attn
