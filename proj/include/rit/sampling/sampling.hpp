#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "rit/numerics/tape.hpp"
#include "rit/numerics/tensor.hpp"

namespace rit::sampling {

using nn::Tensor;
using nn::Var;

/// Row i lists k source indices ordered by ascending distance to query i,
/// ties broken by ascending index.
struct NeighborIndex {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::size_t source_size = 0;
  std::vector<std::size_t> indices;  // rows * k, row-major

  std::size_t operator()(std::size_t i, std::size_t j) const { return indices[i * k + j]; }
  std::span<const std::size_t> row(std::size_t i) const { return {indices.data() + i * k, k}; }
};

/// Exact k nearest source points for every query ([Q,3] and [S,3]). When the
/// source holds fewer than k points the farthest one is repeated to fill the
/// row. Throws ContractError on an empty source or k == 0.
NeighborIndex knn(const Tensor& query, const Tensor& source, std::size_t k);

/// Unordered pairs (i < j) with ||p_i - p_j|| <= r, sorted lexicographically.
std::vector<std::pair<std::size_t, std::size_t>> radius_neighbors(const Tensor& points, double r);

/// Greedy farthest point sampling of m indices starting at seed_index.
/// Ties pick the lowest index. Throws ContractError unless 1 <= m <= N.
std::vector<std::size_t> fps(const Tensor& points, std::size_t m, std::size_t seed_index = 0);

/// out[i, j] = features[neighbors(i, j)] as [N, k, D].
Var sample_and_group(const Var& features, const NeighborIndex& neighbors);
Tensor sample_and_group(const Tensor& features, const NeighborIndex& neighbors);

/// Elementwise max over the neighbor axis of [N, k, D].
Var maxpool_group(const Var& grouped);

inline constexpr double kIdwEps = 1e-8;

/// Interpolation stencil from coarse to fine points: up to k nearest coarse
/// points with weights proportional to 1 / (d + kIdwEps), normalized. A fine
/// point within 1e-12 of a coarse point takes that point's weight 1.
struct IdwStencil {
  NeighborIndex neighbors;
  Tensor weights;  // [N, k]
};

IdwStencil idw_stencil(const Tensor& coarse_points, const Tensor& fine_points, std::size_t k = 3);
Var idw_interpolate(const Var& coarse_features, const IdwStencil& stencil);
Tensor idw_interpolate(const Tensor& coarse_points, const Tensor& coarse_features, const Tensor& fine_points,
                       std::size_t k = 3);

/// Points selected by index, [m, 3].
Tensor select_rows(const Tensor& x, std::span<const std::size_t> index);

}  // namespace rit::sampling
