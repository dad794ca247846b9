#include "rit/sampling/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rit/error.hpp"
#include "rit/numerics/ops.hpp"

namespace rit::sampling {

namespace {

void expect_points(const Tensor& p, const char* what) {
  RIT_EXPECT(p.rank() == 2 && p.dim(1) == 3, DimensionError,
             std::string(what) + " must be [N, 3], got " + nn::shape_string(p.shape()));
}

double sq_dist(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const double dx = a(i, 0) - b(j, 0), dy = a(i, 1) - b(j, 1), dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

NeighborIndex knn(const Tensor& query, const Tensor& source, std::size_t k) {
  expect_points(query, "query points");
  expect_points(source, "source points");
  const std::size_t q = query.dim(0), s = source.dim(0);
  RIT_EXPECT(s >= 1, ContractError, "knn over an empty source");
  RIT_EXPECT(k >= 1, ContractError, "knn needs k >= 1");
  NeighborIndex out;
  out.rows = q;
  out.k = k;
  out.source_size = s;
  out.indices.resize(q * k);
  const std::size_t take = std::min(k, s);
  std::vector<std::pair<double, std::size_t>> cand(s);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < s; ++j) cand[j] = {sq_dist(query, i, source, j), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    std::size_t* row = out.indices.data() + i * k;
    for (std::size_t j = 0; j < take; ++j) row[j] = cand[j].second;
    for (std::size_t j = take; j < k; ++j) row[j] = cand[take - 1].second;
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> radius_neighbors(const Tensor& points, double r) {
  expect_points(points, "points");
  RIT_EXPECT(r > 0.0, ContractError, "radius must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t n = points.dim(0);
  const double r2 = r * r;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (sq_dist(points, i, points, j) <= r2) out.emplace_back(i, j);
  return out;
}

std::vector<std::size_t> fps(const Tensor& points, std::size_t m, std::size_t seed_index) {
  expect_points(points, "points");
  const std::size_t n = points.dim(0);
  RIT_EXPECT(m >= 1 && m <= n, ContractError, "fps needs 1 <= m <= N");
  RIT_EXPECT(seed_index < n, ContractError, "fps seed index out of range");
  std::vector<std::size_t> picked{seed_index};
  picked.reserve(m);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  taken[seed_index] = 1;
  std::size_t last = seed_index;
  while (picked.size() < m) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (taken[j]) continue;
      min_d[j] = std::min(min_d[j], sq_dist(points, last, points, j));
      if (min_d[j] > best_d) {
        best_d = min_d[j];
        best = j;
      }
    }
    taken[best] = 1;
    picked.push_back(best);
    last = best;
  }
  return picked;
}

Var sample_and_group(const Var& features, const NeighborIndex& neighbors) {
  RIT_EXPECT(features.shape().size() == 2, DimensionError, "grouped features must be [S, D]");
  RIT_EXPECT(features.shape()[0] == neighbors.source_size, ContractError,
             "neighbor index built for a different source size");
  return nn::gather_rows(features, neighbors.indices, {neighbors.rows, neighbors.k});
}

Tensor sample_and_group(const Tensor& features, const NeighborIndex& neighbors) {
  nn::Tape tape(false);
  return sample_and_group(tape.constant(features), neighbors).value();
}

Var maxpool_group(const Var& grouped) {
  RIT_EXPECT(grouped.shape().size() == 3 && grouped.shape()[1] >= 1, DimensionError, "maxpool needs [N, k>=1, D]");
  return nn::max_neighbors(grouped);
}

IdwStencil idw_stencil(const Tensor& coarse_points, const Tensor& fine_points, std::size_t k) {
  expect_points(coarse_points, "coarse points");
  const std::size_t m = coarse_points.dim(0);
  RIT_EXPECT(m >= 1, ContractError, "interpolation from an empty coarse cloud");
  const std::size_t keff = std::min(k, m);
  IdwStencil st;
  st.neighbors = knn(fine_points, coarse_points, keff);
  const std::size_t n = st.neighbors.rows;
  st.weights = Tensor({n, keff});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t nearest = st.neighbors(i, 0);
    if (std::sqrt(sq_dist(fine_points, i, coarse_points, nearest)) <= 1e-12) {
      st.weights(i, 0) = 1.0;
      continue;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < keff; ++j) {
      const double w = 1.0 / (std::sqrt(sq_dist(fine_points, i, coarse_points, st.neighbors(i, j))) + kIdwEps);
      st.weights(i, j) = w;
      total += w;
    }
    for (std::size_t j = 0; j < keff; ++j) st.weights(i, j) /= total;
  }
  return st;
}

Var idw_interpolate(const Var& coarse_features, const IdwStencil& stencil) {
  RIT_EXPECT(coarse_features.shape().size() == 2 && coarse_features.shape()[0] == stencil.neighbors.source_size,
             DimensionError, "coarse features do not match the interpolation stencil");
  return nn::weighted_gather(coarse_features, stencil.neighbors.indices, stencil.weights);
}

Tensor idw_interpolate(const Tensor& coarse_points, const Tensor& coarse_features, const Tensor& fine_points,
                       std::size_t k) {
  nn::Tape tape(false);
  return idw_interpolate(tape.constant(coarse_features), idw_stencil(coarse_points, fine_points, k)).value();
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> index) {
  RIT_EXPECT(x.rank() == 2, DimensionError, "select_rows needs a matrix");
  const std::size_t d = x.dim(1);
  Tensor out({index.size(), d});
  for (std::size_t r = 0; r < index.size(); ++r) {
    RIT_EXPECT(index[r] < x.dim(0), ContractError, "row index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(index[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return out;
}

}  // namespace rit::sampling
