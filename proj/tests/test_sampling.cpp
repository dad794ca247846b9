#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "rit/error.hpp"
#include "rit/sampling/sampling.hpp"
#include "test_support.hpp"

using namespace rit;
using namespace rit::sampling;
using rit::testing::random_points;
using rit::testing::random_tensor;

namespace {

Tensor line(std::initializer_list<double> xs) {
  Tensor t({xs.size(), 3});
  std::size_t i = 0;
  for (double x : xs) t(i++, 0) = x;
  return t;
}

std::vector<std::vector<std::size_t>> rows_of(const NeighborIndex& nb) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < nb.rows; ++i) out.emplace_back(nb.row(i).begin(), nb.row(i).end());
  return out;
}

}  // namespace

TEST_CASE("knn") {
  SUBCASE("single point is its own neighbor") {
    const Tensor p = line({4.0});
    const NeighborIndex nb = knn(p, p, 1);
    CHECK(nb(0, 0) == 0);
  }
  SUBCASE("forced ordering on a line") {
    const NeighborIndex nb = knn(line({0.0}), line({0, 1, 3}), 2);
    CHECK(nb(0, 0) == 0);
    CHECK(nb(0, 1) == 1);
  }
  SUBCASE("ties go to the lower index") {
    const NeighborIndex nb = knn(line({0.0}), line({1, -1, 2, -2}), 4);
    CHECK(rows_of(nb)[0] == std::vector<std::size_t>{0, 1, 2, 3});
  }
  SUBCASE("short source repeats the farthest neighbor") {
    const NeighborIndex nb = knn(line({0.0}), line({5, 1}), 4);
    CHECK(rows_of(nb)[0] == std::vector<std::size_t>{1, 0, 0, 0});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(knn(line({0.0}), Tensor({0, 3}), 1), ContractError);
    CHECK_THROWS_AS(knn(line({0.0}), line({0.0}), 0), ContractError);
    CHECK_THROWS_AS(knn(Tensor({1, 2}), line({0.0}), 1), DimensionError);
  }
  SUBCASE("matches brute force and is permutation invariant") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      const Tensor src = random_points(200, rng);
      const Tensor q = random_points(40, rng);
      const NeighborIndex nb = knn(q, src, 12);
      CHECK(rows_of(nb) == oracle::knn(q, src, 12));
      for (std::size_t i = 0; i < nb.rows; ++i)
        for (std::size_t j = 1; j < nb.k; ++j)
          CHECK(oracle::sq_distance(q, i, src, nb(i, j - 1)) <= oracle::sq_distance(q, i, src, nb(i, j)));

      std::vector<std::size_t> perm(200);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      const NeighborIndex pnb = knn(q, select_rows(src, perm), 12);
      for (std::size_t i = 0; i < nb.rows; ++i)
        for (std::size_t j = 0; j < nb.k; ++j)
          CHECK(oracle::sq_distance(q, i, src, perm[pnb(i, j)]) == oracle::sq_distance(q, i, src, nb(i, j)));
    }
  }
}

TEST_CASE("radius_neighbors") {
  CHECK(radius_neighbors(line({0.0, 7.0}), 7.0).size() == 1);
  CHECK(radius_neighbors(line({0.0, 7.0 + 1e-9}), 7.0).empty());
  CHECK(radius_neighbors(line({0.0}), 2.0).empty());
  CHECK_THROWS_AS(radius_neighbors(line({0.0}), 0.0), ContractError);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const Tensor p = random_points(seed == 0 ? 200 : 50, rng, 5.0);
    CHECK(radius_neighbors(p, 2.0) == oracle::radius_pairs(p, 2.0));
  }
}

TEST_CASE("fps") {
  const Tensor p = line({0, 5, 10});
  CHECK(fps(p, 1) == std::vector<std::size_t>{0});
  CHECK(fps(p, 2) == std::vector<std::size_t>{0, 2});
  CHECK(fps(p, 3) == std::vector<std::size_t>{0, 2, 1});
  CHECK(fps(p, 1, 1) == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(fps(p, 4), ContractError);
  CHECK_THROWS_AS(fps(p, 0), ContractError);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const Tensor q = random_points(100, rng);
    const auto sel = fps(q, 50);
    CHECK(sel == oracle::fps(q, 50, 0));
    // Min distance of each new pick to the earlier picks never grows.
    double prev = INFINITY;
    for (std::size_t s = 1; s < sel.size(); ++s) {
      double d = INFINITY;
      for (std::size_t t = 0; t < s; ++t) d = std::min(d, oracle::sq_distance(q, sel[s], q, sel[t]));
      CHECK(d <= prev);
      prev = d;
    }
  }
}

TEST_CASE("sample_and_group and maxpool_group") {
  Rng rng(1);
  SUBCASE("k=1 self neighbors reproduce the features") {
    const Tensor pts = random_points(6, rng);
    const Tensor f = random_tensor({6, 4}, rng);
    const Tensor g = sample_and_group(f, knn(pts, pts, 1));
    CHECK(g.shape() == nn::Shape{6, 1, 4});
    CHECK(g.reshaped({6, 4}) == f);
  }
  SUBCASE("explicit permutation") {
    NeighborIndex nb{3, 1, 3, {2, 0, 1}};
    const Tensor f = Tensor::matrix({{1, 1}, {2, 2}, {3, 3}});
    CHECK(sample_and_group(f, nb).reshaped({3, 2}) == Tensor::matrix({{3, 3}, {1, 1}, {2, 2}}));
    nb.indices[0] = 7;
    CHECK_THROWS_AS(sample_and_group(f, nb), ContractError);
  }
  SUBCASE("random gather and max against loops") {
    const Tensor src = random_points(30, rng), q = random_points(10, rng);
    const Tensor f = random_tensor({30, 5}, rng);
    const NeighborIndex nb = knn(q, src, 6);
    const Tensor g = sample_and_group(f, nb);
    CHECK(g == oracle::gather(f, rows_of(nb)));
    nn::Tape tape(false);
    CHECK(maxpool_group(tape.constant(g)).value() == oracle::maxpool(g));
    const Tensor one = g.reshaped({60, 1, 5});
    CHECK(maxpool_group(tape.constant(one)).value() == g.reshaped({60, 5}));
  }
}

TEST_CASE("idw_interpolate") {
  Rng rng(2);
  SUBCASE("coincident point returns the coarse feature exactly") {
    const Tensor cp = line({0, 1, 2});
    const Tensor cf = Tensor::matrix({{1, -1}, {2, -2}, {3, -3}});
    CHECK(idw_interpolate(cp, cf, line({1.0}), 3) == Tensor::matrix({{2, -2}}));
  }
  SUBCASE("equidistant pair gives the mean") {
    const Tensor cp = line({-1, 1});
    const Tensor cf = Tensor::matrix({{2.0}, {4.0}});
    const Tensor out = idw_interpolate(cp, cf, line({0.0}), 3);
    CHECK(out(0, 0) == doctest::Approx(3.0).epsilon(1e-14));
  }
  SUBCASE("constant features interpolate exactly; weights sum to one") {
    const Tensor cp = random_points(20, rng), fp = random_points(50, rng);
    const IdwStencil st = idw_stencil(cp, fp, 3);
    for (std::size_t i = 0; i < 50; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(st.weights(i, j) >= 0.0);
        s += st.weights(i, j);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const Tensor ones({20, 2}, 7.25);
    const Tensor out = idw_interpolate(cp, ones, fp, 3);
    for (double v : out.storage()) CHECK(std::abs(v - 7.25) < 1e-12);
  }
  SUBCASE("random case matches the hand computation") {
    const Tensor cp = random_points(15, rng), fp = random_points(40, rng);
    const Tensor cf = random_tensor({15, 4}, rng);
    CHECK(nn::max_abs_diff(idw_interpolate(cp, cf, fp, 3), oracle::idw(cp, cf, fp, 3)) < 1e-12);
  }
  SUBCASE("fewer coarse points than k") {
    const Tensor out = idw_interpolate(line({3.0}), Tensor::matrix({{5.0}}), line({0.0, 9.0}), 3);
    CHECK(out == Tensor::matrix({{5.0}, {5.0}}));
  }
  CHECK_THROWS_AS(idw_stencil(Tensor({0, 3}), line({0.0}), 3), ContractError);
}
