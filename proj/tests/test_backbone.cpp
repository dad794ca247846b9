#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "rit/backbone/backbone.hpp"
#include "rit/error.hpp"
#include "rit/numerics/gradcheck.hpp"
#include "test_support.hpp"

using namespace rit;
using namespace rit::backbone;
using rit::testing::random_points;
using rit::testing::random_tensor;

namespace {

Tensor eval_mlp(Mlp& m, const Tensor& x) {
  nn::Tape tape(false);
  return m.forward(tape, tape.constant(x), false).value();
}

void zero_all(Mlp& m) {
  ParameterSet set;
  m.collect(set);
  for (nn::Parameter* p : set.params()) p->value = Tensor(p->value.shape());
}

BackboneConfig mini(std::vector<std::size_t> widths, std::vector<std::size_t> blocks, std::size_t s1_pre) {
  BackboneConfig cfg;
  cfg.widths = std::move(widths);
  cfg.blocks = std::move(blocks);
  cfg.s1_pre = s1_pre;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(BackboneConfig{}.validate());
  CHECK_THROWS_AS(mini({16, 24}, {1, 1}, 1).validate(), ContractError);
  CHECK_THROWS_AS(mini({16, 32}, {1}, 1).validate(), ContractError);
  CHECK_THROWS_AS(mini({16, 32}, {1, 1}, 2).validate(), ContractError);
  CHECK_THROWS_AS(mini({16, 32}, {1, 0}, 1).validate(), ContractError);
}

TEST_CASE("downsample") {
  Rng rng(1);
  SUBCASE("single point stays single, width doubles") {
    Mlp proj = make_linear_norm("d", 6, 12, rng);
    nn::Tape tape(false);
    StageState s{random_points(1, rng), tape.constant(random_tensor({1, 6}, rng)), {}};
    const StageState out = downsample(tape, s, proj, 12, false);
    CHECK(out.points.dim(0) == 1);
    CHECK(out.features.shape() == nn::Shape{1, 12});
  }
  SUBCASE("eight points: FPS oracle and max over projected neighbors") {
    Mlp proj = make_linear_norm("d", 4, 8, rng);
    const Tensor pts = random_points(8, rng), x = random_tensor({8, 4}, rng);
    nn::Tape tape(false);
    const StageState out = downsample(tape, StageState{pts, tape.constant(x), {}}, proj, 3, false);
    CHECK(out.parent == oracle::fps(pts, 4, 0));
    CHECK(out.points == sampling::select_rows(pts, out.parent));
    const Tensor h = eval_mlp(proj, x);
    const Tensor expected = oracle::maxpool(oracle::gather(h, oracle::knn(out.points, pts, 3)));
    CHECK(nn::max_abs_diff(out.features.value(), expected) == 0.0);
  }
  SUBCASE("width chain") {
    const Tensor pts = random_points(40, rng);
    nn::Tape tape(false);
    StageState s{pts, tape.constant(random_tensor({40, 48}, rng)), {}};
    std::size_t n = 40;
    for (std::size_t w : {48, 96, 192}) {
      Mlp proj = make_linear_norm("d", w, 2 * w, rng);
      s = downsample(tape, s, proj, 12, false);
      n = (n + 1) / 2;
      CHECK(s.features.shape() == nn::Shape{n, 2 * w});
    }
  }
}

TEST_CASE("upsample") {
  Rng rng(2);
  Mlp coarse_proj = make_linear_norm("c", 8, 4, rng);
  Mlp fine_proj = make_linear_norm("f", 4, 4, rng);
  SUBCASE("random case matches linear -> IDW -> add") {
    const Tensor cp = random_points(6, rng), fp = random_points(13, rng);
    const Tensor cx = random_tensor({6, 8}, rng), fx = random_tensor({13, 4}, rng);
    nn::Tape tape(false);
    const Tensor out =
        upsample(tape, {cp, tape.constant(cx), {}}, {fp, tape.constant(fx), {}}, coarse_proj, fine_proj, 3, false)
            .value();
    const Tensor interp = oracle::idw(cp, eval_mlp(coarse_proj, cx), fp, 3);
    const Tensor fine = eval_mlp(fine_proj, fx);
    Tensor expected({13, 4});
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] = fx[i] + fine[i] + interp[i];
    CHECK(nn::max_abs_diff(out, expected) < 1e-12);
  }
  SUBCASE("single coarse point broadcasts") {
    zero_all(fine_proj);
    const Tensor cp = random_points(1, rng), fp = random_points(5, rng);
    const Tensor cx = random_tensor({1, 8}, rng);
    nn::Tape tape(false);
    const Tensor out = upsample(tape, {cp, tape.constant(cx), {}}, {fp, tape.constant(Tensor({5, 4})), {}},
                                coarse_proj, fine_proj, 3, false)
                           .value();
    const Tensor c = eval_mlp(coarse_proj, cx);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(out(i, j) == c(0, j));
  }
}

TEST_CASE("backbone_forward") {
  Rng rng(3);
  SUBCASE("full resolution for any N") {
    Backbone net(mini({16, 32, 64, 128}, {2, 2, 1, 1}, 1), 48, rng);
    for (std::size_t n : {0, 1, 7, 100}) {
      nn::Tape tape(false);
      const Tensor pts = random_points(n, rng);
      const Tensor out = net.forward(tape, tape.constant(random_tensor({n, 48}, rng)), pts, true).value();
      CHECK(out.shape() == nn::Shape{n, 16});
      CHECK(out.all_finite());
    }
  }
  SUBCASE("default widths keep 48 at S1") {
    Backbone net(BackboneConfig{}, 48, rng);
    CHECK_FALSE(net.stem.has_value());
    nn::Tape tape(false);
    const Tensor pts = random_points(20, rng);
    CHECK(net.forward(tape, tape.constant(random_tensor({20, 48}, rng)), pts, false).shape() == nn::Shape{20, 48});
  }
  SUBCASE("zeroed non-residual paths give the identity") {
    Backbone net(mini({8, 16, 32}, {2, 1, 1}, 1), 8, rng);
    for (auto& s : net.stages)
      for (auto& b : s) b.zero_residual();
    for (auto& m : net.up_coarse) zero_all(m);
    for (auto& m : net.up_fine) zero_all(m);
    const Tensor pts = random_points(25, rng), x = random_tensor({25, 8}, rng);
    nn::Tape tape(false);
    CHECK(net.forward(tape, tape.constant(x), pts, true).value() == x);
  }
  SUBCASE("removing S1 blocks is expressible") {
    Backbone net(mini({8, 16}, {0, 1}, 0), 8, rng);
    CHECK(net.stages[0].empty());
    nn::Tape tape(false);
    const Tensor pts = random_points(9, rng);
    CHECK(net.forward(tape, tape.constant(random_tensor({9, 8}, rng)), pts, true).shape() == nn::Shape{9, 8});
  }
  SUBCASE("gradients through a two-stage miniature") {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      Rng r(seed);
      BackboneConfig cfg = mini({4, 8}, {2, 1}, 1);
      cfg.k = 4;
      Backbone net(cfg, 5, r);
      ParameterSet set;
      net.collect(set);
      rit::testing::randomize_affine(set, r);
      const Tensor pts = random_points(10, r, 2.0), x = random_tensor({10, 5}, r), proj = random_tensor({10, 4}, r);
      auto loss = [&](nn::Tape& t) {
        return nn::sum(nn::mul(net.forward(t, t.constant(x), pts, true), t.constant(proj)));
      };
      const auto report = nn::fd_check(loss, set.params());
      CHECK_MESSAGE(report.max_rel_error < 1e-4, report.worst_entry);
    }
  }
}
