#include <cmath>
#include <vector>

#include "doctest.h"
#include "rit/error.hpp"
#include "rit/numerics/gradcheck.hpp"
#include "rit/numerics/layers.hpp"
#include "rit/numerics/ops.hpp"
#include "rit/numerics/weights_io.hpp"
#include "test_support.hpp"

using namespace rit;
using namespace rit::nn;
using rit::testing::naive_matmul;
using rit::testing::random_tensor;

namespace {

LinearLayer fixed_linear(Tensor w) {
  LinearLayer layer;
  layer.weight = Parameter("w", std::move(w));
  return layer;
}

}  // namespace

TEST_CASE("tensor construction validates size and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({1}, std::vector<double>{NAN}), ContractError);
  set_checked_mode(false);
  CHECK_NOTHROW(Tensor({1}, std::vector<double>{INFINITY}));
  set_checked_mode(true);
}

TEST_CASE("linear_forward") {
  Tape tape(false);
  SUBCASE("identity weight") {
    LinearLayer layer = fixed_linear(Tensor::matrix({{1, 0}, {0, 1}}));
    Var y = layer.forward(tape, tape.constant(Tensor::matrix({{1, 2}})));
    CHECK(y.value() == Tensor::matrix({{1, 2}}));
  }
  SUBCASE("diagonal scaling") {
    LinearLayer layer = fixed_linear(Tensor::matrix({{2, 0}, {0, 3}}));
    Var y = layer.forward(tape, tape.constant(Tensor::matrix({{1, 0}, {0, 1}})));
    CHECK(y.value() == Tensor::matrix({{2, 0}, {0, 3}}));
  }
  SUBCASE("width mismatch") {
    LinearLayer layer = fixed_linear(Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK_THROWS_AS(layer.forward(tape, tape.constant(Tensor({1, 3}))), DimensionError);
  }
  SUBCASE("matches triple-loop multiply up to 64x64") {
    Rng rng(7);
    for (std::size_t n : {1u, 4u, 17u, 64u}) {
      Tensor x = random_tensor({n, 64}, rng);
      Tensor w = random_tensor({64, n}, rng);
      Var y = matmul(tape.constant(x), tape.constant(w));
      CHECK(max_abs_diff(y.value(), naive_matmul(x, w)) < 1e-12);
    }
    Tensor x = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({3, 5}, rng);
    CHECK(max_abs_diff(matmul(tape.constant(x), tape.constant(w)).value(), naive_matmul(x, w)) < 1e-12);
  }
}

TEST_CASE("softmax_axis") {
  Tape tape(false);
  CHECK(softmax(tape.constant(Tensor::matrix({{3.5}})), 1).value()[0] == 1.0);
  Tensor half = softmax(tape.constant(Tensor::matrix({{0, 0}})), 1).value();
  CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(half[1] == doctest::Approx(0.5).epsilon(1e-15));
  // exp(-1000) ~ 5.08e-435 underflows binary64, so the exact answer rounds to (1, 0).
  Tensor big = softmax(tape.constant(Tensor::matrix({{1000, 0}})), 1).value();
  CHECK(big[0] == 1.0);
  CHECK(big[1] == 0.0);

  Rng rng(3);
  Tensor x = random_tensor({5, 7, 4}, rng, -20, 20);
  Tensor s = softmax(tape.constant(x), 1).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(s(i, j, c) > 0.0);
        total += s(i, j, c);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  CHECK_THROWS_AS(softmax(tape.constant(x), 3), DimensionError);
}

TEST_CASE("softmax is permutation-equivariant along its axis") {
  Tape tape(false);
  Tensor x = Tensor::matrix({{0.3, -1.2, 2.5, 0.0}});
  Tensor p = Tensor::matrix({{2.5, 0.3, 0.0, -1.2}});
  Tensor sx = softmax(tape.constant(x), 1).value();
  Tensor sp = softmax(tape.constant(p), 1).value();
  CHECK(sx[0] == sp[1]);
  CHECK(sx[1] == sp[3]);
  CHECK(sx[2] == sp[0]);
  CHECK(sx[3] == sp[2]);
}

TEST_CASE("sigmoid") {
  Tape tape(false);
  CHECK(sigmoid(tape.constant(Tensor::scalar(0))).value()[0] == 0.5);
  CHECK(std::abs(sigmoid(tape.constant(Tensor::scalar(1e3))).value()[0] - 1.0) < 1e-12);
  Rng rng(11);
  Tensor x = random_tensor({50}, rng, -30, 30);
  Tensor neg = x;
  for (double& v : neg.storage()) v = -v;
  Tensor a = sigmoid(tape.constant(x)).value();
  Tensor b = sigmoid(tape.constant(neg)).value();
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(a[i] > 0.0);
    CHECK(a[i] < 1.0);
    CHECK(std::abs(b[i] - (1.0 - a[i])) < 1e-12);
  }
}

TEST_CASE("norm_forward") {
  Tape tape(false);
  SUBCASE("layer norm of a constant row gives beta") {
    NormLayer ln("ln", NormKind::layer, 3);
    ln.beta.value = Tensor::vector({0.5, -1, 2});
    Tensor y = ln.forward(tape, tape.constant(Tensor::matrix({{4, 4, 4}})), true).value();
    CHECK(y == Tensor::matrix({{0.5, -1, 2}}));
  }
  SUBCASE("batch norm inference with unit statistics is identity up to eps") {
    NormLayer bn("bn", NormKind::batch, 2);
    Tensor x = Tensor::matrix({{1, -2}, {0.5, 3}});
    Tensor y = bn.forward(tape, tape.constant(x), false).value();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - x[i] / std::sqrt(1.0 + 1e-5)) < 1e-15);
  }
  SUBCASE("training batch norm standardizes every feature") {
    Rng rng(5);
    NormLayer bn("bn", NormKind::batch, 8);
    Tensor x = random_tensor({64, 8}, rng, -3, 7);
    Tensor y = bn.forward(tape, tape.constant(x), true).value();
    for (std::size_t c = 0; c < 8; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t r = 0; r < 64; ++r) m += y(r, c);
      m /= 64;
      for (std::size_t r = 0; r < 64; ++r) v += (y(r, c) - m) * (y(r, c) - m);
      v /= 64;
      CHECK(std::abs(m) < 1e-12);
      CHECK(std::abs(v - 1.0) < 1e-3);
      CHECK(bn.running_var[c] >= 0.0);
    }
  }
  SUBCASE("layer norm rows have zero mean and unit variance") {
    Rng rng(9);
    NormLayer ln("ln", NormKind::layer, 16);
    Tensor y = ln.forward(tape, tape.constant(random_tensor({20, 16}, rng, -5, 5)), true).value();
    for (std::size_t r = 0; r < 20; ++r) {
      double m = 0.0, v = 0.0;
      for (std::size_t c = 0; c < 16; ++c) m += y(r, c);
      m /= 16;
      for (std::size_t c = 0; c < 16; ++c) v += (y(r, c) - m) * (y(r, c) - m);
      v /= 16;
      CHECK(std::abs(m) < 1e-10);
      CHECK(std::abs(v - 1.0) < 1e-3);
    }
  }
  SUBCASE("feature width mismatch") {
    NormLayer ln("ln", NormKind::layer, 3);
    CHECK_THROWS_AS(ln.forward(tape, tape.constant(Tensor({2, 4})), true), DimensionError);
  }
}

TEST_CASE("mlp_forward") {
  Tape tape(false);
  Rng rng(21);
  Tensor x = random_tensor({6, 4}, rng);
  Mlp empty;
  CHECK(empty.forward(tape, tape.constant(x), false).value() == x);

  Mlp ident;
  ident.stages.push_back({LinearLayer("id", 4, 4, false, rng), std::nullopt, Activation::none});
  ident.stages[0].linear.set_identity();
  CHECK(ident.forward(tape, tape.constant(x), false).value() == x);

  Mlp two;
  two.stages.push_back({LinearLayer("a", 4, 5, true, rng), std::nullopt, Activation::relu});
  two.stages.push_back({LinearLayer("b", 5, 3, true, rng), std::nullopt, Activation::none});
  Tensor h = naive_matmul(x, two.stages[0].linear.weight.value);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 5; ++c) h(r, c) = std::max(0.0, h(r, c) + two.stages[0].linear.bias->value[c]);
  Tensor expected = naive_matmul(h, two.stages[1].linear.weight.value);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) expected(r, c) += two.stages[1].linear.bias->value[c];
  CHECK(max_abs_diff(two.forward(tape, tape.constant(x), false).value(), expected) < 1e-12);
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    Parameter x("x", Tensor::matrix({{1, 2}, {3, 4}}));
    Tape tape;
    tape.backward(sum(tape.param(x)));
    CHECK(x.grad == Tensor({2, 2}, 1.0));
    CHECK(tape.size() == 0);
  }
  SUBCASE("half sum of squares gives x") {
    Parameter x("x", Tensor::matrix({{1, -2}, {0.5, 4}}));
    Tape tape;
    Var v = tape.param(x);
    tape.backward(scale(sum(mul(v, v)), 0.5));
    CHECK(x.grad == x.value);
  }
  SUBCASE("non-scalar loss is rejected") {
    Parameter x("x", Tensor::matrix({{1, 2}}));
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.param(x)), ContractError);
  }
}

TEST_CASE("fd_check") {
  Rng rng(1);
  SUBCASE("exact for a linear function") {
    Parameter w("w", random_tensor({3, 2}, rng));
    Tensor x = random_tensor({4, 3}, rng);
    Parameter* params[] = {&w};
    auto report = fd_check([&](Tape& t) { return sum(matmul(t.constant(x), t.param(w))); }, params);
    CHECK(report.max_rel_error < 1e-8);
    CHECK(report.entries_checked == 6);
  }
  SUBCASE("sigmoid-BCE composite") {
    Parameter w("w", random_tensor({3, 1}, rng));
    Tensor x = random_tensor({10, 3}, rng, -2, 2);
    Tensor target({10, 1});
    for (std::size_t i = 0; i < 10; ++i) target[i] = i % 3 == 0 ? 1.0 : 0.0;
    Parameter* params[] = {&w};
    auto report =
        fd_check([&](Tape& t) { return bce_loss(sigmoid(matmul(t.constant(x), t.param(w))), target); }, params);
    CHECK(report.max_rel_error < 1e-4);
  }
  SUBCASE("corrupted analytic gradient is caught") {
    Parameter w("w", random_tensor({3, 2}, rng));
    Tensor x = random_tensor({4, 3}, rng);
    Parameter* params[] = {&w};
    GradCheckOptions opts;
    opts.corrupt_scale = 1.1;
    auto report = fd_check([&](Tape& t) { return sum(matmul(t.constant(x), t.param(w))); }, params, opts);
    CHECK(report.max_rel_error > 1e-4);
  }
}

TEST_CASE("op gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Parameter a("a", random_tensor({3, 4, 5}, rng));
    Parameter b("b", random_tensor({3, 4, 5}, rng));
    Parameter gamma("gamma", random_tensor({5}, rng, 0.5, 1.5));
    Parameter beta("beta", random_tensor({5}, rng));
    Tensor weights = random_tensor({3, 4}, rng, 0, 1);
    std::vector<std::size_t> index = {0, 2, 1, 0, 2, 2, 1, 0, 0, 1, 2, 1};
    Parameter* params[] = {&a, &b, &gamma, &beta};
    auto loss = [&](Tape& t) {
      Var va = t.param(a), vb = t.param(b);
      Var ln = layer_norm(va, t.param(gamma), t.param(beta), 1e-5);
      Var bn = batch_norm_train(vb, t.param(gamma), t.param(beta), 1e-5, nullptr);
      Var soft = softmax(add(ln, scale(bn, 0.7)), 1);
      Var g = gelu(mul(soft, vb));
      Var pooled = sum_neighbors(g);                       // [3, 5]
      Var mx = max_neighbors(sub(va, bn));                 // [3, 5]
      Var cat = concat_cols(pooled, mx);                   // [3, 10]
      Var gathered = gather_rows(cat, index, {3, 4});      // [3, 4, 10]
      Var wg = weighted_gather(cat, index, weights);       // [3, 10]
      Var dots = rowdot(gathered, gathered);               // [3, 4]
      Var nt = matmul_nt(wg, cat);                         // [3, 3]
      return add(sum(sigmoid(nt)), mean(mul(dots, dots)));
    };
    auto report = fd_check(loss, params);
    CHECK_MESSAGE(report.max_rel_error < 1e-4, report.worst_entry);
  }
}

TEST_CASE("loss values") {
  Tape tape(false);
  SUBCASE("bce") {
    Tensor t = Tensor::vector({0, 1, 1});
    CHECK(bce_loss(tape.constant(Tensor::vector({0.5, 0.5, 0.5})), t).value()[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(tape.constant(Tensor::vector({0, 1, 1})), t).value()[0] < 1e-6);
    Tensor p = Tensor::vector({0.2, 0.9, 0.6});
    const double hand = -(std::log(0.8) + std::log(0.9) + std::log(0.6)) / 3.0;
    CHECK(bce_loss(tape.constant(p), t).value()[0] == doctest::Approx(hand).epsilon(1e-12));
  }
  SUBCASE("focal tversky") {
    std::vector<int> labels = {0, 1, 1, 0};
    Tensor perfect = Tensor::matrix({{1, 0}, {0, 1}, {0, 1}, {1, 0}});
    CHECK(focal_tversky_loss(tape.constant(perfect), labels, 0.7, 0.3, 4.0 / 3.0, 0.0).value()[0] < 1e-4);
    Tensor wrong = Tensor::matrix({{0, 1}, {1, 0}, {1, 0}, {0, 1}});
    CHECK(focal_tversky_loss(tape.constant(wrong), labels, 0.7, 0.3, 4.0 / 3.0, 0.0).value()[0] ==
          doctest::Approx(2.0).epsilon(1e-12));
    // Soft case by hand: class 0 TP=0.8+0.6, FN=0.2+0.4, FP=0.3+0.1.
    Tensor soft = Tensor::matrix({{0.8, 0.2}, {0.3, 0.7}, {0.1, 0.9}, {0.6, 0.4}});
    const double ti0 = 1.4 / (1.4 + 0.7 * 0.6 + 0.3 * 0.4);
    const double ti1 = 1.6 / (1.6 + 0.7 * 0.4 + 0.3 * 0.6);
    const double hand = std::pow(1 - ti0, 0.75) + std::pow(1 - ti1, 0.75);
    CHECK(focal_tversky_loss(tape.constant(soft), labels, 0.7, 0.3, 4.0 / 3.0, 0.0).value()[0] ==
          doctest::Approx(hand).epsilon(1e-12));
  }
  SUBCASE("offset l1") {
    Tensor target = Tensor::matrix({{1, 1, 0}, {1, 1, 0}});
    CHECK(offset_l1_loss(tape.constant(target), target).value()[0] == 0.0);
    CHECK(offset_l1_loss(tape.constant(Tensor({2, 3})), target).value()[0] == 2.0);
  }
}

TEST_CASE("weight container round-trips bit-exactly") {
  Rng rng(99);
  std::vector<WeightEntry> entries = {
      {"safe.wq.weight", DType::f64, random_tensor({16, 32}, rng)},
      {"block0.attn.wk.bias", DType::f32, Tensor({3}, std::vector<double>{0.5, -0.25, 1024.0})},
      {"scalar", DType::f64, Tensor::scalar(3.141592653589793)},
      {"empty", DType::f64, Tensor({0, 4})},
  };
  const auto bytes = encode_weights(entries);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RITW");
  const auto decoded = decode_weights(bytes);
  REQUIRE(decoded.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(decoded[i].name == entries[i].name);
    CHECK(decoded[i].dtype == entries[i].dtype);
    CHECK(decoded[i].tensor == entries[i].tensor);
  }
  CHECK(encode_weights(decoded) == bytes);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_weights(truncated), ParseError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_weights(bad_magic), ParseError);
}
