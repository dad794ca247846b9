#include "rit/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rit/error.hpp"

namespace rit::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapMat as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tape& same_tape(const Var& a, const Var& b) {
  RIT_EXPECT(&a.tape() == &b.tape(), ContractError, "operands recorded on different tapes");
  return a.tape();
}

std::size_t row_count(const Tensor& t) { return t.cols() == 0 ? 0 : t.size() / t.cols(); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// -- linear algebra ---------------------------------------------------------

Var matmul(const Var& x, const Var& w) {
  Tape& tape = same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xv.cols() != wv.dim(0)) {
    throw DimensionError("matmul: input width " + std::to_string(xv.cols()) + " vs weight " +
                         shape_string(wv.shape()));
  }
  const std::size_t n = row_count(xv), k = wv.dim(0), m = wv.dim(1);
  Shape out_shape = xv.shape();
  out_shape.back() = m;
  Tensor out(out_shape);
  if (n > 0) as_mat(out, n, m).noalias() = as_mat(xv, n, k) * as_mat(wv, k, m);
  const std::size_t xi = x.id(), wi = w.id();
  return tape.push(std::move(out), x.requires_grad() || w.requires_grad(),
                   [xi, wi, n, k, m](Tape& t, const Tensor& g, const Tensor&) {
                     if (n == 0) return;
                     const auto gm = as_mat(g, n, m);
                     if (t.requires_grad(xi)) {
                       as_mat(t.grad(xi), n, k).noalias() += gm * as_mat(t.value(wi), k, m).transpose();
                     }
                     if (t.requires_grad(wi)) {
                       as_mat(t.grad(wi), k, m).noalias() += as_mat(t.value(xi), n, k).transpose() * gm;
                     }
                   });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    throw DimensionError("matmul_nt: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  const std::size_t n = av.dim(0), m = bv.dim(0), d = av.dim(1);
  Tensor out({n, m});
  if (n > 0 && m > 0) as_mat(out, n, m).noalias() = as_mat(av, n, d) * as_mat(bv, m, d).transpose();
  const std::size_t ai = a.id(), bi = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ai, bi, n, m, d](Tape& t, const Tensor& g, const Tensor&) {
                     if (n == 0 || m == 0) return;
                     const auto gm = as_mat(g, n, m);
                     if (t.requires_grad(ai)) as_mat(t.grad(ai), n, d).noalias() += gm * as_mat(t.value(bi), m, d);
                     if (t.requires_grad(bi)) {
                       as_mat(t.grad(bi), m, d).noalias() += gm.transpose() * as_mat(t.value(ai), n, d);
                     }
                   });
}

Var add_row(const Var& x, const Var& bias) {
  Tape& tape = same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_row: bias length " + std::to_string(bv.size()) + " vs width " +
                         std::to_string(xv.cols()));
  }
  Tensor out = xv;
  const std::size_t d = xv.cols(), n = row_count(xv);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bv[c];
  const std::size_t xi = x.id(), bi = bias.id();
  return tape.push(std::move(out), x.requires_grad() || bias.requires_grad(),
                   [xi, bi, n, d](Tape& t, const Tensor& g, const Tensor&) {
                     if (t.requires_grad(xi)) accumulate(t.grad(xi), g);
                     if (t.requires_grad(bi)) {
                       Tensor& gb = t.grad(bi);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
                     }
                   });
}

Var rowdot(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "rowdot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t d = av.cols(), n = row_count(av);
  Shape out_shape(av.shape().begin(), av.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += av[r * d + c] * bv[r * d + c];
    out[r] = s;
  }
  const std::size_t ai = a.id(), bi = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ai, bi, n, d](Tape& t, const Tensor& g, const Tensor&) {
                     if (t.requires_grad(ai)) {
                       Tensor& ga = t.grad(ai);
                       const Tensor& bv = t.value(bi);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += g[r] * bv[r * d + c];
                     }
                     if (t.requires_grad(bi)) {
                       Tensor& gb = t.grad(bi);
                       const Tensor& av = t.value(ai);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < d; ++c) gb[r * d + c] += g[r] * av[r * d + c];
                     }
                   });
}

// -- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  accumulate(out, b.value());
  const std::size_t ai = a.id(), bi = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(), [ai, bi](Tape& t, const Tensor& g, const Tensor&) {
    if (t.requires_grad(ai)) accumulate(t.grad(ai), g);
    if (t.requires_grad(bi)) accumulate(t.grad(bi), g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(), [ai, bi](Tape& t, const Tensor& g, const Tensor&) {
    if (t.requires_grad(ai)) accumulate(t.grad(ai), g);
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(), [ai, bi](Tape& t, const Tensor& g, const Tensor&) {
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad(ai);
      const Tensor& bv = t.value(bi);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      const Tensor& av = t.value(ai);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (double& v : out.storage()) v *= c;
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi, c](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * g[i];
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  if (x.tape().branch_tracking())
    for (double v : out.storage()) x.tape().note_branch(v > 0.0);
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad(xi);
    const Tensor& xv = t.value(xi);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad(xi);
    const Tensor& xv = t.value(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}


Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = sigmoid_scalar(v);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

// -- reductions and reshaping -------------------------------------------------

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xi = x.id();
  return x.tape().push(Tensor::scalar(s), x.requires_grad(), [xi](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad(xi);
    for (double& v : gx.storage()) v += g[0];
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  if (n == 0) return x.tape().constant(Tensor::scalar(0.0));
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var softmax(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  RIT_EXPECT(axis < xv.rank(), DimensionError,
             "softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(xv.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= xv.dim(a);
  for (std::size_t a = axis + 1; a < xv.rank(); ++a) inner *= xv.dim(a);
  const std::size_t len = xv.dim(axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(),
                       [xi, outer, inner, len](Tape& t, const Tensor& g, const Tensor& y) {
                         Tensor& gx = t.grad(xi);
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t in = 0; in < inner; ++in) {
                             const std::size_t base = o * len * inner + in;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
                             for (std::size_t j = 0; j < len; ++j) {
                               const std::size_t idx = base + j * inner;
                               gx[idx] += y[idx] * (g[idx] - dot);
                             }
                           }
                         }
                       });
}

Var sum_neighbors(const Var& x) {
  const Tensor& xv = x.value();
  RIT_EXPECT(xv.rank() == 3, DimensionError, "sum_neighbors expects [N, k, D], got " + shape_string(xv.shape()));
  const std::size_t n = xv.dim(0), k = xv.dim(1), d = xv.dim(2);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += xv[(i * k + j) * d + c];
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi, n, k, d](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < d; ++c) gx[(i * k + j) * d + c] += g[i * d + c];
  });
}

Var max_neighbors(const Var& x) {
  const Tensor& xv = x.value();
  RIT_EXPECT(xv.rank() == 3, DimensionError, "max_neighbors expects [N, k, D], got " + shape_string(xv.shape()));
  const std::size_t n = xv.dim(0), k = xv.dim(1), d = xv.dim(2);
  RIT_EXPECT(k >= 1, ContractError, "max_neighbors: empty neighbor axis");
  Tensor out({n, d});
  std::vector<std::size_t> arg(n * d, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t best = 0;
      double bv = xv[(i * k) * d + c];
      for (std::size_t j = 1; j < k; ++j) {
        const double v = xv[(i * k + j) * d + c];
        if (v > bv) {
          bv = v;
          best = j;
        }
      }
      out[i * d + c] = bv;
      arg[i * d + c] = best;
    }
  }
  if (x.tape().branch_tracking())
    for (std::size_t a : arg) x.tape().note_branch(a);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(),
                       [xi, n, k, d, arg = std::move(arg)](Tape& t, const Tensor& g, const Tensor&) {
                         Tensor& gx = t.grad(xi);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t c = 0; c < d; ++c) gx[(i * k + arg[i * d + c]) * d + c] += g[i * d + c];
                       });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi](Tape& t, const Tensor& g, const Tensor&) {
    accumulate(t.grad(xi), g);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  RIT_EXPECT(av.rank() == 2 && bv.rank() == 2 && av.dim(0) == bv.dim(0), DimensionError,
             "concat_cols: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  const std::size_t n = av.dim(0), d1 = av.dim(1), d2 = bv.dim(1);
  Tensor out({n, d1 + d2});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(&av.storage()[i * d1], d1, &out.storage()[i * (d1 + d2)]);
    std::copy_n(&bv.storage()[i * d2], d2, &out.storage()[i * (d1 + d2) + d1]);
  }
  const std::size_t ai = a.id(), bi = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ai, bi, n, d1, d2](Tape& t, const Tensor& g, const Tensor&) {
                     if (t.requires_grad(ai)) {
                       Tensor& ga = t.grad(ai);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t c = 0; c < d1; ++c) ga[i * d1 + c] += g[i * (d1 + d2) + c];
                     }
                     if (t.requires_grad(bi)) {
                       Tensor& gb = t.grad(bi);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t c = 0; c < d2; ++c) gb[i * d2 + c] += g[i * (d1 + d2) + d1 + c];
                     }
                   });
}

// -- indexing -----------------------------------------------------------------

Var gather_rows(const Var& x, std::span<const std::size_t> index, Shape lead) {
  const Tensor& xv = x.value();
  RIT_EXPECT(xv.rank() == 2, DimensionError, "gather_rows expects [S, D], got " + shape_string(xv.shape()));
  RIT_EXPECT(shape_size(lead) == index.size(), DimensionError, "gather_rows: index count does not match shape");
  const std::size_t s = xv.dim(0), d = xv.dim(1);
  Shape out_shape = std::move(lead);
  out_shape.push_back(d);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= s) {
      throw ContractError("gather_rows: index " + std::to_string(index[r]) + " out of range [0, " +
                          std::to_string(s) + ")");
    }
    std::copy_n(&xv.storage()[index[r] * d], d, &out.storage()[r * d]);
  }
  const std::size_t xi = x.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape().push(std::move(out), x.requires_grad(),
                       [xi, d, idx = std::move(idx)](Tape& t, const Tensor& g, const Tensor&) {
                         Tensor& gx = t.grad(xi);
                         for (std::size_t r = 0; r < idx.size(); ++r)
                           for (std::size_t c = 0; c < d; ++c) gx[idx[r] * d + c] += g[r * d + c];
                       });
}

Var weighted_gather(const Var& x, std::span<const std::size_t> index, const Tensor& weights) {
  const Tensor& xv = x.value();
  RIT_EXPECT(xv.rank() == 2, DimensionError, "weighted_gather expects [S, D], got " + shape_string(xv.shape()));
  RIT_EXPECT(weights.rank() == 2 && weights.size() == index.size(), DimensionError,
             "weighted_gather: weights must be [N, k] matching the index");
  const std::size_t s = xv.dim(0), d = xv.dim(1), n = weights.dim(0), k = weights.dim(1);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = index[i * k + j];
      RIT_EXPECT(src < s, ContractError, "weighted_gather: index out of range");
      const double w = weights[i * k + j];
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += w * xv[src * d + c];
    }
  }
  const std::size_t xi = x.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape().push(std::move(out), x.requires_grad(),
                       [xi, n, k, d, idx = std::move(idx), weights](Tape& t, const Tensor& g, const Tensor&) {
                         Tensor& gx = t.grad(xi);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < k; ++j) {
                             const double w = weights[i * k + j];
                             for (std::size_t c = 0; c < d; ++c) gx[idx[i * k + j] * d + c] += w * g[i * d + c];
                           }
                       });
}

// -- normalization ------------------------------------------------------------

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& tape = same_tape(x, gamma);
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols(), n = row_count(xv);
  RIT_EXPECT(gamma.value().size() == d && beta.value().size() == d, DimensionError,
             "layer_norm: gamma/beta width does not match features");
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xv[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double z = xv[r * d + c] - mu;
      var += z * z;
    }
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xv[r * d + c] - mu) * inv_std[r];
      xhat[r * d + c] = h;
      out[r * d + c] = gv[c] * h + bv[c];
    }
  }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return tape.push(
      std::move(out), x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [xi, gi, bi, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g,
                                                                               const Tensor&) {
        if (t.requires_grad(gi)) {
          Tensor& gg = t.grad(gi);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * xhat[r * d + c];
        }
        if (t.requires_grad(bi)) {
          Tensor& gb = t.grad(bi);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
        }
        if (t.requires_grad(xi)) {
          Tensor& gx = t.grad(xi);
          const Tensor& gv = t.value(gi);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < n; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = g[r * d + c] * gv[c];
              s1 += gh;
              s2 += gh * xhat[r * d + c];
            }
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = g[r * d + c] * gv[c];
              gx[r * d + c] += inv_std[r] * (gh - inv_d * s1 - xhat[r * d + c] * inv_d * s2);
            }
          }
        }
      });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchStats* stats) {
  Tape& tape = same_tape(x, gamma);
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols(), n = row_count(xv);
  RIT_EXPECT(gamma.value().size() == d && beta.value().size() == d, DimensionError,
             "batch_norm: gamma/beta width does not match features");
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor mu({d}), var({d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mu[c] += xv[r * d + c];
  for (std::size_t c = 0; c < d; ++c) mu[c] /= static_cast<double>(std::max<std::size_t>(n, 1));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double z = xv[r * d + c] - mu[c];
      var[c] += z * z;
    }
  for (std::size_t c = 0; c < d; ++c) var[c] /= static_cast<double>(std::max<std::size_t>(n, 1));
  std::vector<double> inv_std(d);
  for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xv[r * d + c] - mu[c]) * inv_std[c];
      xhat[r * d + c] = h;
      out[r * d + c] = gv[c] * h + bv[c];
    }
  if (stats) {
    stats->mean = mu;
    stats->var = var;
  }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return tape.push(
      std::move(out), x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [xi, gi, bi, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g,
                                                                               const Tensor&) {
        std::vector<double> s1(d, 0.0), s2(d, 0.0);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            s1[c] += g[r * d + c];
            s2[c] += g[r * d + c] * xhat[r * d + c];
          }
        if (t.requires_grad(gi)) {
          Tensor& gg = t.grad(gi);
          for (std::size_t c = 0; c < d; ++c) gg[c] += s2[c];
        }
        if (t.requires_grad(bi)) {
          Tensor& gb = t.grad(bi);
          for (std::size_t c = 0; c < d; ++c) gb[c] += s1[c];
        }
        if (t.requires_grad(xi) && n > 0) {
          Tensor& gx = t.grad(xi);
          const Tensor& gv = t.value(gi);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) {
              gx[r * d + c] +=
                  gv[c] * inv_std[c] * (g[r * d + c] - inv_n * s1[c] - xhat[r * d + c] * inv_n * s2[c]);
            }
        }
      });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                    double eps) {
  Tape& tape = same_tape(x, gamma);
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols(), n = row_count(xv);
  RIT_EXPECT(gamma.value().size() == d && mean.size() == d && var.size() == d, DimensionError,
             "batch_norm: statistics width does not match features");
  std::vector<double> inv_std(d);
  for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = gv[c] * (xv[r * d + c] - mean[c]) * inv_std[c] + bv[c];
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return tape.push(std::move(out), x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
                   [xi, gi, bi, n, d, mean, inv_std = std::move(inv_std)](Tape& t, const Tensor& g, const Tensor&) {
                     const Tensor& xv = t.value(xi);
                     const Tensor& gv = t.value(gi);
                     if (t.requires_grad(gi)) {
                       Tensor& gg = t.grad(gi);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < d; ++c)
                           gg[c] += g[r * d + c] * (xv[r * d + c] - mean[c]) * inv_std[c];
                     }
                     if (t.requires_grad(bi)) {
                       Tensor& gb = t.grad(bi);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
                     }
                     if (t.requires_grad(xi)) {
                       Tensor& gx = t.grad(xi);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r * d + c] * gv[c] * inv_std[c];
                     }
                   });
}

// -- losses -------------------------------------------------------------------

Var bce_loss(const Var& pred, const Tensor& target, double clamp) {
  const Tensor& pv = pred.value();
  RIT_EXPECT(pv.size() == target.size(), DimensionError,
             "bce_loss: prediction " + shape_string(pv.shape()) + " vs target " + shape_string(target.shape()));
  const std::size_t n = pv.size();
  if (n == 0) return pred.tape().constant(Tensor::scalar(0.0));
  double total = 0.0;
  if (pred.tape().branch_tracking())
    for (std::size_t i = 0; i < n; ++i) pred.tape().note_branch(pv[i] < clamp ? 0 : (pv[i] > 1.0 - clamp ? 2 : 1));
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(pv[i], clamp, 1.0 - clamp);
    total -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  const std::size_t pi = pred.id();
  return pred.tape().push(Tensor::scalar(total / static_cast<double>(n)), pred.requires_grad(),
                          [pi, n, clamp, target](Tape& t, const Tensor& g, const Tensor&) {
                            Tensor& gp = t.grad(pi);
                            const Tensor& pv = t.value(pi);
                            const double scale_n = g[0] / static_cast<double>(n);
                            for (std::size_t i = 0; i < n; ++i) {
                              if (pv[i] < clamp || pv[i] > 1.0 - clamp) continue;
                              const double p = pv[i];
                              gp[i] += scale_n * (-target[i] / p + (1.0 - target[i]) / (1.0 - p));
                            }
                          });
}

Var focal_tversky_loss(const Var& probs, std::span<const int> labels, double alpha, double beta, double gamma,
                       double smooth) {
  const Tensor& pv = probs.value();
  RIT_EXPECT(pv.rank() == 2 && pv.dim(0) == labels.size(), DimensionError,
             "focal_tversky_loss: probabilities must be [N, C] with N labels");
  const std::size_t n = pv.dim(0), classes = pv.dim(1);
  constexpr double kFloor = 1e-7;
  const double power = 1.0 / gamma;
  // Per class: soft TP, FN, FP and d(loss)/d(TI).
  std::vector<double> tp(classes, 0.0), fn(classes, 0.0), fp(classes, 0.0), dti(classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    RIT_EXPECT(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < classes, ContractError,
               "focal_tversky_loss: label out of range");
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = pv[i * classes + c];
      const double y = static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0;
      tp[c] += p * y;
      fn[c] += (1.0 - p) * y;
      fp[c] += p * (1.0 - y);
    }
  }
  double loss = 0.0;
  std::vector<double> denom(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    denom[c] = std::max(tp[c] + alpha * fn[c] + beta * fp[c] + smooth, kFloor);
    const double ti = (tp[c] + smooth) / denom[c];
    const double gap = 1.0 - ti;
    if (probs.tape().branch_tracking()) probs.tape().note_branch(gap > kFloor);
    if (gap > kFloor) {
      loss += std::pow(gap, power);
      dti[c] = -power * std::pow(gap, power - 1.0);
    } else {
      loss += std::pow(kFloor, power);
    }
  }
  const std::size_t pi = probs.id();
  std::vector<int> lab(labels.begin(), labels.end());
  return probs.tape().push(
      Tensor::scalar(loss), probs.requires_grad(),
      [pi, n, classes, alpha, beta, smooth, tp, denom, dti, lab = std::move(lab)](Tape& t, const Tensor& g,
                                                                                  const Tensor&) {
        Tensor& gp = t.grad(pi);
        for (std::size_t c = 0; c < classes; ++c) {
          if (dti[c] == 0.0) continue;
          const double num = tp[c] + smooth;
          const double den2 = denom[c] * denom[c];
          for (std::size_t i = 0; i < n; ++i) {
            const double y = static_cast<std::size_t>(lab[i]) == c ? 1.0 : 0.0;
            // TI = num / den; dnum/dp = y; dden/dp = y - alpha y + beta (1 - y)
            const double dnum = y;
            const double dden = y - alpha * y + beta * (1.0 - y);
            const double dti_dp = (dnum * denom[c] - num * dden) / den2;
            gp[i * classes + c] += g[0] * dti[c] * dti_dp;
          }
        }
      });
}

Var offset_l1_loss(const Var& offsets, const Tensor& target) {
  const Tensor& ov = offsets.value();
  RIT_EXPECT(ov.shape() == target.shape(), DimensionError,
             "offset_l1_loss: offsets " + shape_string(ov.shape()) + " vs target " + shape_string(target.shape()));
  const std::size_t n = ov.rows();
  if (n == 0) return offsets.tape().constant(Tensor::scalar(0.0));
  double total = 0.0;
  for (std::size_t i = 0; i < ov.size(); ++i) total += std::abs(ov[i] - target[i]);
  if (offsets.tape().branch_tracking())
    for (std::size_t i = 0; i < ov.size(); ++i) offsets.tape().note_branch(ov[i] > target[i]);
  const std::size_t oi = offsets.id();
  return offsets.tape().push(Tensor::scalar(total / static_cast<double>(n)), offsets.requires_grad(),
                             [oi, n, target](Tape& t, const Tensor& g, const Tensor&) {
                               Tensor& go = t.grad(oi);
                               const Tensor& ov = t.value(oi);
                               const double s = g[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < go.size(); ++i) {
                                 const double diff = ov[i] - target[i];
                                 go[i] += diff > 0.0 ? s : (diff < 0.0 ? -s : 0.0);
                               }
                             });
}

}  // namespace rit::nn
