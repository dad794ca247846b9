#include "rit/numerics/layers.hpp"

#include <cmath>

#include "rit/error.hpp"

namespace rit::nn {

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const Parameter* p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

Parameter* ParameterSet::find(const std::string& name) const {
  for (Parameter* p : params_)
    if (p->name == name) return p;
  return nullptr;
}

LinearLayer::LinearLayer(const std::string& name, std::size_t in_dim, std::size_t out_dim, bool with_bias,
                         Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(in_dim, 1)));
  Tensor w({in_dim, out_dim});
  for (double& v : w.storage()) v = rng.uniform(-bound, bound);
  weight = Parameter(name + ".weight", std::move(w));
  if (with_bias) {
    Tensor b({out_dim});
    for (double& v : b.storage()) v = rng.uniform(-bound, bound);
    bias = Parameter(name + ".bias", std::move(b));
  }
}

Var LinearLayer::forward(Tape& tape, const Var& x) {
  if (x.value().cols() != in_dim()) {
    throw DimensionError(weight.name + ": input width " + std::to_string(x.value().cols()) + ", expected " +
                         std::to_string(in_dim()));
  }
  Var y = matmul(x, tape.param(weight));
  if (bias) y = add_row(y, tape.param(*bias));
  return y;
}

void LinearLayer::collect(ParameterSet& set) {
  set.add(weight);
  if (bias) set.add(*bias);
}

void LinearLayer::set_identity() {
  RIT_EXPECT(in_dim() == out_dim(), DimensionError, "set_identity on non-square linear layer");
  weight.value = Tensor(weight.value.shape());
  for (std::size_t i = 0; i < in_dim(); ++i) weight.value(i, i) = 1.0;
  if (bias) bias->value = Tensor(bias->value.shape());
}

void LinearLayer::set_zero() {
  weight.value = Tensor(weight.value.shape());
  if (bias) bias->value = Tensor(bias->value.shape());
}

NormLayer::NormLayer(const std::string& name_, NormKind kind_, std::size_t dim, double eps_, double momentum_)
    : kind(kind_),
      gamma(name_ + ".gamma", Tensor({dim}, 1.0)),
      beta(name_ + ".beta", Tensor({dim})),
      eps(eps_),
      momentum(momentum_),
      name(name_) {
  RIT_EXPECT(eps > 0.0, ContractError, "norm eps must be positive");
  RIT_EXPECT(momentum > 0.0 && momentum < 1.0, ContractError, "norm momentum must lie in (0, 1)");
  if (kind == NormKind::batch) {
    running_mean = Tensor({dim});
    running_var = Tensor({dim}, 1.0);
  }
}

Var NormLayer::forward(Tape& tape, const Var& x, bool training) {
  if (x.value().cols() != gamma.value.size()) {
    throw DimensionError(name + ": feature width " + std::to_string(x.value().cols()) + ", expected " +
                         std::to_string(gamma.value.size()));
  }
  Var g = tape.param(gamma);
  Var b = tape.param(beta);
  if (kind == NormKind::layer) return layer_norm(x, g, b, eps);
  if (!training) return batch_norm_eval(x, g, b, running_mean, running_var, eps);

  BatchStats stats;
  Var y = batch_norm_train(x, g, b, eps, &stats);
  const std::size_t n = x.value().size() / std::max<std::size_t>(x.value().cols(), 1);
  if (n > 0) {
    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    for (std::size_t c = 0; c < running_mean.size(); ++c) {
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * stats.mean[c];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * stats.var[c] * unbias;
    }
  }
  return y;
}

void NormLayer::collect(ParameterSet& set) {
  set.add(gamma);
  set.add(beta);
  if (kind == NormKind::batch) {
    set.add_buffer(name + ".running_mean", running_mean);
    set.add_buffer(name + ".running_var", running_var);
  }
}

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::relu:
      return relu(x);
    case Activation::gelu:
      return gelu(x);
    case Activation::none:
      break;
  }
  return x;
}

Var Mlp::forward(Tape& tape, const Var& x, bool training) {
  Var y = x;
  for (MlpStage& stage : stages) {
    y = stage.linear.forward(tape, y);
    if (stage.norm) y = stage.norm->forward(tape, y, training);
    y = activate(y, stage.activation);
  }
  return y;
}

void Mlp::collect(ParameterSet& set) {
  for (MlpStage& stage : stages) {
    stage.linear.collect(set);
    if (stage.norm) stage.norm->collect(set);
  }
}

}  // namespace rit::nn
