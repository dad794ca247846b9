#include "rit/numerics/optim.hpp"

#include <cmath>
#include <map>

#include "rit/error.hpp"

namespace rit::nn {

double StepSchedule::lr_at(double base_lr, std::size_t epoch, std::size_t total_epochs) const {
  double lr = base_lr;
  for (double m : milestones)
    if (static_cast<double>(epoch) >= m * static_cast<double>(total_epochs)) lr /= factor;
  return lr;
}

Optimizer::Optimizer(OptimizerConfig cfg, const ParameterSet& params) : cfg_(cfg), params_(params.params()) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

double grad_norm(const ParameterSet& params) {
  double s = 0.0;
  for (const Parameter* p : params.params())
    for (std::size_t k = 0; k < p->grad.size(); ++k) s += p->grad[k] * p->grad[k];
  return std::sqrt(s);
}

void Optimizer::step(double lr) {
  ++steps_;
  double clip = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double s = 0.0;
    for (const Parameter* p : params_)
      for (std::size_t k = 0; k < p->grad.size(); ++k) s += p->grad[k] * p->grad[k];
    const double norm = std::sqrt(s);
    if (norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
  }
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t), bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.size() != p.value.size()) continue;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      double g = p.grad[k] * clip;
      if (cfg_.kind == OptimizerKind::adamw) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
        p.value[k] -= lr * (update + cfg_.weight_decay * p.value[k]);
      } else {
        g += cfg_.weight_decay * p.value[k];
        m[k] = cfg_.beta1 * m[k] + g;
        p.value[k] -= lr * m[k];
      }
    }
  }
}

std::vector<WeightEntry> Optimizer::state() const {
  std::vector<WeightEntry> out;
  Tensor steps({1});
  steps[0] = static_cast<double>(steps_);
  out.push_back({"optim.steps", DType::f64, steps});
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"optim.m." + params_[i]->name, DType::f64, m_[i]});
    out.push_back({"optim.v." + params_[i]->name, DType::f64, v_[i]});
  }
  return out;
}

void Optimizer::load_state(std::span<const WeightEntry> entries) {
  std::map<std::string, const Tensor*> byname;
  for (const auto& e : entries) byname[e.name] = &e.tensor;
  auto get = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = byname.find(name);
    if (it == byname.end() || it->second->shape() != shape) throw ParseError("optimizer state missing " + name);
    return *it->second;
  };
  steps_ = static_cast<std::uint64_t>(get("optim.steps", {1})[0]);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = get("optim.m." + params_[i]->name, params_[i]->value.shape());
    v_[i] = get("optim.v." + params_[i]->name, params_[i]->value.shape());
  }
}

}  // namespace rit::nn
