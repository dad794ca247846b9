#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rit/numerics/ops.hpp"
#include "rit/numerics/rng.hpp"
#include "rit/numerics/tape.hpp"

namespace rit::nn {

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

/// Non-owning view of a module tree's parameters and buffers (running
/// statistics), in registration order.
class ParameterSet {
 public:
  void add(Parameter& p) { params_.push_back(&p); }
  void add_buffer(std::string name, Tensor& t) { buffers_.push_back({std::move(name), &t}); }

  const std::vector<Parameter*>& params() const { return params_; }
  const std::vector<NamedBuffer>& buffers() const { return buffers_; }
  std::size_t scalar_count() const;
  void zero_grad();
  Parameter* find(const std::string& name) const;

 private:
  std::vector<Parameter*> params_;
  std::vector<NamedBuffer> buffers_;
};

class LinearLayer {
 public:
  LinearLayer() = default;
  /// Weight and bias drawn uniformly from +-sqrt(1 / in_dim).
  LinearLayer(const std::string& name, std::size_t in_dim, std::size_t out_dim, bool with_bias, Rng& rng);

  Var forward(Tape& tape, const Var& x);
  void collect(ParameterSet& set);

  std::size_t in_dim() const { return weight.value.dim(0); }
  std::size_t out_dim() const { return weight.value.dim(1); }
  void set_identity();
  void set_zero();

  Parameter weight;
  std::optional<Parameter> bias;
};

enum class NormKind { batch, layer };

class NormLayer {
 public:
  NormLayer() = default;
  NormLayer(const std::string& name, NormKind kind, std::size_t dim, double eps = 1e-5, double momentum = 0.1);

  /// Batch norm normalizes every feature over all rows of `x` (points, or
  /// points x neighbors when flattened); in training mode it also folds the
  /// batch statistics into the running averages. Layer norm normalizes each
  /// row and ignores `training`.
  Var forward(Tape& tape, const Var& x, bool training);
  void collect(ParameterSet& set);

  NormKind kind = NormKind::layer;
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  std::string name;
};

enum class Activation { none, relu, gelu };

struct MlpStage {
  LinearLayer linear;
  std::optional<NormLayer> norm;
  Activation activation = Activation::none;
};

/// Sequence of linear -> optional norm -> activation stages.
class Mlp {
 public:
  Var forward(Tape& tape, const Var& x, bool training);
  void collect(ParameterSet& set);
  bool empty() const { return stages.empty(); }

  std::vector<MlpStage> stages;
};

Var activate(const Var& x, Activation act);

}  // namespace rit::nn
