#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "rit/numerics/tensor.hpp"

namespace rit::partition {

using nn::Tensor;

/// Symmetric non-negative adjacency with zero diagonal and weighted degrees.
class WeightedGraph {
 public:
  WeightedGraph() = default;
  /// Validates symmetry (1e-12), zero diagonal and non-negative weights.
  explicit WeightedGraph(Tensor adjacency);
  /// Accumulates undirected edges (i, j, w); self loops and negative weights
  /// are rejected.
  static WeightedGraph from_edges(std::size_t n, std::span<const std::tuple<std::size_t, std::size_t, double>> edges);

  std::size_t size() const { return n_; }
  double weight(std::size_t i, std::size_t j) const { return a_(i, j); }
  double degree(std::size_t i) const { return degrees_[i]; }
  const std::vector<double>& degrees() const { return degrees_; }
  /// Half the total degree.
  double m() const { return m_; }
  const Tensor& adjacency() const { return a_; }

 private:
  std::size_t n_ = 0;
  Tensor a_{nn::Shape{0, 0}};
  std::vector<double> degrees_;
  double m_ = 0.0;
};

/// Community id per node, contiguous from 0.
struct Partition {
  std::vector<int> assignment;
  int count = 0;
};

/// Relabels communities in order of first appearance so ids are contiguous.
Partition canonical(std::span<const int> assignment);

/// (S + S^T) / 2.
Tensor symmetrize(const Tensor& s);

/// Binary radius graph (||p_i - p_j|| <= r) multiplied elementwise by the
/// symmetrized similarity, zero diagonal. `s_bar` must be symmetric [M, M].
WeightedGraph build_adjacency(const Tensor& points, double r, const Tensor& s_bar);

/// Q = (1/2m) sum_ij (A_ij - k_i k_j / 2m) [c_i == c_j]; 0 when m == 0.
double modularity(const WeightedGraph& g, std::span<const int> assignment);

/// Full modularity matrix B_ij = A_ij - k_i k_j / 2m.
Tensor modularity_matrix(const WeightedGraph& g);

/// Generalized modularity matrix of a node subset (full-graph m):
/// B_ij - delta_ij * (k_i^sub - k_i * d^sub / 2m), indexed by subset order.
Tensor subgraph_modularity_matrix(const WeightedGraph& g, std::span<const std::size_t> subset);

struct PowerIterationOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

/// Receives non-convergence warnings. The default writes one line to stderr;
/// an empty function restores it. Returns the previous sink.
using WarningSink = std::function<void(const std::string&)>;
WarningSink set_warning_sink(WarningSink sink);

struct Bisection {
  /// Empty when no split has a positive modularity gain.
  std::vector<std::size_t> first, second;
  double gain = 0.0;  ///< (1/4m) s^T B^sub s
  bool converged = true;
  bool split() const { return !first.empty() && !second.empty(); }
};

/// Leading-eigenvector bisection of `subset` with single-vertex-flip
/// refinement (strict improvements only).
Bisection bisect(const WeightedGraph& g, std::span<const std::size_t> subset, const PowerIterationOptions& options = {});

struct PartitionOptions {
  PowerIterationOptions power;
  /// Multiway vertex moving over the final communities after bisection.
  bool refine = true;
};

/// Recursive bisection until no subgraph admits a positive split. Nodes with
/// zero weighted degree become singletons; m == 0 gives all singletons.
Partition partition_graph(const WeightedGraph& g, const PartitionOptions& options = {});

/// Instance ids for the moving points from their global similarity.
Partition assign_instances(const Tensor& points, const Tensor& s_global, double r,
                           const PartitionOptions& options = {});

/// Greedy multiway vertex moving: repeatedly applies the single move of one
/// node to another (or a new) community with the largest strict gain in Q.
Partition refine_partition(const WeightedGraph& g, std::span<const int> assignment);

struct BruteForceResult {
  Partition partition;
  double q = 0.0;
};

/// Exhaustive search over all set partitions (at most `max_communities`
/// blocks when given). Requires n <= 12.
BruteForceResult brute_force_partition(const WeightedGraph& g, std::optional<std::size_t> max_communities = {});

/// {"n": int, "edges": [[i, j, w], ...]}
WeightedGraph parse_graph_json(const std::string& text, const std::string& source_name = "<graph>");
WeightedGraph read_graph(const std::string& path);
std::string graph_to_json(const WeightedGraph& g);

/// [{"point_index": i, "instance_id": c}, ...]
std::string partition_to_json(const Partition& p);

}  // namespace rit::partition
