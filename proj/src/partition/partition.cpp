#include "rit/partition/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "rit/error.hpp"
#include "rit/numerics/rng.hpp"
#include "rit/sampling/sampling.hpp"

namespace rit::partition {

using json = nlohmann::json;

namespace {

WarningSink& warning_sink() {
  static WarningSink sink;
  return sink;
}

void warn(const std::string& message) {
  if (warning_sink())
    warning_sink()(message);
  else
    std::cerr << "warning: " << message << "\n";
}

}  // namespace

WarningSink set_warning_sink(WarningSink sink) { return std::exchange(warning_sink(), std::move(sink)); }

WeightedGraph::WeightedGraph(Tensor adjacency) : a_(std::move(adjacency)) {
  RIT_EXPECT(a_.rank() == 2 && a_.dim(0) == a_.dim(1), DimensionError, "adjacency must be square");
  n_ = a_.dim(0);
  degrees_.assign(n_, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    RIT_EXPECT(a_(i, i) == 0.0, ContractError, "adjacency diagonal must be zero");
    for (std::size_t j = 0; j < n_; ++j) {
      const double w = a_(i, j);
      RIT_EXPECT(std::isfinite(w) && w >= 0.0, ContractError, "adjacency weights must be finite and non-negative");
      RIT_EXPECT(std::abs(w - a_(j, i)) <= 1e-12, ContractError, "adjacency must be symmetric");
      degrees_[i] += w;
    }
    total += degrees_[i];
  }
  m_ = total / 2.0;
}

WeightedGraph WeightedGraph::from_edges(std::size_t n,
                                        std::span<const std::tuple<std::size_t, std::size_t, double>> edges) {
  Tensor a({n, n});
  for (const auto& [i, j, w] : edges) {
    RIT_EXPECT(i < n && j < n, ContractError, "edge endpoint out of range");
    RIT_EXPECT(i != j, ContractError, "self loops are not allowed");
    RIT_EXPECT(std::isfinite(w) && w >= 0.0, ContractError, "edge weights must be finite and non-negative");
    a(i, j) += w;
    a(j, i) += w;
  }
  return WeightedGraph(std::move(a));
}

Partition canonical(std::span<const int> assignment) {
  Partition p;
  std::map<int, int> ids;
  p.assignment.reserve(assignment.size());
  for (int c : assignment) {
    auto [it, inserted] = ids.emplace(c, static_cast<int>(ids.size()));
    p.assignment.push_back(it->second);
  }
  p.count = static_cast<int>(ids.size());
  return p;
}

Tensor symmetrize(const Tensor& s) {
  RIT_EXPECT(s.rank() == 2 && s.dim(0) == s.dim(1), DimensionError, "similarity must be square");
  Tensor out(s.shape());
  for (std::size_t i = 0; i < s.dim(0); ++i)
    for (std::size_t j = 0; j < s.dim(0); ++j) out(i, j) = 0.5 * (s(i, j) + s(j, i));
  return out;
}

WeightedGraph build_adjacency(const Tensor& points, double r, const Tensor& s_bar) {
  RIT_EXPECT(r > 0.0, ContractError, "radius must be positive");
  RIT_EXPECT(points.rank() == 2 && points.dim(1) == 3, DimensionError, "points must be [M, 3]");
  const std::size_t n = points.dim(0);
  RIT_EXPECT(s_bar.rank() == 2 && s_bar.dim(0) == n && s_bar.dim(1) == n, DimensionError,
             "similarity does not match the point count");
  Tensor a({n, n});
  for (const auto& [i, j] : sampling::radius_neighbors(points, r)) {
    RIT_EXPECT(std::abs(s_bar(i, j) - s_bar(j, i)) <= 1e-12, ContractError, "similarity must be symmetrized");
    a(i, j) = s_bar(i, j);
    a(j, i) = s_bar(i, j);
  }
  return WeightedGraph(std::move(a));
}

double modularity(const WeightedGraph& g, std::span<const int> assignment) {
  RIT_EXPECT(assignment.size() == g.size(), ContractError, "assignment does not match the graph");
  const double m = g.m();
  if (m <= 0.0) return 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j)
      if (assignment[i] == assignment[j]) q += g.weight(i, j) - g.degree(i) * g.degree(j) / (2.0 * m);
  return q / (2.0 * m);
}

Tensor modularity_matrix(const WeightedGraph& g) {
  const std::size_t n = g.size();
  Tensor b({n, n});
  if (g.m() <= 0.0) return b;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) b(i, j) = g.weight(i, j) - g.degree(i) * g.degree(j) / (2.0 * g.m());
  return b;
}

Tensor subgraph_modularity_matrix(const WeightedGraph& g, std::span<const std::size_t> subset) {
  RIT_EXPECT(!subset.empty(), ContractError, "subset must not be empty");
  const std::size_t s = subset.size();
  Tensor b({s, s});
  const double m = g.m();
  if (m <= 0.0) return b;
  double d_sub = 0.0;
  for (std::size_t v : subset) {
    RIT_EXPECT(v < g.size(), ContractError, "subset node out of range");
    d_sub += g.degree(v);
  }
  for (std::size_t a = 0; a < s; ++a) {
    const std::size_t i = subset[a];
    double k_sub = 0.0;
    for (std::size_t c = 0; c < s; ++c) {
      const std::size_t j = subset[c];
      b(a, c) = g.weight(i, j) - g.degree(i) * g.degree(j) / (2.0 * m);
      k_sub += g.weight(i, j);
    }
    b(a, a) -= k_sub - g.degree(i) * d_sub / (2.0 * m);
  }
  return b;
}

namespace {

/// Threshold for a strict improvement, relative to the matrix scale, so
/// rounding noise cannot make a move and its inverse both look positive.
double improvement_eps(const Tensor& b) {
  double scale = 0.0;
  for (double v : b.storage()) scale = std::max(scale, std::abs(v));
  return 1e-12 * std::max(scale, 1e-300) * static_cast<double>(std::max<std::size_t>(b.dim(0), 1));
}

double quadratic(const Tensor& b, const std::vector<int>& s) {
  double q = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) q += b(i, j) * s[i] * s[j];
  return q;
}

/// Leading eigenvector of b by power iteration on b + c I with c bounding
/// the spectrum from below. Returns false when not converged.
bool leading_eigenvector(const Tensor& b, const PowerIterationOptions& opt, std::vector<double>& v) {
  const std::size_t n = b.dim(0);
  double shift = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(b(i, j));
    shift = std::max(shift, row);
  }
  Rng rng(0x5eed0000ULL + n);
  v.resize(n);
  for (double& x : v) x = rng.uniform(0.5, 1.5);
  std::vector<double> next(n);
  auto normalize = [](std::vector<double>& x) {
    double norm = 0.0;
    for (double e : x) norm += e * e;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& e : x) e /= norm;
    return norm;
  };
  normalize(v);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = shift * v[i];
      for (std::size_t j = 0; j < n; ++j) s += b(i, j) * v[j];
      next[i] = s;
    }
    if (normalize(next) == 0.0) return true;
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(next[i] - v[i]));
    v.swap(next);
    if (diff < opt.tolerance) return true;
  }
  return false;
}

std::vector<int> exhaustive_signs(const Tensor& b) {
  const std::size_t n = b.dim(0);
  std::vector<int> best(n, 1), s(n, 1);
  double best_q = quadratic(b, best);
  // Node 0 fixed to +1; s and -s are the same split.
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << (n - 1)); ++mask) {
    for (std::size_t i = 1; i < n; ++i) s[i] = (mask >> (i - 1)) & 1 ? -1 : 1;
    const double q = quadratic(b, s);
    if (q > best_q) {
      best_q = q;
      best = s;
    }
  }
  return best;
}

}  // namespace

Bisection bisect(const WeightedGraph& g, std::span<const std::size_t> subset, const PowerIterationOptions& options) {
  RIT_EXPECT(subset.size() >= 2, ContractError, "bisection needs at least two nodes");
  Bisection out;
  const double m = g.m();
  if (m <= 0.0) return out;
  const Tensor b = subgraph_modularity_matrix(g, subset);
  const std::size_t n = subset.size();
  std::vector<int> s(n, 1);
  std::vector<double> v;
  out.converged = leading_eigenvector(b, options, v);
  if (out.converged) {
    for (std::size_t i = 0; i < n; ++i) s[i] = v[i] >= 0.0 ? 1 : -1;
  } else if (n <= 12) {
    s = exhaustive_signs(b);
  } else {
    warn("power iteration did not converge on a subgraph of " + std::to_string(n) + " nodes; using the current vector");
    for (std::size_t i = 0; i < n; ++i) s[i] = v[i] >= 0.0 ? 1 : -1;
  }

  // Single-vertex flips: flipping i changes s^T B s by -4 s_i sum_{j != i} B_ij s_j.
  std::vector<double> bs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) bs[i] += b(i, j) * s[j];
  const double eps = improvement_eps(b);
  for (std::size_t step = 0; step < n * n + 1; ++step) {
    double best = eps;
    std::size_t arg = n;
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = -4.0 * s[i] * (bs[i] - b(i, i) * s[i]);
      if (delta > best) {
        best = delta;
        arg = i;
      }
    }
    if (arg == n) break;
    s[arg] = -s[arg];
    for (std::size_t j = 0; j < n; ++j) bs[j] += 2.0 * b(j, arg) * s[arg];
  }

  // Vertex-moving passes: each vertex flips once, losses allowed; the best
  // prefix is kept when it strictly gains. Escapes states where no single
  // flip helps.
  for (std::size_t pass = 0; pass < n + 1; ++pass) {
    std::vector<int> trial = s, best_s;
    std::vector<double> tbs = bs;
    std::vector<char> flipped(n, 0);
    double cumulative = 0.0, best_gain = eps;
    for (std::size_t step = 0; step < n; ++step) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (flipped[i]) continue;
        const double delta = -4.0 * trial[i] * (tbs[i] - b(i, i) * trial[i]);
        if (delta > best) {
          best = delta;
          arg = i;
        }
      }
      trial[arg] = -trial[arg];
      flipped[arg] = 1;
      for (std::size_t j = 0; j < n; ++j) tbs[j] += 2.0 * b(j, arg) * trial[arg];
      cumulative += best;
      if (cumulative > best_gain) {
        best_gain = cumulative;
        best_s = trial;
      }
    }
    if (best_s.empty()) break;
    s = std::move(best_s);
    for (std::size_t i = 0; i < n; ++i) {
      bs[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) bs[i] += b(i, j) * s[j];
    }
  }

  out.gain = quadratic(b, s) / (4.0 * m);
  if (out.gain <= eps / (4.0 * m)) {
    out.gain = 0.0;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) (s[i] > 0 ? out.first : out.second).push_back(subset[i]);
  if (!out.split()) {
    out.first.clear();
    out.second.clear();
    out.gain = 0.0;
  }
  return out;
}

namespace {

/// Community bookkeeping for vertex moves on the full modularity matrix.
/// sums(i, k) = sum over j in community k, j != i, of B_ij; moving i from a
/// to b changes Q by (sums(i, b) - sums(i, a)) / m.
class MoveState {
 public:
  MoveState(const Tensor& b, std::vector<int> c) : b_(b), n_(b.dim(0)), cap_(b.dim(0) + 1), c_(std::move(c)) {
    sums_.assign(n_ * cap_, 0.0);
    sizes_.assign(cap_, 0);
    for (std::size_t i = 0; i < n_; ++i) {
      ++sizes_[c_[i]];
      communities_ = std::max(communities_, c_[i] + 1);
      for (std::size_t j = 0; j < n_; ++j)
        if (j != i) sums_[i * cap_ + c_[j]] += b_(i, j);
    }
  }

  /// Best target for node i: an existing non-empty community other than its
  /// own, or a fresh one when i is not a singleton. Returns (delta, target).
  std::pair<double, int> best_move(std::size_t i) const {
    const int from = c_[i];
    const double stay = sums_[i * cap_ + from];
    double best = -std::numeric_limits<double>::infinity();
    int target = -1;
    for (int k = 0; k < communities_; ++k) {
      if (k == from || sizes_[k] == 0) continue;
      const double delta = sums_[i * cap_ + k] - stay;
      if (delta > best) {
        best = delta;
        target = k;
      }
    }
    if (sizes_[from] > 1 && -stay > best) {
      best = -stay;
      target = fresh();
    }
    return {best, target};
  }

  void move(std::size_t i, int to) {
    const int from = c_[i];
    if (to >= communities_) communities_ = to + 1;
    c_[i] = to;
    --sizes_[from];
    ++sizes_[to];
    for (std::size_t j = 0; j < n_; ++j) {
      if (j == i) continue;
      sums_[j * cap_ + from] -= b_(j, i);
      sums_[j * cap_ + to] += b_(j, i);
    }
  }

  /// Sum of B_ij over i in a, j in b (a != b).
  double between(int a, int b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
      if (c_[i] == a) s += sums_[i * cap_ + b];
    return s;
  }

  int communities() const { return communities_; }
  int size(int k) const { return sizes_[k]; }
  const std::vector<int>& assignment() const { return c_; }

 private:
  int fresh() const {
    for (int k = 0; k < communities_; ++k)
      if (sizes_[k] == 0) return k;
    return communities_;
  }

  const Tensor& b_;
  std::size_t n_, cap_;
  std::vector<int> c_;
  std::vector<double> sums_;
  std::vector<int> sizes_;
  int communities_ = 0;
};

}  // namespace

Partition refine_partition(const WeightedGraph& g, std::span<const int> assignment) {
  const std::size_t n = g.size();
  RIT_EXPECT(assignment.size() == n, ContractError, "assignment does not match the graph");
  Partition p = canonical(assignment);
  if (n == 0 || g.m() <= 0.0) return p;
  const Tensor b = modularity_matrix(g);
  const double eps = improvement_eps(b);
  std::vector<int> current = p.assignment;
  for (std::size_t round = 0; round < 4 * n + 4; ++round) {
    bool improved = false;

    // Vertex-moving pass: every node moves once to its best target, even at
    // a loss; the best prefix of the sequence is kept when it gains.
    MoveState st(b, current);
    std::vector<char> moved(n, 0);
    double cumulative = 0.0, best_gain = eps;
    std::vector<int> best_state;
    for (std::size_t step = 0; step < n; ++step) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t node = n;
      int target = -1;
      for (std::size_t i = 0; i < n; ++i) {
        if (moved[i]) continue;
        const auto [delta, to] = st.best_move(i);
        if (to >= 0 && delta > best) {
          best = delta;
          node = i;
          target = to;
        }
      }
      if (node == n) break;
      st.move(node, target);
      moved[node] = 1;
      cumulative += best;
      if (cumulative > best_gain) {
        best_gain = cumulative;
        best_state = st.assignment();
      }
    }
    if (!best_state.empty()) {
      current = canonical(best_state).assignment;
      improved = true;
    }

    // Merge the pair of communities with the largest positive gain.
    MoveState ms(b, current);
    double best_merge = eps;
    int ma = -1, mb = -1;
    for (int a = 0; a < ms.communities(); ++a)
      for (int c = a + 1; c < ms.communities(); ++c) {
        if (ms.size(a) == 0 || ms.size(c) == 0) continue;
        const double gain = ms.between(a, c);
        if (gain > best_merge) {
          best_merge = gain;
          ma = a;
          mb = c;
        }
      }
    if (ma >= 0) {
      for (int& k : current)
        if (k == mb) k = ma;
      current = canonical(current).assignment;
      improved = true;
    }
    if (!improved) break;
  }
  return canonical(current);
}

Partition partition_graph(const WeightedGraph& g, const PartitionOptions& options) {
  const std::size_t n = g.size();
  std::vector<int> label(n, -1);
  int next = 0;
  if (g.m() <= 0.0) {
    for (std::size_t i = 0; i < n; ++i) label[i] = next++;
    return canonical(label);
  }
  std::vector<std::size_t> connected;
  for (std::size_t i = 0; i < n; ++i) {
    if (g.degree(i) > 0.0)
      connected.push_back(i);
    else
      label[i] = next++;
  }
  std::vector<std::vector<std::size_t>> pending{connected};
  std::vector<std::vector<std::size_t>> done;
  while (!pending.empty()) {
    std::vector<std::size_t> sub = std::move(pending.back());
    pending.pop_back();
    if (sub.size() < 2) {
      done.push_back(std::move(sub));
      continue;
    }
    Bisection bi = bisect(g, sub, options.power);
    if (!bi.split()) {
      done.push_back(std::move(sub));
      continue;
    }
    pending.push_back(std::move(bi.second));
    pending.push_back(std::move(bi.first));
  }
  // Order communities by their smallest node so labels do not depend on the
  // traversal order.
  std::sort(done.begin(), done.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  for (const auto& sub : done)
    if (!sub.empty()) {
      for (std::size_t v : sub) label[v] = next;
      ++next;
    }
  if (!options.refine) return canonical(label);
  // Vertex moving from the bisection result and from all singletons; the
  // higher modularity wins, ties keep the bisection start.
  Partition best = refine_partition(g, label);
  std::vector<int> singles(n);
  std::iota(singles.begin(), singles.end(), 0);
  Partition alt = refine_partition(g, singles);
  if (modularity(g, alt.assignment) > modularity(g, best.assignment) + 1e-12) best = std::move(alt);
  return best;
}

Partition assign_instances(const Tensor& points, const Tensor& s_global, double r, const PartitionOptions& options) {
  const std::size_t n = points.rank() == 2 ? points.dim(0) : 0;
  if (n == 0) return {};
  return partition_graph(build_adjacency(points, r, symmetrize(s_global)), options);
}

BruteForceResult brute_force_partition(const WeightedGraph& g, std::optional<std::size_t> max_communities) {
  const std::size_t n = g.size();
  RIT_EXPECT(n <= 12, ContractError, "brute force partition is limited to 12 nodes");
  BruteForceResult best;
  if (n == 0) return best;
  if (g.m() <= 0.0) {
    std::vector<int> single(n);
    for (std::size_t i = 0; i < n; ++i) single[i] = static_cast<int>(i);
    best.partition = canonical(single);
    return best;
  }
  const std::size_t cap = max_communities ? std::max<std::size_t>(*max_communities, 1) : n;
  const Tensor b = modularity_matrix(g);
  const double two_m = 2.0 * g.m();
  // Restricted growth strings: rgs[i] <= 1 + max(rgs[0..i-1]).
  std::vector<int> rgs(n, 0), hi(n, 0);
  std::vector<double> block(n, 0.0);
  double best_q = -1.0;
  bool done = false;
  while (!done) {
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (rgs[i] == rgs[j]) q += b(i, j);
    q /= two_m;
    if (q > best_q) {
      best_q = q;
      best.partition = canonical(rgs);
    }
    // Advance to the next string with at most `cap` blocks.
    done = true;
    for (std::size_t i = n; i-- > 1;) {
      const int limit = std::min<int>(hi[i - 1] + 1, static_cast<int>(cap) - 1);
      if (rgs[i] < limit) {
        ++rgs[i];
        hi[i] = std::max(hi[i - 1], rgs[i]);
        for (std::size_t j = i + 1; j < n; ++j) {
          rgs[j] = 0;
          hi[j] = hi[i];
        }
        done = false;
        break;
      }
    }
  }
  best.q = best_q;
  return best;
}

namespace {

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

WeightedGraph parse_graph_json(const std::string& text, const std::string& source_name) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source_name + ":" + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  auto fail = [&](const std::string& msg) { throw ParseError(source_name + ":1: " + msg); };
  if (!doc.is_object() || !doc.contains("n") || !doc["n"].is_number_unsigned()) fail("expected object with \"n\"");
  const std::size_t n = doc["n"].get<std::size_t>();
  std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
  if (doc.contains("edges")) {
    if (!doc["edges"].is_array()) fail("\"edges\" must be an array");
    for (const auto& e : doc["edges"]) {
      if (!e.is_array() || e.size() != 3 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned() ||
          !e[2].is_number())
        fail("edge must be [i, j, w]");
      edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>(), e[2].get<double>());
    }
  }
  try {
    return WeightedGraph::from_edges(n, edges);
  } catch (const ContractError& e) {
    fail(e.what());
  }
  return {};
}

WeightedGraph read_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_graph_json(ss.str(), path);
}

std::string graph_to_json(const WeightedGraph& g) {
  json edges = json::array();
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j)
      if (g.weight(i, j) != 0.0) edges.push_back({i, j, g.weight(i, j)});
  return json{{"n", g.size()}, {"edges", edges}}.dump();
}

std::string partition_to_json(const Partition& p) {
  json out = json::array();
  for (std::size_t i = 0; i < p.assignment.size(); ++i)
    out.push_back({{"point_index", i}, {"instance_id", p.assignment[i]}});
  return out.dump();
}

}  // namespace rit::partition
