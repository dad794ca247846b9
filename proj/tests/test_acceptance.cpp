// Acceptance run: one PASS/FAIL line per criterion. Arguments select
// criteria by number (default: all). Exit code 1 when any selected one fails.
// --cache <file> keeps the benchmark scores of the trained models.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "oracles.hpp"
#include "rit/cli/app.hpp"
#include "rit/cli/gradcheck_suite.hpp"
#include "rit/cli/train.hpp"
#include "rit/metrics/metrics.hpp"
#include "rit/partition/partition.hpp"
#include "rit/sampling/sampling.hpp"
#include "test_support.hpp"

using namespace rit;
using nn::Tensor;
using rit::testing::random_adjacency;
using rit::testing::random_points;
using rit::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
  /// Records a failed check; the first few messages end up in the detail.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass || failures < 3) detail += (detail.empty() ? "" : "; ") + what;
    pass = false;
    ++failures;
  }
  int failures = 0;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- oracles

/// Best modularity over every set partition, enumerated as restricted
/// growth strings.
double best_modularity(const Tensor& a) {
  const std::size_t n = a.dim(0);
  std::vector<int> c(n, 0), top(n, 0);
  double best = oracle::modularity(a, c);
  for (;;) {
    std::size_t i = n - 1;
    while (i >= 1 && c[i] > top[i - 1]) --i;
    if (i == 0) return best;
    ++c[i];
    top[i] = std::max(top[i - 1], c[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      c[j] = 0;
      top[j] = top[i];
    }
    best = std::max(best, oracle::modularity(a, c));
  }
}

/// B_ij = A_ij - k_i k_j / 2m from the adjacency entries.
Tensor modularity_matrix_by_hand(const Tensor& a) {
  const std::size_t n = a.dim(0);
  std::vector<double> k(n, 0.0);
  double two_m = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      k[i] += a(i, j);
      two_m += a(i, j);
    }
  Tensor b({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) b(i, j) = a(i, j) - k[i] * k[j] / two_m;
  return b;
}

/// Radius graph times a symmetric similarity, by direct pairwise loops.
Tensor attention_adjacency_by_hand(const Tensor& pts, double r, const Tensor& s) {
  const std::size_t n = pts.dim(0);
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && std::sqrt(oracle::sq_distance(pts, i, pts, j)) <= r) a(i, j) = s(i, j);
  return a;
}

Tensor random_similarity(std::size_t n, Rng& rng, double zero_fraction) {
  Tensor s({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s(i, j) = s(j, i) = rng.uniform() < zero_fraction ? 0.0 : rng.uniform();
  return s;
}

metrics::PanopticResult make_result(std::vector<int> instances) {
  metrics::PanopticResult r;
  for (int id : instances) r.labels.push_back(id >= 0 ? 1 : 0);
  r.instances = std::move(instances);
  return r;
}

// ---------------------------------------------------------------- criteria

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  const std::vector<cli::LayerCheck> checks = cli::run_gradcheck_suite(0, 100, 1e-4);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::size_t entries = 0;
  for (const cli::LayerCheck& c : checks) {
    worst = std::max(worst, c.max_rel_error);
    entries += c.entries;
    o.require(c.pass && c.seeds == 100, c.layer + fmt(" max rel err %.2e", c.max_rel_error));
  }
  o.require(elapsed < 120.0, fmt("runtime %.1f s", elapsed));
  if (o.pass)
    o.detail = fmt("%zu layers x 100 seeds, %zu entries, max rel err %.2e, %.1f s", checks.size(), entries, worst,
                   elapsed);
  return o;
}

Outcome modularity_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  const double r = 7.0;
  double worst_ratio = INFINITY;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(Rng(seed).substream("acceptance.modularity").engine()());
    const std::size_t n = 2 + seed % 9;
    Tensor pts, s, a;
    do {
      pts = random_points(n, rng, 6.0);
      s = random_similarity(n, rng, 0.3);
      a = attention_adjacency_by_hand(pts, r, s);
    } while (std::accumulate(a.storage().begin(), a.storage().end(), 0.0) == 0.0);
    const partition::Partition p = partition::assign_instances(pts, s, r);
    const double q = oracle::modularity(a, p.assignment);
    const double q_star = best_modularity(a);
    o.require(q >= 0.95 * q_star - 1e-12, fmt("seed %llu: Q %.6f < 0.95 Q* %.6f", (unsigned long long)seed, q, q_star));
    if (q_star > 0.0) worst_ratio = std::min(worst_ratio, q / q_star);
  }
  // Two disjoint triangles, 100 m apart, full similarity inside each.
  Tensor pts({6, 3}), s({6, 6});
  for (std::size_t i = 0; i < 6; ++i) {
    pts(i, 0) = (i < 3 ? 0.0 : 100.0) + static_cast<double>(i % 3);
    for (std::size_t j = 0; j < 6; ++j)
      if (i != j && (i < 3) == (j < 3)) s(i, j) = 1.0;
  }
  const partition::Partition tri = partition::assign_instances(pts, s, r);
  const double q_tri = oracle::modularity(attention_adjacency_by_hand(pts, r, s), tri.assignment);
  o.require(tri.assignment == std::vector<int>{0, 0, 0, 1, 1, 1}, "two triangles not split by component");
  o.require(std::abs(q_tri - 0.5) < 1e-12, fmt("two triangles Q %.15f", q_tri));
  const double elapsed = seconds_since(t0);
  o.require(elapsed < 60.0, fmt("runtime %.1f s", elapsed));
  if (o.pass) o.detail = fmt("min Q/Q* %.4f over 100 graphs (n<=10), triangles Q %.12f, %.1f s", worst_ratio, q_tri, elapsed);
  return o;
}

Outcome subgraph_identity() {
  Outcome o;
  double worst_full = 0.0, worst_row = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(Rng(seed).substream("acceptance.bsub").engine()());
    const std::size_t n = 2 + seed % 29;
    const Tensor a = random_adjacency(n, rng);
    const partition::WeightedGraph g(a);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const double full = nn::max_abs_diff(partition::subgraph_modularity_matrix(g, all), modularity_matrix_by_hand(a));
    worst_full = std::max(worst_full, full);
    o.require(full <= 1e-10, fmt("seed %llu: |B^sub - B| %.2e", (unsigned long long)seed, full));
    for (const bool whole : {true, false}) {
      std::vector<std::size_t> sub;
      for (std::size_t i = 0; i < n; ++i)
        if (whole || rng.uniform() < 0.5) sub.push_back(i);
      if (sub.empty()) sub.push_back(0);
      const Tensor b = partition::subgraph_modularity_matrix(g, sub);
      for (std::size_t i = 0; i < sub.size(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < sub.size(); ++j) row += b(i, j);
        worst_row = std::max(worst_row, std::abs(row));
        o.require(std::abs(row) <= 1e-10, fmt("seed %llu: row sum %.2e", (unsigned long long)seed, row));
      }
    }
  }
  if (o.pass) o.detail = fmt("50 graphs: max |B^sub - B| %.2e, max |row sum| %.2e", worst_full, worst_row);
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  using metrics::panoptic_eval;
  // Perfect prediction.
  const metrics::PanopticResult gt = make_result({-1, -1, 0, 0, 1, 1, 1});
  const metrics::EvalReport perfect = panoptic_eval(gt, gt);
  for (const metrics::ClassScores* c : {&perfect.moving, &perfect.stat})
    o.require(c->pq == 100.0 && c->sq == 100.0 && c->rq == 100.0, "perfect prediction not 100");
  o.require(perfect.pq == 100.0, "perfect overall PQ not 100");
  // Ground-truth instance of 3 points, prediction covers 2: IoU 2/3, one TP.
  const metrics::EvalReport two_of_three =
      panoptic_eval(make_result({4, 4, -1, -1, -1, -1, -1, -1}), make_result({0, 0, 0, -1, -1, -1, -1, -1}));
  o.require(std::abs(two_of_three.moving.pq - 200.0 / 3.0) < 1e-9, fmt("2-of-3 PQ_mov %.6f", two_of_three.moving.pq));
  // One instance of 4 split into halves: both IoU exactly 0.5, no match.
  const metrics::EvalReport split = panoptic_eval(make_result({1, 1, 2, 2, -1, -1}), make_result({0, 0, 0, 0, -1, -1}));
  o.require(split.moving.pq == 0.0 && split.moving.tp == 0, fmt("split PQ_mov %.6f", split.moving.pq));
  // PQ = SQ * RQ on random pairs.
  Rng rng(Rng(0).substream("acceptance.metrics").engine()());
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.integer(0, 40));
    auto random_result = [&] {
      std::vector<int> inst(n);
      for (int& v : inst) v = rng.uniform() < 0.5 ? -1 : static_cast<int>(rng.integer(0, 5));
      return make_result(inst);
    };
    const metrics::PanopticResult p = random_result(), g = random_result();
    const metrics::EvalReport r = panoptic_eval(p, g);
    for (const metrics::ClassScores* c : {&r.moving, &r.stat}) {
      const double gap = std::abs(c->pq - c->sq * c->rq / 100.0);
      worst = std::max(worst, gap);
      o.require(gap <= 1e-9, fmt("trial %d: |PQ - SQ RQ| %.2e", trial, gap));
    }
  }
  if (o.pass)
    o.detail = fmt("PQ_mov %.2f / %.2f / %.2f on the three examples, max |PQ - SQ*RQ| %.1e over 1000 pairs",
                   two_of_three.moving.pq, split.moving.pq, perfect.moving.pq, worst);
  return o;
}

Outcome sampling_oracles() {
  Outcome o;
  using namespace sampling;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(Rng(seed).substream("acceptance.sampling").engine()());
    const std::size_t n = static_cast<std::size_t>(rng.integer(1, 300));
    const std::size_t nq = static_cast<std::size_t>(rng.integer(1, 300));
    const std::size_t k = static_cast<std::size_t>(rng.integer(1, 16));
    const Tensor src = random_points(n, rng, 10.0), q = random_points(nq, rng, 10.0);
    const std::string tag = fmt("instance %llu (N %zu, k %zu)", (unsigned long long)seed, n, k);

    const NeighborIndex nb = knn(q, src, k);
    std::vector<std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < nb.rows; ++i) rows.emplace_back(nb.row(i).begin(), nb.row(i).end());
    const auto expect = oracle::knn(q, src, k);
    o.require(rows == expect, tag + ": knn");

    const double r = rng.uniform(0.5, 6.0);
    o.require(radius_neighbors(src, r) == oracle::radius_pairs(src, r), tag + ": radius graph");

    const std::size_t m = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(n)));
    const std::size_t start = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(n) - 1));
    o.require(fps(src, m, start) == oracle::fps(src, m, start), tag + ": fps");

    const Tensor f = random_tensor({n, 4}, rng);
    const Tensor grouped = sample_and_group(f, nb);
    o.require(grouped == oracle::gather(f, expect), tag + ": grouping");
    nn::Tape tape(false);
    o.require(maxpool_group(tape.constant(grouped)).value() == oracle::maxpool(grouped), tag + ": group max");

    const std::vector<std::size_t> coarse = fps(src, m, 0);
    const Tensor cp = select_rows(src, coarse), cf = random_tensor({m, 4}, rng);
    o.require(idw_interpolate(cp, cf, q, 3) == oracle::idw(cp, cf, q, 3), tag + ": idw");
  }
  if (o.pass) o.detail = "knn, radius graph, FPS, grouping and IDW bit-identical to loop oracles on 100 instances";
  return o;
}

Outcome similarity_identities() {
  Outcome o;
  const double r = 7.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(Rng(seed).substream("acceptance.similarity").engine()());
    const std::size_t n = 2 + seed % 40;
    const Tensor pts = random_points(n, rng, 8.0);
    const std::string tag = fmt("seed %llu", (unsigned long long)seed);

    Tensor ones({n, n});
    for (double& v : ones.storage()) v = 1.0;
    Tensor radius({n, n});
    for (const auto& [i, j] : oracle::radius_pairs(pts, r)) radius(i, j) = radius(j, i) = 1.0;
    o.require(partition::build_adjacency(pts, r, ones).adjacency().storage() == radius.storage(),
              tag + ": S=1 adjacency differs from the radius graph");

    const partition::Partition zero = partition::assign_instances(pts, Tensor({n, n}), r);
    o.require(zero.count == static_cast<int>(n), tag + ": S=0 not singletons");

    const Tensor s = random_similarity(n, rng, 0.2);
    const partition::Partition base = partition::assign_instances(pts, s, r);
    for (double c : {0.1, 10.0}) {
      Tensor sc = s;
      for (double& v : sc.storage()) v *= c;
      o.require(partition::assign_instances(pts, sc, r).assignment == base.assignment,
                tag + fmt(": partition changes under scale %.1f", c));
    }
  }
  if (o.pass) o.detail = "50 clouds: S=1 gives the radius graph bitwise, S=0 singletons, partition fixed under c in {0.1, 10}";
  return o;
}

struct Benchmark {
  double pq_mov = 0.0, iou_stat = 0.0;
  double baseline_pq_mov = 0.0, baseline_iou_stat = 0.0, baseline_r = 0.0;
  double seconds = 0.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Benchmark, pq_mov, iou_stat, baseline_pq_mov, baseline_iou_stat, baseline_r, seconds)

/// Miniature model trained on 500 windows, scored on 100 held-out windows.
Benchmark synthetic_benchmark(std::size_t T) {
  const auto t0 = Clock::now();
  cli::PipelineConfig cfg = cli::miniature_config();
  cfg.T = T;
  cfg.safe.T = T;
  cfg.validate();
  const cli::Dataset train = cli::Dataset::from_sequences(cli::synth_sequences(cfg.data, cfg.seed, "train"), 500);
  cli::DataConfig held_out = cfg.data;
  held_out.sequences = 9;
  const cli::Dataset test = cli::Dataset::from_sequences(cli::synth_sequences(held_out, cfg.seed, "test"), 100);
  Rng root(cfg.seed);
  Rng init = root.substream("init");
  cli::Model model(cfg, init);
  cli::Trainer trainer(cfg, model);
  while (trainer.epoch() < cfg.train.epochs) trainer.run_epoch(train);
  Benchmark b;
  const metrics::EvalReport scored = cli::evaluate(model, test, T);
  b.pq_mov = scored.moving.pq;
  b.iou_stat = scored.stat.iou.value_or(0.0);
  // Baseline clustering radius: best training-window PQ_mov over a sweep.
  double best_r = cfg.baseline_r, best_pq = -1.0;
  for (double r : {1.0, 2.0, 3.0, 5.0, 7.0}) {
    const double pq = cli::evaluate_baseline(train, cfg.v_t, r).moving.pq;
    if (pq > best_pq) {
      best_pq = pq;
      best_r = r;
    }
  }
  b.baseline_r = best_r;
  const metrics::EvalReport base = cli::evaluate_baseline(test, cfg.v_t, best_r);
  b.baseline_pq_mov = base.moving.pq;
  b.baseline_iou_stat = base.stat.iou.value_or(0.0);
  b.seconds = seconds_since(t0);
  if (train.windows.size() != 500 || test.windows.size() != 100)
    throw std::runtime_error(fmt("expected 500/100 windows, got %zu/%zu", train.windows.size(), test.windows.size()));
  return b;
}

/// Optional file shared between runs so separate processes for the two
/// benchmark criteria train each model once.
std::filesystem::path cache_path;

Benchmark benchmark(std::size_t T) {
  const std::string key = "T" + std::to_string(T);
  nlohmann::json cache = nlohmann::json::object();
  if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
    std::ifstream in(cache_path);
    cache = nlohmann::json::parse(in);
    if (cache.contains(key)) return cache[key].get<Benchmark>();
  }
  const Benchmark b = synthetic_benchmark(T);
  if (!cache_path.empty()) {
    cache[key] = b;
    std::ofstream(cache_path) << cache.dump(2) << "\n";
  }
  return b;
}

Outcome end_to_end() {
  Outcome o;
  const cli::PipelineConfig cfg = cli::miniature_config();
  o.require(cfg.T == 2 && cfg.backbone.k == 12 && cfg.r == 7.0 && cfg.train.epochs <= 30, "configuration drifted");
  const Benchmark b = benchmark(2);
  const double margin = b.pq_mov - b.baseline_pq_mov;
  const double iou = b.iou_stat;
  o.require(margin >= 10.0, fmt("PQ_mov margin %.2f", margin));
  o.require(iou >= 95.0, fmt("IoU_stat %.2f", iou));
  o.require(b.seconds <= 1800.0, fmt("runtime %.0f s", b.seconds));
  o.detail = fmt("PQ_mov %.2f vs baseline %.2f (r %.0f m, %+.2f), IoU_stat %.2f (baseline %.2f), %.0f s", b.pq_mov,
                 b.baseline_pq_mov, b.baseline_r, margin, iou, b.baseline_iou_stat, b.seconds) +
             (o.pass ? "" : " | " + o.detail);
  return o;
}

Outcome ablation_direction() {
  Outcome o;
  const Benchmark t2 = benchmark(2);
  const Benchmark t0 = benchmark(0);
  const double delta = t2.pq_mov - t0.pq_mov;
  o.require(delta > 0.0, "T=2 does not beat T=0");
  o.detail = fmt("PQ_mov T=2 %.2f vs T=0 %.2f (%+.2f)", t2.pq_mov, t0.pq_mov, delta);
  return o;
}

std::string tree_bytes(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string s;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    s += std::filesystem::relative(f, dir).string() + "\n" + ss.str();
  }
  return s;
}

Outcome determinism() {
  Outcome o;
  const testing::TempDir dir("acceptance-determinism");
  const std::vector<std::string> cfg = {"--preset", "miniature", "--seed", "11", "--data.sequences", "2",
                                        "--data.synth.frames", "6", "--train.epochs", "2"};
  std::vector<std::string> outputs;
  std::size_t files = 0;
  for (const char* name : {"a", "b"}) {
    const std::string root = (dir / name).string();
    std::filesystem::create_directories(root);
    auto run = [&](std::vector<std::string> args, bool with_cfg) {
      if (with_cfg) args.insert(args.end(), cfg.begin(), cfg.end());
      std::ostringstream out, err;
      const int code = cli::run_app(args, out, err);
      o.require(code == 0, args[0] + " exited " + std::to_string(code) + ": " + err.str());
      return out.str();
    };
    std::string text = run({"synth", "--out", root + "/data"}, true);
    text += run({"train", "--data", root + "/data", "--out", root + "/weights.bin", "--log", root + "/train.log"}, true);
    text += run({"infer", "--weights", root + "/weights.bin", "--data", root + "/data", "--out", root + "/pred"}, true);
    text += run({"eval", "--pred", root + "/pred", "--gt", root + "/data", "--json", root + "/report.json"}, false);
    outputs.push_back(tree_bytes(root) + "\nstdout\n" + text);
    files = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) files += e.is_regular_file();
  }
  o.require(outputs[0] == outputs[1], "runs differ");
  if (o.pass) o.detail = fmt("two synth/train/infer/eval runs: %zu files and stdout byte-identical", files);
  return o;
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"gradient correctness", gradient_correctness},
      {"modularity oracle", modularity_oracle},
      {"subgraph modularity identities", subgraph_identity},
      {"panoptic metric oracle", metric_oracle},
      {"sampling oracles", sampling_oracles},
      {"similarity-weighted adjacency identities", similarity_identities},
      {"end-to-end synthetic benchmark", end_to_end},
      {"ablation direction T=2 vs T=0", ablation_direction},
      {"determinism", determinism},
  };
  std::vector<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--cache" && i + 1 < argc) {
      cache_path = argv[++i];
      continue;
    }
    const int c = std::atoi(argv[i]);
    if (c < 1 || c > static_cast<int>(criteria.size())) {
      std::cerr << "usage: " << argv[0] << " [--cache file] [criterion number ...]\n";
      return 2;
    }
    selected.push_back(static_cast<std::size_t>(c));
  }
  if (selected.empty())
    for (std::size_t c = 1; c <= criteria.size(); ++c) selected.push_back(c);

  // Non-convergence warnings are expected on some inference subgraphs; count
  // them rather than flood the report.
  std::size_t warnings = 0;
  partition::set_warning_sink([&](const std::string&) { ++warnings; });

  bool all = true;
  for (std::size_t c : selected) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[c - 1].run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " C" << c << " " << criteria[c - 1].name << ": " << o.detail
              << fmt(" [%.1f s]", seconds_since(t0)) << std::endl;
  }
  if (warnings) std::cout << "note: " << warnings << " power-iteration non-convergence warning(s) during the run\n";
  return all ? 0 : 1;
}
