#include "rit/head/head.hpp"

#include <algorithm>
#include <map>

#include "rit/attention/attention.hpp"
#include "rit/error.hpp"
#include "rit/numerics/ops.hpp"

namespace rit::head {

std::vector<int> argmax_labels(const Tensor& probs) {
  RIT_EXPECT(probs.rank() == 2 && probs.dim(1) == 2, DimensionError, "class probabilities must be [N, 2]");
  std::vector<int> out(probs.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs(i, 1) > probs(i, 0) ? 1 : 0;
  return out;
}

std::vector<std::size_t> mask_rows(std::span<const int> mask) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0) rows.push_back(i);
  return rows;
}

SimilarityTargets build_targets(const NeighborIndex& neighbors, std::span<const int> gt_labels,
                                std::span<const int> gt_instances, std::span<const std::size_t> rows) {
  const std::size_t n = gt_labels.size();
  RIT_EXPECT(gt_instances.size() == n, ContractError, "labels and instances differ in length");
  RIT_EXPECT(neighbors.rows == n && neighbors.source_size == n, ContractError,
             "neighbor index does not match the scan");
  auto same = [&](std::size_t a, std::size_t b) {
    return gt_labels[a] == 1 && gt_labels[b] == 1 && gt_instances[a] == gt_instances[b];
  };
  SimilarityTargets t;
  t.local = Tensor({n, neighbors.k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < neighbors.k; ++j) t.local(i, j) = same(i, neighbors(i, j)) ? 1.0 : 0.0;
  const std::size_t m = rows.size();
  t.global = Tensor({m, m});
  for (std::size_t a = 0; a < m; ++a) {
    RIT_EXPECT(rows[a] < n, ContractError, "global row out of range");
    for (std::size_t b = 0; b < m; ++b) t.global(a, b) = same(rows[a], rows[b]) ? 1.0 : 0.0;
  }
  return t;
}

Var local_similarity(const Var& q, const Var& k, const Var& pos_term, const NeighborIndex& neighbors) {
  const std::size_t n = neighbors.rows, kk = neighbors.k;
  std::vector<std::size_t> self(n * kk);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(self.begin() + static_cast<std::ptrdiff_t>(i * kk), kk, i);
  const Var qg = nn::gather_rows(q, self, {n, kk});
  const Var kg = nn::gather_rows(k, neighbors.indices, {n, kk});
  return nn::sigmoid(nn::add(nn::rowdot(qg, kg), pos_term));
}

Var global_similarity(const Var& q, const Var& k, std::span<const std::size_t> rows) {
  const std::size_t m = rows.size();
  if (m == 0) return q.tape().constant(Tensor({0, 0}));
  const Var qs = nn::gather_rows(q, rows, {m});
  const Var ks = nn::gather_rows(k, rows, {m});
  return nn::sigmoid(nn::matmul_nt(qs, ks));
}

Tensor offset_targets(const Tensor& points, std::span<const int> gt_labels, std::span<const int> gt_instances) {
  std::map<int, std::array<double, 4>> sums;  // x, y, z, count
  for (std::size_t i = 0; i < gt_labels.size(); ++i) {
    if (gt_labels[i] != 1) continue;
    auto& s = sums[gt_instances[i]];
    for (std::size_t c = 0; c < 3; ++c) s[c] += points(i, c);
    s[3] += 1.0;
  }
  const auto rows = mask_rows(gt_labels);
  Tensor out({rows.size(), 3});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& s = sums[gt_instances[rows[r]]];
    for (std::size_t c = 0; c < 3; ++c) out(r, c) = s[c] / s[3] - points(rows[r], c);
  }
  return out;
}

Head::Head(const HeadConfig& cfg_, Rng& rng)
    : cfg(cfg_),
      wq("head.wq", cfg_.width, cfg_.width, true, rng),
      wk("head.wk", cfg_.width, cfg_.width, true, rng),
      wr("head.wr", 3, 1, true, rng) {
  nn::MlpStage hidden;
  hidden.linear = nn::LinearLayer("head.mos.0", cfg.width, cfg.width, true, rng);
  hidden.activation = nn::Activation::relu;
  nn::MlpStage logits;
  logits.linear = nn::LinearLayer("head.mos.1", cfg.width, 2, true, rng);
  mos.stages.push_back(std::move(hidden));
  mos.stages.push_back(std::move(logits));
  if (cfg.offset_head) offset = nn::LinearLayer("head.offset", cfg.width, 3, true, rng);
}

HeadOutput Head::forward(Tape& tape, const Var& xb, const Tensor& points, bool training,
                         std::span<const int> force_moving) {
  const std::size_t n = points.dim(0);
  RIT_EXPECT(xb.shape().size() == 2 && xb.shape()[0] == n && xb.shape()[1] == cfg.width, DimensionError,
             "head input must be [N, width]");
  HeadOutput out;
  out.mos.probs = nn::softmax(mos.forward(tape, xb, training), 1);
  out.mos.labels = argmax_labels(out.mos.probs.value());
  if (n == 0) {
    out.s_local = tape.constant(Tensor({0, cfg.k}));
    out.s_global = tape.constant(Tensor({0, 0}));
    if (offset) out.offsets = tape.constant(Tensor({0, 3}));
    return out;
  }
  const Var q = wq.forward(tape, xb);
  const Var k = wk.forward(tape, xb);
  out.neighbors = sampling::knn(points, points, cfg.k);
  const Tensor rel = attn::relative_positions(points, points, out.neighbors).reshaped({n * cfg.k, 3});
  const Var pos = nn::reshape(nn::relu(wr.forward(tape, tape.constant(rel))), {n, cfg.k});
  out.s_local = local_similarity(q, k, pos, out.neighbors);

  std::vector<int> selected = out.mos.labels;
  if (!force_moving.empty()) {
    RIT_EXPECT(force_moving.size() == n, ContractError, "teacher-forcing mask length mismatch");
    for (std::size_t i = 0; i < n; ++i) selected[i] = selected[i] || force_moving[i];
  }
  out.rows = mask_rows(selected);
  out.s_global = global_similarity(q, k, out.rows);
  if (offset) out.offsets = offset->forward(tape, xb);
  return out;
}

LossTerms Head::loss(const HeadOutput& out, const Tensor& points, std::span<const int> gt_labels,
                     std::span<const int> gt_instances) const {
  const std::size_t n = points.dim(0);
  RIT_EXPECT(gt_labels.size() == n && gt_instances.size() == n, ContractError, "ground truth length mismatch");
  Tape& tape = out.mos.probs.tape();
  LossTerms t;
  if (n == 0) {
    t.total = tape.constant(Tensor::scalar(0.0));
    return t;
  }
  const SimilarityTargets targets = build_targets(out.neighbors, gt_labels, gt_instances, out.rows);
  const Var ftl =
      nn::focal_tversky_loss(out.mos.probs, gt_labels, cfg.ftl_alpha, cfg.ftl_beta, cfg.ftl_gamma, cfg.ftl_smooth);
  const Var bl = nn::bce_loss(out.s_local, targets.local);
  const Var bg = nn::bce_loss(out.s_global, targets.global);
  t.ftl = ftl.value().item();
  t.bce_local = bl.value().item();
  t.bce_global = bg.value().item();
  t.total = nn::add(ftl, nn::add(nn::scale(bl, cfg.lambda_local), nn::scale(bg, cfg.lambda_global)));
  if (out.offsets) {
    const auto rows = mask_rows(gt_labels);
    if (!rows.empty()) {
      const Var o = nn::gather_rows(*out.offsets, rows, {rows.size()});
      const Var lo = nn::offset_l1_loss(o, offset_targets(points, gt_labels, gt_instances));
      t.offset = lo.value().item();
      t.total = nn::add(t.total, lo);
    }
  }
  return t;
}

void Head::collect(ParameterSet& set) {
  mos.collect(set);
  wq.collect(set);
  wk.collect(set);
  wr.collect(set);
  if (offset) offset->collect(set);
}

}  // namespace rit::head
