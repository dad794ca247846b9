#include "rit/cli/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <iomanip>
#include <map>
#include <sstream>

#include "rit/attention/attention.hpp"
#include "rit/backbone/backbone.hpp"
#include "rit/error.hpp"
#include "rit/head/head.hpp"
#include "rit/numerics/ops.hpp"

namespace rit::cli {

using nn::Parameter;
using nn::ParameterSet;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor random_tensor(nn::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

/// Norm affines away from (1, 0) and running statistics away from (0, 1).
void randomize_norm_state(ParameterSet& set, Rng& rng) {
  for (Parameter* p : set.params()) {
    if (ends_with(p->name, ".gamma")) p->value = random_tensor(p->value.shape(), rng, 0.5, 1.5);
    if (ends_with(p->name, ".beta")) p->value = random_tensor(p->value.shape(), rng, -0.5, 0.5);
  }
  for (const nn::NamedBuffer& b : set.buffers()) {
    if (ends_with(b.name, "running_var")) *b.tensor = random_tensor(b.tensor->shape(), rng, 0.5, 2.0);
    if (ends_with(b.name, "running_mean")) *b.tensor = random_tensor(b.tensor->shape(), rng, -0.5, 0.5);
  }
}

/// One seeded instance: a loss over the parameters owned by `keep`.
struct Instance {
  std::shared_ptr<void> keep;
  ParameterSet set;
  nn::LossBuilder loss;
};

template <class T>
std::shared_ptr<T> own(Instance& inst, T value) {
  auto p = std::make_shared<T>(std::move(value));
  inst.keep = p;
  return p;
}

/// Random projection of an [N, D] output to a scalar.
Var project(Tape& t, const Var& out, const Tensor& proj) { return nn::sum(nn::mul(out, t.constant(proj))); }

Instance make_linear(Rng& r) {
  Instance inst;
  auto layer = own(inst, nn::LinearLayer("linear", 4, 3, true, r));
  layer->collect(inst.set);
  const Tensor x = random_tensor({5, 4}, r), proj = random_tensor({5, 3}, r);
  inst.loss = [layer, x, proj](Tape& t) { return project(t, layer->forward(t, t.constant(x)), proj); };
  return inst;
}

Instance make_norm(Rng& r, nn::NormKind kind, bool training) {
  Instance inst;
  auto layer = own(inst, nn::NormLayer(kind == nn::NormKind::batch ? "bn" : "ln", kind, 4));
  layer->collect(inst.set);
  randomize_norm_state(inst.set, r);
  const Tensor x = random_tensor({6, 4}, r), proj = random_tensor({6, 4}, r);
  inst.loss = [layer, x, proj, training](Tape& t) {
    return project(t, layer->forward(t, t.constant(x), training), proj);
  };
  return inst;
}

Instance make_mlp(Rng& r) {
  Instance inst;
  auto mlp = own(inst, attn::make_mlp("mlp", {4, 5, 3}, true, r));
  mlp->collect(inst.set);
  randomize_norm_state(inst.set, r);
  const Tensor x = random_tensor({6, 4}, r), proj = random_tensor({6, 3}, r);
  inst.loss = [mlp, x, proj](Tape& t) { return project(t, mlp->forward(t, t.constant(x), true), proj); };
  return inst;
}

Instance make_vector_attention(Rng& r) {
  Instance inst;
  auto layer = own(inst, attn::VectorAttention("attn", 3, 4, r));
  layer->collect(inst.set);
  randomize_norm_state(inst.set, r);
  const Tensor pts = random_tensor({6, 3}, r, -2.0, 2.0), x = random_tensor({6, 3}, r);
  const Tensor proj = random_tensor({6, 4}, r);
  const sampling::NeighborIndex nb = sampling::knn(pts, pts, 3);
  inst.loss = [layer, pts, x, proj, nb](Tape& t) {
    return project(t, layer->forward(t, t.constant(x), t.constant(x), pts, pts, nb, true), proj);
  };
  return inst;
}

Instance make_transformer_block(Rng& r) {
  Instance inst;
  auto block = own(inst, attn::TransformerBlock("block", 4, r));
  block->collect(inst.set);
  randomize_norm_state(inst.set, r);
  const Tensor pts = random_tensor({6, 3}, r, -2.0, 2.0), x = random_tensor({6, 4}, r);
  const Tensor proj = random_tensor({6, 4}, r);
  const sampling::NeighborIndex nb = sampling::knn(pts, pts, 3);
  inst.loss = [block, pts, x, proj, nb](Tape& t) {
    return project(t, block->forward(t, t.constant(x), pts, nb, true), proj);
  };
  return inst;
}

Instance make_safe(Rng& r) {
  Instance inst;
  attn::SafeConfig cfg;
  cfg.d1 = 3;
  cfg.d2 = 4;
  cfg.k = 3;
  auto safe = own(inst, attn::SafeModule(cfg, r));
  safe->collect(inst.set);
  randomize_norm_state(inst.set, r);
  const Tensor pts = random_tensor({5, 3}, r, -2.0, 2.0), prev_pts = random_tensor({7, 3}, r, -2.0, 2.0);
  const Tensor feats = random_tensor({5, 5}, r, -3.0, 3.0), prev = random_tensor({7, 5}, r, -3.0, 3.0);
  const Tensor proj = random_tensor({5, 7}, r);
  inst.loss = [safe, pts, prev_pts, feats, prev, proj](Tape& t) {
    return project(t, safe->forward(t, feats, pts, prev, prev_pts, true), proj);
  };
  return inst;
}

Instance make_backbone(Rng& r) {
  Instance inst;
  backbone::BackboneConfig cfg;
  // Width 4 at the finest stage: a layer norm over 2 channels is a smoothed
  // sign function whose curvature defeats any finite-difference step.
  cfg.widths = {4, 8};
  cfg.blocks = {1, 1};
  cfg.s1_pre = 1;
  cfg.k = 3;
  auto net = own(inst, backbone::Backbone(cfg, 3, r));
  net->collect(inst.set);
  randomize_norm_state(inst.set, r);
  const Tensor pts = random_tensor({8, 3}, r, -2.0, 2.0), x = random_tensor({8, 3}, r);
  const Tensor proj = random_tensor({8, 4}, r);
  inst.loss = [net, pts, x, proj](Tape& t) { return project(t, net->forward(t, t.constant(x), pts, true), proj); };
  return inst;
}

struct HeadFixture {
  head::Head h;
  Tensor x, pts;
  std::vector<int> labels, instances;
};

/// Collects every head parameter unless `collect_all` is false, in which
/// case the caller adds the branch it checks.
std::shared_ptr<HeadFixture> head_fixture(Instance& inst, Rng& r, bool offset, bool collect_all = true) {
  head::HeadConfig cfg;
  cfg.width = 4;
  cfg.k = 3;
  cfg.offset_head = offset;
  HeadFixture f{head::Head(cfg, r), random_tensor({8, 4}, r), random_tensor({8, 3}, r, -3.0, 3.0), {}, {}};
  for (std::size_t i = 0; i < 8; ++i) {
    f.labels.push_back(r.bernoulli(0.6) ? 1 : 0);
    f.instances.push_back(f.labels.back() ? static_cast<int>(r.integer(0, 1)) : -1);
  }
  auto p = own(inst, std::move(f));
  if (collect_all) p->h.collect(inst.set);
  return p;
}

/// MOS branch: focal Tversky over the softmax probabilities.
Instance make_head_mos(Rng& r) {
  Instance inst;
  auto f = head_fixture(inst, r, false, false);
  f->h.mos.collect(inst.set);
  inst.loss = [f](Tape& t) {
    const Var probs = nn::softmax(f->h.mos.forward(t, t.constant(f->x), true), 1);
    const auto& c = f->h.cfg;
    return nn::focal_tversky_loss(probs, f->labels, c.ftl_alpha, c.ftl_beta, c.ftl_gamma, c.ftl_smooth);
  };
  return inst;
}

Instance make_head_local(Rng& r) {
  Instance inst;
  auto f = head_fixture(inst, r, false, false);
  f->h.wq.collect(inst.set);
  f->h.wk.collect(inst.set);
  f->h.wr.collect(inst.set);
  const sampling::NeighborIndex nb = sampling::knn(f->pts, f->pts, f->h.cfg.k);
  const head::SimilarityTargets tg = head::build_targets(nb, f->labels, f->instances, {});
  const Tensor rel = attn::relative_positions(f->pts, f->pts, nb);
  const Tensor rel_flat = rel.reshaped({rel.size() / 3, 3});
  inst.loss = [f, nb, tg, rel_flat](Tape& t) {
    const Var x = t.constant(f->x);
    const Var pos = nn::reshape(nn::relu(f->h.wr.forward(t, t.constant(rel_flat))), {nb.rows, nb.k});
    return nn::bce_loss(head::local_similarity(f->h.wq.forward(t, x), f->h.wk.forward(t, x), pos, nb), tg.local);
  };
  return inst;
}

Instance make_head_global(Rng& r) {
  Instance inst;
  auto f = head_fixture(inst, r, false, false);
  f->h.wq.collect(inst.set);
  f->h.wk.collect(inst.set);
  const std::vector<std::size_t> rows = head::mask_rows(f->labels);
  const sampling::NeighborIndex nb = sampling::knn(f->pts, f->pts, f->h.cfg.k);
  const head::SimilarityTargets tg = head::build_targets(nb, f->labels, f->instances, rows);
  inst.loss = [f, rows, tg](Tape& t) {
    const Var x = t.constant(f->x);
    return nn::bce_loss(head::global_similarity(f->h.wq.forward(t, x), f->h.wk.forward(t, x), rows), tg.global);
  };
  return inst;
}

Instance make_head_full(Rng& r, bool offset) {
  Instance inst;
  auto f = head_fixture(inst, r, offset);
  randomize_norm_state(inst.set, r);
  inst.loss = [f](Tape& t) {
    const head::HeadOutput out = f->h.forward(t, t.constant(f->x), f->pts, true, f->labels);
    return f->h.loss(out, f->pts, f->labels, f->instances).total;
  };
  return inst;
}

/// Losses are checked with respect to their prediction input, produced
/// from a free parameter through the squashing the model uses.
Instance make_bce(Rng& r) {
  Instance inst;
  auto logits = own(inst, Parameter("bce.logits", random_tensor({6, 3}, r, -3.0, 3.0)));
  inst.set.add(*logits);
  Tensor target({6, 3});
  for (double& v : target.storage()) v = r.bernoulli(0.5) ? 1.0 : 0.0;
  inst.loss = [logits, target](Tape& t) { return nn::bce_loss(nn::sigmoid(t.param(*logits)), target); };
  return inst;
}

Instance make_focal_tversky(Rng& r) {
  Instance inst;
  auto logits = own(inst, Parameter("ftl.logits", random_tensor({7, 2}, r, -3.0, 3.0)));
  inst.set.add(*logits);
  std::vector<int> labels;
  for (int i = 0; i < 7; ++i) labels.push_back(r.bernoulli(0.4) ? 1 : 0);
  inst.loss = [logits, labels](Tape& t) {
    return nn::focal_tversky_loss(nn::softmax(t.param(*logits), 1), labels, 0.7, 0.3, 4.0 / 3.0, 1.0);
  };
  return inst;
}

Instance make_offset_l1(Rng& r) {
  Instance inst;
  auto offsets = own(inst, Parameter("offset.pred", random_tensor({5, 3}, r)));
  inst.set.add(*offsets);
  const Tensor target = random_tensor({5, 3}, r);
  inst.loss = [offsets, target](Tape& t) { return nn::offset_l1_loss(t.param(*offsets), target); };
  return inst;
}

using Factory = std::function<Instance(Rng&)>;

const std::vector<std::pair<std::string, Factory>>& registry() {
  static const std::vector<std::pair<std::string, Factory>> layers = {
      {"linear", make_linear},
      {"layer_norm", [](Rng& r) { return make_norm(r, nn::NormKind::layer, true); }},
      {"batch_norm.train", [](Rng& r) { return make_norm(r, nn::NormKind::batch, true); }},
      {"batch_norm.eval", [](Rng& r) { return make_norm(r, nn::NormKind::batch, false); }},
      {"mlp", make_mlp},
      {"vector_attention", make_vector_attention},
      {"transformer_block", make_transformer_block},
      {"safe", make_safe},
      {"backbone", make_backbone},
      {"head.mos", make_head_mos},
      {"head.local_similarity", make_head_local},
      {"head.global_similarity", make_head_global},
      {"head.loss", [](Rng& r) { return make_head_full(r, false); }},
      {"head.loss_offset", [](Rng& r) { return make_head_full(r, true); }},
      {"loss.bce", make_bce},
      {"loss.focal_tversky", make_focal_tversky},
      {"loss.offset_l1", make_offset_l1},
  };
  return layers;
}

}  // namespace

std::vector<std::string> gradcheck_layers() {
  std::vector<std::string> out;
  for (const auto& [name, _] : registry()) out.push_back(name);
  return out;
}

LayerCheck check_layer(const std::string& layer, std::uint64_t first_seed, std::size_t seeds, double tolerance,
                       const nn::GradCheckOptions& options) {
  const auto& reg = registry();
  auto it = std::find_if(reg.begin(), reg.end(), [&](const auto& e) { return e.first == layer; });
  RIT_EXPECT(it != reg.end(), ContractError, "unknown gradcheck layer '" + layer + "'");
  LayerCheck out;
  out.layer = layer;
  for (std::uint64_t s = first_seed; s < first_seed + seeds; ++s) {
    Rng rng(s);
    Instance inst = it->second(rng);
    if (out.parameter_groups.empty())
      for (const Parameter* p : inst.set.params()) out.parameter_groups.push_back(p->name);
    const nn::GradCheckReport rep = nn::fd_check(inst.loss, inst.set.params(), options);
    ++out.seeds;
    out.entries += rep.entries_checked;
    out.kinks_skipped += rep.kinks_skipped;
    if (rep.max_rel_error >= out.max_rel_error) {
      out.max_rel_error = rep.max_rel_error;
      out.worst = "seed " + std::to_string(s) + ": " + rep.worst_entry;
    }
  }
  out.pass = out.seeds > 0 && out.max_rel_error < tolerance;
  return out;
}

std::vector<LayerCheck> run_gradcheck_suite(std::uint64_t first_seed, std::size_t seeds, double tolerance,
                                            const nn::GradCheckOptions& options) {
  std::vector<LayerCheck> out;
  for (const std::string& name : gradcheck_layers())
    out.push_back(check_layer(name, first_seed, seeds, tolerance, options));
  return out;
}

std::string gradcheck_table(const std::vector<LayerCheck>& checks) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "layer" << std::right << std::setw(7) << "seeds" << std::setw(10) << "entries"
     << std::setw(7) << "kinks" << std::setw(13) << "max rel err" << "  result  worst\n";
  for (const LayerCheck& c : checks) {
    os << std::left << std::setw(24) << c.layer << std::right << std::setw(7) << c.seeds << std::setw(10)
       << c.entries << std::setw(7) << c.kinks_skipped << std::setw(13) << std::scientific << std::setprecision(2)
       << c.max_rel_error << std::defaultfloat << "  " << (c.pass ? "PASS  " : "FAIL  ") << "  " << c.worst << "\n";
    os << "    params:";
    for (const std::string& g : c.parameter_groups) os << " " << g;
    os << "\n";
  }
  return os.str();
}

}  // namespace rit::cli
