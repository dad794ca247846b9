#include "rit/attention/attention.hpp"

#include "rit/error.hpp"
#include "rit/numerics/ops.hpp"

namespace rit::attn {

Tensor relative_positions(const Tensor& query_pts, const Tensor& source_pts, const NeighborIndex& neighbors) {
  RIT_EXPECT(query_pts.rank() == 2 && query_pts.dim(1) == 3 && query_pts.dim(0) == neighbors.rows, DimensionError,
             "query points do not match the neighbor index");
  RIT_EXPECT(source_pts.rank() == 2 && source_pts.dim(1) == 3 && source_pts.dim(0) == neighbors.source_size,
             DimensionError, "source points do not match the neighbor index");
  Tensor out({neighbors.rows, neighbors.k, 3});
  for (std::size_t i = 0; i < neighbors.rows; ++i)
    for (std::size_t j = 0; j < neighbors.k; ++j)
      for (std::size_t c = 0; c < 3; ++c) out(i, j, c) = query_pts(i, c) - source_pts(neighbors(i, j), c);
  return out;
}

Mlp make_mlp(const std::string& name, const std::vector<std::size_t>& dims, bool norm_last, Rng& rng) {
  Mlp mlp;
  for (std::size_t s = 0; s + 1 < dims.size(); ++s) {
    const std::string stage = name + "." + std::to_string(s);
    const bool last = s + 2 == dims.size();
    nn::MlpStage st;
    const bool bn = !last || norm_last;
    // A bias right before batch norm is cancelled by the mean subtraction.
    st.linear = nn::LinearLayer(stage, dims[s], dims[s + 1], !bn, rng);
    if (bn) st.norm = nn::NormLayer(stage + ".bn", nn::NormKind::batch, dims[s + 1]);
    st.activation = last ? nn::Activation::none : nn::Activation::relu;
    mlp.stages.push_back(std::move(st));
  }
  return mlp;
}

VectorAttention::VectorAttention(const std::string& name, std::size_t in_dim, std::size_t out_dim, Rng& rng)
    // Query and key biases only shift every logit of a channel equally,
    // which the per-channel softmax ignores.
    : wq(name + ".wq", in_dim, out_dim, false, rng),
      wk(name + ".wk", in_dim, out_dim, false, rng),
      wv(name + ".wv", in_dim, out_dim, true, rng),
      pos_mlp(make_mlp(name + ".pos_mlp", {3, 3, out_dim}, false, rng)),
      weight_mlp(make_mlp(name + ".weight_mlp", {out_dim, out_dim, out_dim}, false, rng)) {}

Var VectorAttention::forward(Tape& tape, const Var& query_feats, const Var& source_feats, const Tensor& query_pts,
                             const Tensor& source_pts, const NeighborIndex& neighbors, bool training) {
  const std::size_t n = neighbors.rows, k = neighbors.k, d = out_dim();
  RIT_EXPECT(query_feats.shape().size() == 2 && query_feats.shape()[0] == n, DimensionError,
             "query features do not match the neighbor index");
  RIT_EXPECT(source_feats.shape().size() == 2 && source_feats.shape()[0] == neighbors.source_size, DimensionError,
             "source features do not match the neighbor index");
  const Var q = wq.forward(tape, query_feats);
  const Var key = wk.forward(tape, source_feats);
  const Var val = wv.forward(tape, source_feats);

  std::vector<std::size_t> self(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) self[i * k + j] = i;
  const Var qg = nn::gather_rows(q, self, {n, k});
  const Var kg = nn::gather_rows(key, neighbors.indices, {n, k});
  const Var vg = nn::gather_rows(val, neighbors.indices, {n, k});

  const Tensor rel = relative_positions(query_pts, source_pts, neighbors).reshaped({n * k, 3});
  const Var r = nn::reshape(pos_mlp.forward(tape, tape.constant(rel), training), {n, k, d});

  const Var logits = nn::add(nn::sub(qg, kg), r);
  Var a = nn::softmax(logits, 1);
  if (!weight_mlp.empty()) a = nn::reshape(weight_mlp.forward(tape, nn::reshape(a, {n * k, d}), training), {n, k, d});
  return nn::sum_neighbors(nn::mul(a, nn::add(vg, r)));
}

void VectorAttention::collect(ParameterSet& set) {
  wq.collect(set);
  wk.collect(set);
  wv.collect(set);
  pos_mlp.collect(set);
  weight_mlp.collect(set);
}

TransformerBlock::TransformerBlock(const std::string& name, std::size_t dim, Rng& rng)
    : ln1(name + ".ln1", nn::NormKind::layer, dim),
      ln2(name + ".ln2", nn::NormKind::layer, dim),
      attn(name + ".attn", dim, dim, rng),
      fc1(name + ".fc1", dim, dim, true, rng),
      fc2(name + ".fc2", dim, dim, true, rng) {}

Var TransformerBlock::forward(Tape& tape, const Var& x, const Tensor& pts, const NeighborIndex& neighbors,
                              bool training) {
  const Var h = ln1.forward(tape, x, training);
  const Var a = attn.forward(tape, h, h, pts, pts, neighbors, training);
  const Var f = fc2.forward(tape, nn::gelu(fc1.forward(tape, ln2.forward(tape, a, training))));
  return nn::add(x, f);
}

void TransformerBlock::collect(ParameterSet& set) {
  ln1.collect(set);
  attn.collect(set);
  ln2.collect(set);
  fc1.collect(set);
  fc2.collect(set);
}

void TransformerBlock::zero_residual() { fc2.set_zero(); }

namespace {

Mlp make_lift(const std::string& name, std::size_t out, Rng& rng) {
  Mlp mlp;
  nn::MlpStage st;
  st.linear = nn::LinearLayer(name + ".0", 5, out, true, rng);
  st.norm = nn::NormLayer(name + ".0.ln", nn::NormKind::layer, out);
  st.activation = nn::Activation::relu;
  mlp.stages.push_back(std::move(st));
  return mlp;
}

Tensor scaled(const Tensor& feats, const std::array<double, 5>& s) {
  RIT_EXPECT(feats.rank() == 2 && feats.dim(1) == 5, DimensionError,
             "point features must be [N, 5], got " + nn::shape_string(feats.shape()));
  Tensor out = feats;
  for (std::size_t i = 0; i < out.dim(0); ++i)
    for (std::size_t c = 0; c < 5; ++c) out(i, c) *= s[c];
  return out;
}

}  // namespace

SafeModule::SafeModule(const SafeConfig& cfg_, Rng& rng)
    : cfg(cfg_),
      lift_current(make_lift("safe.lift_current", cfg_.d1, rng)),
      lift_previous(make_lift("safe.lift_previous", cfg_.d1, rng)),
      attn("safe.attn", cfg_.d1, cfg_.d2, rng) {}

Var SafeModule::forward(Tape& tape, const Tensor& current_feats, const Tensor& current_pts,
                        const Tensor& previous_feats, const Tensor& previous_pts, bool training) {
  const std::size_t n = current_feats.dim(0);
  const Var cur = lift_current.forward(tape, tape.constant(scaled(current_feats, cfg.input_scale)), training);
  Var temporal;
  if (cfg.T == 0 || previous_feats.dim(0) == 0) {
    temporal = tape.constant(Tensor({n, cfg.d2}));
  } else {
    const Var prev = lift_previous.forward(tape, tape.constant(scaled(previous_feats, cfg.input_scale)), training);
    const NeighborIndex nb = sampling::knn(current_pts, previous_pts, cfg.k);
    temporal = attn.forward(tape, cur, prev, current_pts, previous_pts, nb, training);
  }
  return nn::concat_cols(temporal, cur);
}

void SafeModule::collect(ParameterSet& set) {
  lift_current.collect(set);
  lift_previous.collect(set);
  attn.collect(set);
}

}  // namespace rit::attn
