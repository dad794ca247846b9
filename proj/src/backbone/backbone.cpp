#include "rit/backbone/backbone.hpp"

#include "rit/error.hpp"
#include "rit/numerics/ops.hpp"

namespace rit::backbone {

void BackboneConfig::validate() const {
  RIT_EXPECT(!widths.empty() && widths.size() == blocks.size(), ContractError,
             "backbone needs one block count per stage width");
  for (std::size_t l = 0; l < widths.size(); ++l) {
    RIT_EXPECT(widths[l] >= 2 && widths[l] % 2 == 0, ContractError, "stage widths must be even");
    RIT_EXPECT(l == 0 || widths[l] == 2 * widths[l - 1], ContractError, "stage widths must double per stage");
    RIT_EXPECT(l == 0 || blocks[l] >= 1, ContractError, "every coarse stage needs a block");
  }
  RIT_EXPECT(s1_pre <= blocks[0], ContractError, "s1_pre exceeds the S1 block count");
  RIT_EXPECT(k >= 1 && interp_k >= 1, ContractError, "neighborhood sizes must be positive");
}

Mlp make_linear_norm(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Mlp m;
  nn::MlpStage st;
  st.linear = nn::LinearLayer(name, in, out, true, rng);
  st.norm = nn::NormLayer(name + ".ln", nn::NormKind::layer, out);
  m.stages.push_back(std::move(st));
  return m;
}

StageState downsample(Tape& tape, const StageState& fine, Mlp& proj, std::size_t k, bool training) {
  const std::size_t n = fine.points.dim(0);
  RIT_EXPECT(n >= 1, ContractError, "downsampling an empty stage");
  StageState out;
  out.parent = sampling::fps(fine.points, (n + 1) / 2, 0);
  out.points = sampling::select_rows(fine.points, out.parent);
  const sampling::NeighborIndex nb = sampling::knn(out.points, fine.points, k);
  const Var h = proj.forward(tape, fine.features, training);
  out.features = sampling::maxpool_group(sampling::sample_and_group(h, nb));
  return out;
}

Var upsample(Tape& tape, const StageState& coarse, const StageState& fine, Mlp& coarse_proj, Mlp& fine_proj,
             std::size_t interp_k, bool training) {
  const Var c = coarse_proj.forward(tape, coarse.features, training);
  const Var interp = sampling::idw_interpolate(c, sampling::idw_stencil(coarse.points, fine.points, interp_k));
  const Var f = fine_proj.forward(tape, fine.features, training);
  return nn::add(fine.features, nn::add(f, interp));
}

Backbone::Backbone(const BackboneConfig& cfg_, std::size_t in_width, Rng& rng) : cfg(cfg_) {
  cfg.validate();
  const std::size_t L = cfg.widths.size();
  if (in_width != cfg.widths[0]) stem = make_linear_norm("backbone.stem", in_width, cfg.widths[0], rng);
  stages.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t b = 0; b < cfg.blocks[l]; ++b) {
      stages[l].emplace_back("backbone.stage" + std::to_string(l + 1) + ".block" + std::to_string(b), cfg.widths[l],
                             rng);
    }
  }
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const std::string s = std::to_string(l + 1);
    down.push_back(make_linear_norm("backbone.down" + s, cfg.widths[l], cfg.widths[l + 1], rng));
    up_coarse.push_back(make_linear_norm("backbone.up" + s + ".coarse", cfg.widths[l + 1], cfg.widths[l], rng));
    up_fine.push_back(make_linear_norm("backbone.up" + s + ".fine", cfg.widths[l], cfg.widths[l], rng));
  }
}

Var Backbone::forward(Tape& tape, const Var& x, const Tensor& points, bool training) {
  const std::size_t n = points.dim(0);
  RIT_EXPECT(x.shape().size() == 2 && x.shape()[0] == n, DimensionError, "backbone features and points disagree");
  if (n == 0) return tape.constant(Tensor({0, out_width()}));
  const std::size_t L = cfg.widths.size();

  std::vector<StageState> st(L);
  st[0].points = points;
  st[0].features = stem ? stem->forward(tape, x, training) : x;
  RIT_EXPECT(st[0].features.shape()[1] == cfg.widths[0], DimensionError, "backbone input width mismatch");

  auto run_blocks = [&](std::size_t l, std::size_t from, std::size_t to) {
    if (from >= to) return;
    const auto nb = sampling::knn(st[l].points, st[l].points, cfg.k);
    for (std::size_t b = from; b < to; ++b)
      st[l].features = stages[l][b].forward(tape, st[l].features, st[l].points, nb, training);
  };

  run_blocks(0, 0, cfg.s1_pre);
  for (std::size_t l = 1; l < L; ++l) {
    st[l] = downsample(tape, st[l - 1], down[l - 1], cfg.k, training);
    run_blocks(l, 0, cfg.blocks[l]);
  }
  for (std::size_t l = L - 1; l >= 1; --l)
    st[l - 1].features = upsample(tape, st[l], st[l - 1], up_coarse[l - 1], up_fine[l - 1], cfg.interp_k, training);
  run_blocks(0, cfg.s1_pre, cfg.blocks[0]);
  return st[0].features;
}

void Backbone::collect(ParameterSet& set) {
  if (stem) stem->collect(set);
  for (auto& s : stages)
    for (auto& b : s) b.collect(set);
  for (auto& m : down) m.collect(set);
  for (auto& m : up_coarse) m.collect(set);
  for (auto& m : up_fine) m.collect(set);
}

}  // namespace rit::backbone
