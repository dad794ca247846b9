#pragma once

#include <optional>
#include <vector>

#include "rit/attention/attention.hpp"

namespace rit::backbone {

using attn::TransformerBlock;
using nn::Mlp;
using nn::ParameterSet;
using nn::Tape;
using nn::Tensor;
using nn::Var;

struct BackboneConfig {
  std::vector<std::size_t> widths{48, 96, 192, 384};
  std::vector<std::size_t> blocks{6, 4, 2, 1};
  /// S1 blocks run before the decoder fusion; the remaining
  /// blocks[0] - s1_pre run after it.
  std::size_t s1_pre = 4;
  std::size_t k = 12;
  std::size_t interp_k = 3;

  /// Throws ContractError unless widths double per stage, counts are
  /// positive and s1_pre <= blocks[0].
  void validate() const;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Points and features of one resolution level. `parent` maps each point to
/// its row in the previous (finer) stage.
struct StageState {
  Tensor points;
  Var features;
  std::vector<std::size_t> parent;
};

/// Linear followed by layer norm.
Mlp make_linear_norm(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

/// FPS to ceil(N/2) points, then max-pool over the k nearest parent points
/// of LN(Linear(x)) with Linear D -> 2D.
StageState downsample(Tape& tape, const StageState& fine, Mlp& proj, std::size_t k, bool training);

/// fine.features + LN(Linear(fine.features)) + IDW(LN(Linear(coarse.features)))
/// with the coarse path D -> D/2.
Var upsample(Tape& tape, const StageState& coarse, const StageState& fine, Mlp& coarse_proj, Mlp& fine_proj,
             std::size_t interp_k, bool training);

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, std::size_t in_width, Rng& rng);

  /// Full-resolution forward: [N, in_width] -> [N, widths[0]] for any N >= 0.
  Var forward(Tape& tape, const Var& x, const Tensor& points, bool training);
  void collect(ParameterSet& set);
  std::size_t out_width() const { return cfg.widths.front(); }

  BackboneConfig cfg;
  std::optional<Mlp> stem;  // present when in_width != widths[0]
  std::vector<std::vector<TransformerBlock>> stages;
  std::vector<Mlp> down;         // down[l] maps stage l to l + 1
  std::vector<Mlp> up_coarse;    // up_*[l] fuses stage l + 1 into stage l
  std::vector<Mlp> up_fine;
};

}  // namespace rit::backbone
