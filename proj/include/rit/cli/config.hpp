#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rit/attention/attention.hpp"
#include "rit/backbone/backbone.hpp"
#include "rit/head/head.hpp"
#include "rit/numerics/optim.hpp"
#include "rit/pointcloud/synth.hpp"

namespace rit::cli {

/// Synthetic dataset layout: `sequences` scenes of `synth.frames` frames,
/// each seeded from the pipeline seed.
struct DataConfig {
  std::size_t sequences = 42;
  /// Windows used from a dataset, in (sequence, frame) order; 0 means all.
  std::size_t windows = 0;
  pc::SyntheticSceneConfig synth;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  nn::OptimizerConfig optimizer;
  nn::StepSchedule schedule;
  bool augment = true;
  /// Fraction of the epochs during which gt-moving rows are added to the
  /// global similarity.
  double teacher_forcing = 0.5;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct PipelineConfig {
  std::size_t T = 2;
  attn::SafeConfig safe;
  backbone::BackboneConfig backbone;
  head::HeadConfig head;
  double r = 7.0;    ///< partition radius, m
  double v_t = 0.92; ///< baseline doppler threshold, m/s
  double baseline_r = 3.0;  ///< baseline clustering radius, m
  TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 0;

  /// Checks internal consistency (T matches safe.T, widths, counts).
  void validate() const;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

/// Stage widths 16/32/64/128, blocks 2/2/1/1, one S1 block before fusion.
PipelineConfig miniature_config();

std::string to_json(const PipelineConfig& cfg);
/// Missing keys keep the values already in `base`; unknown keys are errors.
/// Setting T without safe.T sets both.
PipelineConfig from_json(const std::string& text, const PipelineConfig& base = {},
                         const std::string& source_name = "<config>");
void save_config(const std::filesystem::path& path, const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path, const PipelineConfig& base = {});

/// Applies RIT_SEED from the environment when set.
void apply_env(PipelineConfig& cfg);

}  // namespace rit::cli
