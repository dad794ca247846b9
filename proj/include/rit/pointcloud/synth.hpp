#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rit/pointcloud/scan.hpp"

namespace rit::pc {

/// Explicitly placed instance, used instead of random ones when given.
/// Position and velocity are in the world frame at frame 0.
struct ScriptedInstance {
  std::array<double, 2> position{0.0, 0.0};
  std::array<double, 2> velocity{0.0, 0.0};
  double length = 1.0;
  double width = 1.0;

  friend bool operator==(const ScriptedInstance&, const ScriptedInstance&) = default;
};

struct SyntheticSceneConfig {
  int n_instances = 4;
  int min_points_per_instance = 3;
  int max_points_per_instance = 12;
  int static_points = 100;
  /// Clutter detections per scan as a fraction of static_points. Clutter is
  /// labeled static, is not persistent over time and carries |doppler| up
  /// to max_clutter_doppler.
  double noise_fraction = 0.1;
  double max_clutter_doppler = 3.0;
  double min_speed = 2.0;  ///< m/s
  double max_speed = 10.0;
  double fov_extent = 50.0;  ///< sensor range, m
  int frames = 12;
  double frame_interval = 0.2;  ///< s
  double max_ego_speed = 5.0;
  double max_yaw_rate = 0.1;  ///< rad/s
  double doppler_noise = 0.05;
  double position_jitter = 0.1;
  /// Std-dev of independent per-frame pose perturbation (translation, m).
  double pose_noise = 0.0;
  std::vector<ScriptedInstance> scripted;
  std::uint64_t seed = 0;

  friend bool operator==(const SyntheticSceneConfig&, const SyntheticSceneConfig&) = default;
};

/// Generates `frames` scans of one sensor moving through a static world
/// with instances translating at constant velocity. Moving detections carry
/// the radial projection of their instance velocity as doppler.
Sequence synth_scene(const SyntheticSceneConfig& cfg);

}  // namespace rit::pc
