#include "rit/pointcloud/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rit/error.hpp"

namespace rit::pc {

namespace {

struct Scatterer {
  double x, y, rcs;
};

struct Instance {
  double x0, y0, vx, vy;
  double heading;
  std::vector<std::array<double, 2>> centers;  // body frame
  double rcs;
};

double uniform_angle(Rng& rng) { return rng.uniform(-std::numbers::pi, std::numbers::pi); }

/// First `k` entries of a seeded Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> choose(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

Instance make_instance(const ScriptedInstance& s, int max_points, Rng& rng) {
  Instance inst;
  inst.x0 = s.position[0];
  inst.y0 = s.position[1];
  inst.vx = s.velocity[0];
  inst.vy = s.velocity[1];
  inst.heading = (s.velocity[0] == 0.0 && s.velocity[1] == 0.0) ? 0.0 : std::atan2(s.velocity[1], s.velocity[0]);
  for (int c = 0; c < max_points; ++c) {
    inst.centers.push_back({rng.uniform(-0.5, 0.5) * s.length, rng.uniform(-0.5, 0.5) * s.width});
  }
  inst.rcs = rng.normal(0.0, 5.0);
  return inst;
}

}  // namespace

Sequence synth_scene(const SyntheticSceneConfig& cfg) {
  RIT_EXPECT(cfg.n_instances >= 0 && cfg.static_points >= 0 && cfg.frames >= 0, ContractError,
             "synthetic scene counts must be non-negative");
  RIT_EXPECT(cfg.min_points_per_instance >= 1 && cfg.max_points_per_instance >= cfg.min_points_per_instance,
             ContractError, "invalid points-per-instance range");
  RIT_EXPECT(cfg.min_speed >= 0.0 && cfg.max_speed >= cfg.min_speed, ContractError, "invalid speed range");
  RIT_EXPECT(cfg.fov_extent > 1.0, ContractError, "field of view must exceed 1 m");

  const Rng root(cfg.seed);
  Rng ego_rng = root.substream("ego");
  Rng world_rng = root.substream("world");
  Rng inst_rng = root.substream("instances");

  // Ego trajectory.
  const double ego_speed = ego_rng.uniform(0.0, cfg.max_ego_speed);
  const double yaw_rate = ego_rng.uniform(-cfg.max_yaw_rate, cfg.max_yaw_rate);
  const double yaw0 = uniform_angle(ego_rng);
  std::vector<Pose> true_poses;
  {
    double x = 0.0, y = 0.0, yaw = yaw0;
    for (int f = 0; f < cfg.frames; ++f) {
      true_poses.push_back(make_pose(yaw, x, y));
      x += ego_speed * cfg.frame_interval * std::cos(yaw);
      y += ego_speed * cfg.frame_interval * std::sin(yaw);
      yaw += yaw_rate * cfg.frame_interval;
    }
  }
  const double travel = ego_speed * cfg.frame_interval * std::max(cfg.frames, 1);

  // Persistent static scatterers covering everything the sensor can see.
  const double world_radius = cfg.fov_extent + travel;
  const double area_ratio = (world_radius * world_radius) / (cfg.fov_extent * cfg.fov_extent);
  const auto n_scatterers = static_cast<std::size_t>(std::ceil(1.3 * cfg.static_points * area_ratio));
  std::vector<Scatterer> scatterers;
  scatterers.reserve(n_scatterers);
  for (std::size_t i = 0; i < n_scatterers; ++i) {
    const double r = world_radius * std::sqrt(world_rng.uniform());
    const double a = uniform_angle(world_rng);
    scatterers.push_back({r * std::cos(a), r * std::sin(a), world_rng.normal(0.0, 5.0)});
  }

  // Moving instances.
  std::vector<Instance> instances;
  if (!cfg.scripted.empty()) {
    for (const ScriptedInstance& s : cfg.scripted) instances.push_back(make_instance(s, cfg.max_points_per_instance, inst_rng));
  } else {
    for (int i = 0; i < cfg.n_instances; ++i) {
      ScriptedInstance s;
      for (int attempt = 0; attempt < 50; ++attempt) {
        const double r = inst_rng.uniform(5.0, 0.8 * cfg.fov_extent);
        const double a = uniform_angle(inst_rng);
        s.position = {r * std::cos(a), r * std::sin(a)};
        const bool clear = std::all_of(instances.begin(), instances.end(), [&](const Instance& o) {
          return std::hypot(o.x0 - s.position[0], o.y0 - s.position[1]) > 4.0;
        });
        if (clear) break;
      }
      const double speed = inst_rng.uniform(cfg.min_speed, cfg.max_speed);
      const double heading = uniform_angle(inst_rng);
      s.velocity = {speed * std::cos(heading), speed * std::sin(heading)};
      s.length = inst_rng.uniform(0.5, 4.5);
      s.width = inst_rng.uniform(0.5, std::min(2.0, s.length));
      instances.push_back(make_instance(s, cfg.max_points_per_instance, inst_rng));
    }
  }

  Sequence seq;
  seq.id = "synth_" + std::to_string(cfg.seed);
  const auto clutter_count = static_cast<std::size_t>(std::lround(cfg.noise_fraction * cfg.static_points));

  for (int f = 0; f < cfg.frames; ++f) {
    Rng rng = root.substream("frame", static_cast<std::uint64_t>(f));
    const Pose& pose = true_poses[static_cast<std::size_t>(f)];
    const Pose inv = invert(pose);
    const double t = f * cfg.frame_interval;
    Scan scan;
    scan.timestamp = t;

    auto in_view = [&](double sx, double sy) {
      const double r = std::hypot(sx, sy);
      return r >= 1.0 && r <= cfg.fov_extent;
    };

    // Static detections from visible scatterers.
    std::vector<std::size_t> visible;
    for (std::size_t i = 0; i < scatterers.size(); ++i) {
      const auto s = transform_point(inv, scatterers[i].x, scatterers[i].y, 0.0);
      if (in_view(s[0], s[1])) visible.push_back(i);
    }
    for (std::size_t pick : choose(visible.size(), static_cast<std::size_t>(cfg.static_points), rng)) {
      const Scatterer& sc = scatterers[visible[pick]];
      const auto s = transform_point(inv, sc.x + rng.normal(0.0, cfg.position_jitter),
                                     sc.y + rng.normal(0.0, cfg.position_jitter), 0.0);
      RadarPoint p;
      p.x = s[0];
      p.y = s[1];
      p.rcs = sc.rcs + rng.normal(0.0, 1.0);
      p.doppler = rng.normal(0.0, cfg.doppler_noise);
      scan.points.push_back(p);
    }

    // Moving detections.
    for (std::size_t id = 0; id < instances.size(); ++id) {
      const Instance& inst = instances[id];
      const double cx = inst.x0 + inst.vx * t, cy = inst.y0 + inst.vy * t;
      const auto center = transform_point(inv, cx, cy, 0.0);
      if (!in_view(center[0], center[1])) continue;
      const auto count = static_cast<std::size_t>(rng.integer(cfg.min_points_per_instance, cfg.max_points_per_instance));
      // Velocity in the sensor frame: rotation part of the inverse pose.
      const double vsx = inv[0] * inst.vx + inv[1] * inst.vy;
      const double vsy = inv[4] * inst.vx + inv[5] * inst.vy;
      const double ch = std::cos(inst.heading), sh = std::sin(inst.heading);
      for (std::size_t pick : choose(inst.centers.size(), count, rng)) {
        const auto& c = inst.centers[pick];
        const double wx = cx + ch * c[0] - sh * c[1] + rng.normal(0.0, cfg.position_jitter);
        const double wy = cy + sh * c[0] + ch * c[1] + rng.normal(0.0, cfg.position_jitter);
        const auto s = transform_point(inv, wx, wy, 0.0);
        const double range = std::hypot(s[0], s[1]);
        if (range < 1e-6) continue;
        RadarPoint p;
        p.x = s[0];
        p.y = s[1];
        p.rcs = inst.rcs + rng.normal(0.0, 1.0);
        p.doppler = (vsx * s[0] + vsy * s[1]) / range + rng.normal(0.0, cfg.doppler_noise);
        p.label = MotionLabel::moving;
        p.instance_id = static_cast<int>(id);
        scan.points.push_back(p);
      }
    }

    // Clutter: transient static detections with spurious doppler.
    for (std::size_t i = 0; i < clutter_count; ++i) {
      const double r = 1.0 + (cfg.fov_extent - 1.0) * std::sqrt(rng.uniform());
      const double a = uniform_angle(rng);
      RadarPoint p;
      p.x = r * std::cos(a);
      p.y = r * std::sin(a);
      p.rcs = rng.normal(0.0, 5.0);
      p.doppler = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.0, cfg.max_clutter_doppler);
      scan.points.push_back(p);
    }

    // Randomize order so that no index carries label information.
    for (std::size_t i = scan.points.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
      std::swap(scan.points[i - 1], scan.points[j]);
    }

    scan.pose = pose;
    if (cfg.pose_noise > 0.0) {
      scan.pose[3] += rng.normal(0.0, cfg.pose_noise);
      scan.pose[7] += rng.normal(0.0, cfg.pose_noise);
    }
    seq.frames.push_back(std::move(scan));
  }
  return seq;
}

}  // namespace rit::pc
