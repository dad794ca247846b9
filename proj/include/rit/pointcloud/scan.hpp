#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rit/numerics/rng.hpp"
#include "rit/numerics/tensor.hpp"

namespace rit::pc {

enum class MotionLabel : std::uint8_t { stationary = 0, moving = 1 };

struct RadarPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double rcs = 0.0;      ///< radar cross section, dBsm
  double doppler = 0.0;  ///< ego-motion compensated radial velocity, m/s
  MotionLabel label = MotionLabel::stationary;
  std::optional<int> instance_id;  ///< present iff label == moving

  friend bool operator==(const RadarPoint&, const RadarPoint&) = default;
};

/// Row-major 4x4 homogeneous world-from-sensor transform.
using Pose = std::array<double, 16>;

Pose identity_pose();
/// Rotation about +z by `yaw` radians followed by translation.
Pose make_pose(double yaw, double tx, double ty, double tz = 0.0);
Pose compose(const Pose& a, const Pose& b);
/// Throws ContractError when the matrix is singular.
Pose invert(const Pose& p);
std::array<double, 3> transform_point(const Pose& p, double x, double y, double z);
/// Bottom row (0,0,0,1) and orthonormal rotation block within `tol`.
bool is_rigid(const Pose& p, double tol = 1e-6);

struct Scan {
  std::vector<RadarPoint> points;
  double timestamp = 0.0;
  Pose pose = identity_pose();
  bool padded = false;

  std::size_t size() const { return points.size(); }
  friend bool operator==(const Scan&, const Scan&) = default;
};

/// Checks point and pose invariants; throws ContractError on violation.
void validate(const Scan& scan);

struct Sequence {
  std::string id;
  std::vector<Scan> frames;
};

/// Current scan plus up to T previous scans, oldest first.
struct SequenceWindow {
  Scan current;
  std::vector<Scan> previous;
  bool aligned = false;
};

inline constexpr std::size_t kPadPoints = 1024;

/// Frame t of `seq` with the min(t, T) frames before it.
SequenceWindow make_window(const Sequence& seq, std::size_t t, std::size_t T);

/// Expresses every previous point in the current sensor frame via
/// inverse(current.pose) * previous.pose. Doppler and RCS are unchanged.
SequenceWindow align_previous(const SequenceWindow& window);

/// Fills missing previous scans at the oldest positions with scans of
/// kPadPoints all-zero, static points located at the sensor origin. Throws
/// ContractError if the window already holds more than T previous scans.
SequenceWindow pad_previous(const SequenceWindow& window, std::size_t T);

/// Concatenation of all previous scans (oldest first).
Scan aggregate_previous(const SequenceWindow& window);

/// [N, 5] rows (x, y, z, rcs, doppler) in scan order.
nn::Tensor feature_matrix(const Scan& scan);
/// [N, 3] coordinates.
nn::Tensor positions(const Scan& scan);

std::vector<int> label_vector(const Scan& scan);
std::vector<int> instance_vector(const Scan& scan);  ///< -1 for static points

// -- augmentation ---------------------------------------------------------------

enum class FlipAxis : std::uint8_t { none, x_axis, y_axis };

/// One draw of the geometric augmentation. Flipping about the x axis negates
/// y; flipping about the y axis negates x.
struct AugmentDraw {
  double scale = 1.0;
  std::array<double, 3> shift{0.0, 0.0, 0.0};
  FlipAxis flip = FlipAxis::none;
  double jitter_std = 0.0;
};

/// scale in [0.95, 1.05], shift in +-0.1 m per axis, flip uniform over
/// {none, x, y}, Gaussian jitter with variance 0.01.
AugmentDraw sample_augmentation(Rng& rng);
/// Flip, then scale, then shift, then per-point jitter drawn from `rng`.
Scan apply_augmentation(const Scan& scan, const AugmentDraw& draw, Rng& rng);
Scan augment(const Scan& scan, Rng& rng);
/// Applies one shared draw to every scan of an aligned window.
SequenceWindow augment_window(const SequenceWindow& window, Rng& rng);

}  // namespace rit::pc
