#include "rit/pointcloud/scan.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "rit/error.hpp"

namespace rit::pc {

namespace {

using Mat4 = Eigen::Matrix<double, 4, 4, Eigen::RowMajor>;

Mat4 to_mat(const Pose& p) { return Eigen::Map<const Mat4>(p.data()); }

Pose from_mat(const Mat4& m) {
  Pose p;
  Eigen::Map<Mat4>(p.data()) = m;
  return p;
}

}  // namespace

Pose identity_pose() { return from_mat(Mat4::Identity()); }

Pose make_pose(double yaw, double tx, double ty, double tz) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return Pose{c, -s, 0, tx, s, c, 0, ty, 0, 0, 1, tz, 0, 0, 0, 1};
}

Pose compose(const Pose& a, const Pose& b) { return from_mat(to_mat(a) * to_mat(b)); }

Pose invert(const Pose& p) {
  const Mat4 m = to_mat(p);
  const double det = m.determinant();
  RIT_EXPECT(std::isfinite(det) && std::abs(det) > 1e-12, ContractError, "pose is not invertible");
  return from_mat(m.inverse());
}

std::array<double, 3> transform_point(const Pose& p, double x, double y, double z) {
  return {p[0] * x + p[1] * y + p[2] * z + p[3], p[4] * x + p[5] * y + p[6] * z + p[7],
          p[8] * x + p[9] * y + p[10] * z + p[11]};
}

bool is_rigid(const Pose& p, double tol) {
  if (p[12] != 0.0 || p[13] != 0.0 || p[14] != 0.0 || p[15] != 1.0) return false;
  const Mat4 m = to_mat(p);
  const Eigen::Matrix3d r = m.block<3, 3>(0, 0);
  return (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol;
}

void validate(const Scan& scan) {
  RIT_EXPECT(is_rigid(scan.pose), ContractError, "scan pose is not a rigid homogeneous transform");
  for (const RadarPoint& p : scan.points) {
    RIT_EXPECT(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z), ContractError,
               "radar point with non-finite coordinates");
    const bool moving = p.label == MotionLabel::moving;
    RIT_EXPECT(moving == p.instance_id.has_value(), ContractError,
               "instance id must be present exactly for moving points");
    RIT_EXPECT(!p.instance_id || *p.instance_id >= 0, ContractError, "negative instance id");
  }
}

SequenceWindow make_window(const Sequence& seq, std::size_t t, std::size_t T) {
  RIT_EXPECT(t < seq.frames.size(), ContractError, "window frame index out of range");
  SequenceWindow w;
  w.current = seq.frames[t];
  const std::size_t first = t >= T ? t - T : 0;
  for (std::size_t f = first; f < t; ++f) w.previous.push_back(seq.frames[f]);
  return w;
}

SequenceWindow align_previous(const SequenceWindow& window) {
  SequenceWindow out = window;
  const Pose current_inv = invert(window.current.pose);
  for (Scan& scan : out.previous) {
    const Pose rel = compose(current_inv, scan.pose);
    for (RadarPoint& p : scan.points) {
      const auto q = transform_point(rel, p.x, p.y, p.z);
      p.x = q[0];
      p.y = q[1];
      p.z = q[2];
    }
    scan.pose = window.current.pose;
  }
  out.aligned = true;
  return out;
}

SequenceWindow pad_previous(const SequenceWindow& window, std::size_t T) {
  RIT_EXPECT(window.previous.size() <= T, ContractError, "window holds more than T previous scans");
  SequenceWindow out;
  out.current = window.current;
  out.aligned = window.aligned;
  const std::size_t missing = T - window.previous.size();
  for (std::size_t i = 0; i < missing; ++i) {
    Scan pad;
    pad.points.assign(kPadPoints, RadarPoint{});
    pad.pose = window.current.pose;
    pad.timestamp = window.current.timestamp;
    pad.padded = true;
    out.previous.push_back(std::move(pad));
  }
  out.previous.insert(out.previous.end(), window.previous.begin(), window.previous.end());
  return out;
}

Scan aggregate_previous(const SequenceWindow& window) {
  Scan all;
  all.pose = window.current.pose;
  all.timestamp = window.current.timestamp;
  for (const Scan& s : window.previous) all.points.insert(all.points.end(), s.points.begin(), s.points.end());
  return all;
}

nn::Tensor feature_matrix(const Scan& scan) {
  nn::Tensor out({scan.size(), 5});
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const RadarPoint& p = scan.points[i];
    out(i, 0) = p.x;
    out(i, 1) = p.y;
    out(i, 2) = p.z;
    out(i, 3) = p.rcs;
    out(i, 4) = p.doppler;
  }
  return out;
}

nn::Tensor positions(const Scan& scan) {
  nn::Tensor out({scan.size(), 3});
  for (std::size_t i = 0; i < scan.size(); ++i) {
    out(i, 0) = scan.points[i].x;
    out(i, 1) = scan.points[i].y;
    out(i, 2) = scan.points[i].z;
  }
  return out;
}

std::vector<int> label_vector(const Scan& scan) {
  std::vector<int> out(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) out[i] = scan.points[i].label == MotionLabel::moving ? 1 : 0;
  return out;
}

std::vector<int> instance_vector(const Scan& scan) {
  std::vector<int> out(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) out[i] = scan.points[i].instance_id.value_or(-1);
  return out;
}

AugmentDraw sample_augmentation(Rng& rng) {
  AugmentDraw d;
  d.scale = rng.uniform(0.95, 1.05);
  for (double& s : d.shift) s = rng.uniform(-0.1, 0.1);
  d.flip = static_cast<FlipAxis>(rng.integer(0, 2));
  d.jitter_std = 0.1;  // variance 0.01
  return d;
}

Scan apply_augmentation(const Scan& scan, const AugmentDraw& draw, Rng& rng) {
  Scan out = scan;
  for (RadarPoint& p : out.points) {
    if (draw.flip == FlipAxis::x_axis) p.y = -p.y;
    if (draw.flip == FlipAxis::y_axis) p.x = -p.x;
    p.x = p.x * draw.scale + draw.shift[0];
    p.y = p.y * draw.scale + draw.shift[1];
    p.z = p.z * draw.scale + draw.shift[2];
    if (draw.jitter_std > 0.0) {
      p.x += rng.normal(0.0, draw.jitter_std);
      p.y += rng.normal(0.0, draw.jitter_std);
      p.z += rng.normal(0.0, draw.jitter_std);
    }
  }
  return out;
}

Scan augment(const Scan& scan, Rng& rng) {
  const AugmentDraw draw = sample_augmentation(rng);
  return apply_augmentation(scan, draw, rng);
}

SequenceWindow augment_window(const SequenceWindow& window, Rng& rng) {
  const AugmentDraw draw = sample_augmentation(rng);
  SequenceWindow out = window;
  out.current = apply_augmentation(window.current, draw, rng);
  for (Scan& s : out.previous)
    if (!s.padded) s = apply_augmentation(s, draw, rng);
  return out;
}

}  // namespace rit::pc
