#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rit/numerics/tensor.hpp"
#include "rit/pointcloud/scan.hpp"

namespace rit::metrics {

using nn::Tensor;

/// Per-point label (1 = moving) and instance id (-1 for static points).
struct PanopticResult {
  std::vector<int> labels;
  std::vector<int> instances;

  std::size_t size() const { return labels.size(); }
  friend bool operator==(const PanopticResult&, const PanopticResult&) = default;
};

/// Throws ContractError unless sizes agree and ids are present iff moving.
void validate(const PanopticResult& r);

/// Ground truth of a scan in panoptic form.
PanopticResult ground_truth(const pc::Scan& scan);

/// 100 * TP / (TP + FP + FN) over points of class `cls`; nullopt when the
/// class appears in neither labeling.
std::optional<double> iou_semantic(std::span<const int> pred, std::span<const int> gt, int cls);

struct ClassScores {
  double pq = 0.0, sq = 0.0, rq = 0.0;
  /// Semantic IoU; nullopt when the class never occurs.
  std::optional<double> iou;
  /// No ground-truth and no predicted segment: PQ/SQ/RQ are reported as 100.
  bool empty = false;
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  ClassScores moving, stat;
  /// Unweighted means over the two classes.
  double pq = 0.0, sq = 0.0, rq = 0.0, miou = 0.0;
  std::size_t scans = 0;

  std::string to_json() const;
  /// Fixed-width table with PQ, mIoU, SQ, RQ and the per-class columns.
  std::string to_table() const;
};

/// Accumulates segment matches and point counts over scans; scores come
/// from the pooled TP/FP/FN counts and IoU sums, not per-scan averages.
class PanopticAccumulator {
 public:
  void add(const PanopticResult& pred, const PanopticResult& gt);
  EvalReport report() const;

 private:
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
    double iou_sum = 0.0;
    std::size_t point_tp = 0, point_fp = 0, point_fn = 0;
  };
  static ClassScores scores(const Counts& c);
  Counts moving_, stat_;
  std::size_t scans_ = 0;
};

EvalReport panoptic_eval(const PanopticResult& pred, const PanopticResult& gt);
EvalReport panoptic_eval(std::span<const PanopticResult> preds, std::span<const PanopticResult> gts);

/// Connected components of the radius graph (||p_i - p_j|| <= r) over the
/// rows of `points`, labeled by smallest member index order.
std::vector<int> radius_components(const Tensor& points, double r);

/// |doppler| > v_t is moving; moving points are grouped into instances by
/// radius-graph connected components.
PanopticResult threshold_baseline(const Tensor& points, std::span<const double> doppler, double v_t, double r);
PanopticResult threshold_baseline(const pc::Scan& scan, double v_t, double r);

inline constexpr double kBaselineVelocity = 0.92;

/// Clustering radius among `radii` with the highest pooled PQ_mov over
/// `scans` (first on ties).
double sweep_baseline_radius(std::span<const pc::Scan> scans, double v_t, std::span<const double> radii);

/// One line per point: {"label": "static"|"moving", "instance": int|null}.
std::string result_to_jsonl(const PanopticResult& r);
/// Inverse of result_to_jsonl; parse errors name `source_name` and the line.
PanopticResult result_from_jsonl(const std::string& text, const std::string& source_name = "<result>");

}  // namespace rit::metrics
