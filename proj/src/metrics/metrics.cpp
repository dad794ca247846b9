#include "rit/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rit/error.hpp"
#include "rit/sampling/sampling.hpp"

namespace rit::metrics {

using json = nlohmann::json;

void validate(const PanopticResult& r) {
  RIT_EXPECT(r.labels.size() == r.instances.size(), ContractError, "labels and instances differ in length");
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    RIT_EXPECT(r.labels[i] == 0 || r.labels[i] == 1, ContractError, "labels must be 0 (static) or 1 (moving)");
    RIT_EXPECT((r.labels[i] == 1) == (r.instances[i] >= 0), ContractError,
               "instance ids must be present exactly for moving points");
  }
}

PanopticResult ground_truth(const pc::Scan& scan) { return {pc::label_vector(scan), pc::instance_vector(scan)}; }

std::optional<double> iou_semantic(std::span<const int> pred, std::span<const int> gt, int cls) {
  RIT_EXPECT(pred.size() == gt.size(), ContractError, "label vectors differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls, g = gt[i] == cls;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp + fn == 0) return std::nullopt;
  return 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

void PanopticAccumulator::add(const PanopticResult& pred, const PanopticResult& gt) {
  validate(pred);
  validate(gt);
  RIT_EXPECT(pred.size() == gt.size(), ContractError, "prediction and ground truth cover different points");
  ++scans_;
  const std::size_t n = gt.size();

  for (std::size_t i = 0; i < n; ++i) {
    for (auto [cls, counts] : {std::pair{1, &moving_}, std::pair{0, &stat_}}) {
      const bool p = pred.labels[i] == cls, g = gt.labels[i] == cls;
      counts->point_tp += p && g;
      counts->point_fp += p && !g;
      counts->point_fn += !p && g;
    }
  }

  // Stuff: one static segment per side.
  std::size_t inter = 0, uni = 0, gt_static = 0, pred_static = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool p = pred.labels[i] == 0, g = gt.labels[i] == 0;
    inter += p && g;
    uni += p || g;
    gt_static += g;
    pred_static += p;
  }
  if (uni > 0) {
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    if (iou > 0.5) {
      ++stat_.tp;
      stat_.iou_sum += iou;
    } else {
      stat_.fn += gt_static > 0;
      stat_.fp += pred_static > 0;
    }
  }

  // Things: moving instances as point sets, matched at IoU > 0.5.
  std::map<int, std::size_t> gt_size, pred_size;
  std::map<std::pair<int, int>, std::size_t> overlap;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.labels[i] == 1) ++gt_size[gt.instances[i]];
    if (pred.labels[i] == 1) ++pred_size[pred.instances[i]];
    if (gt.labels[i] == 1 && pred.labels[i] == 1) ++overlap[{pred.instances[i], gt.instances[i]}];
  }
  std::map<int, int> gt_matched, pred_matched;
  for (const auto& [key, o] : overlap) {
    const auto [p, g] = key;
    const double iou = static_cast<double>(o) / static_cast<double>(pred_size[p] + gt_size[g] - o);
    if (iou <= 0.5) continue;
    RIT_EXPECT(!gt_matched.count(g) && !pred_matched.count(p), ContractError, "IoU > 0.5 matching must be unique");
    gt_matched[g] = p;
    pred_matched[p] = g;
    ++moving_.tp;
    moving_.iou_sum += iou;
  }
  moving_.fn += gt_size.size() - gt_matched.size();
  moving_.fp += pred_size.size() - pred_matched.size();
}

ClassScores PanopticAccumulator::scores(const Counts& c) {
  ClassScores s;
  s.tp = c.tp;
  s.fp = c.fp;
  s.fn = c.fn;
  const std::size_t points = c.point_tp + c.point_fp + c.point_fn;
  if (points > 0) s.iou = 100.0 * static_cast<double>(c.point_tp) / static_cast<double>(points);
  if (c.tp + c.fp + c.fn == 0) {
    s.empty = true;
    s.pq = s.sq = s.rq = 100.0;
    return s;
  }
  const double tp = static_cast<double>(c.tp);
  const double denom = tp + 0.5 * static_cast<double>(c.fp) + 0.5 * static_cast<double>(c.fn);
  s.sq = c.tp > 0 ? 100.0 * c.iou_sum / tp : 0.0;
  s.rq = 100.0 * tp / denom;
  s.pq = 100.0 * c.iou_sum / denom;
  return s;
}

EvalReport PanopticAccumulator::report() const {
  EvalReport r;
  r.moving = scores(moving_);
  r.stat = scores(stat_);
  r.scans = scans_;
  r.pq = 0.5 * (r.moving.pq + r.stat.pq);
  r.sq = 0.5 * (r.moving.sq + r.stat.sq);
  r.rq = 0.5 * (r.moving.rq + r.stat.rq);
  double sum = 0.0;
  int defined = 0;
  for (const auto& iou : {r.moving.iou, r.stat.iou})
    if (iou) {
      sum += *iou;
      ++defined;
    }
  r.miou = defined > 0 ? sum / defined : 0.0;
  return r;
}

EvalReport panoptic_eval(const PanopticResult& pred, const PanopticResult& gt) {
  PanopticAccumulator acc;
  acc.add(pred, gt);
  return acc.report();
}

EvalReport panoptic_eval(std::span<const PanopticResult> preds, std::span<const PanopticResult> gts) {
  RIT_EXPECT(preds.size() == gts.size(), ContractError, "prediction and ground truth scan counts differ");
  PanopticAccumulator acc;
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], gts[i]);
  return acc.report();
}

namespace {

json class_json(const ClassScores& c) {
  return json{{"PQ", c.pq},           {"SQ", c.sq}, {"RQ", c.rq}, {"IoU", c.iou ? json(*c.iou) : json(nullptr)},
              {"empty", c.empty},     {"TP", c.tp}, {"FP", c.fp}, {"FN", c.fn}};
}

std::string cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%8.2f", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? cell(*v) : std::string("     n/a"); }

}  // namespace

std::string EvalReport::to_json() const {
  return json{{"PQ", pq},     {"SQ", sq}, {"RQ", rq}, {"mIoU", miou}, {"scans", scans}, {"moving", class_json(moving)},
              {"static", class_json(stat)}}
      .dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "      PQ    mIoU      SQ      RQ  PQ^mov  SQ^mov  RQ^mov IoU^mov PQ^stat SQ^stat RQ^stat IoU^stat\n";
  os << cell(pq) << cell(miou) << cell(sq) << cell(rq) << cell(moving.pq) << cell(moving.sq) << cell(moving.rq)
     << cell(moving.iou) << cell(stat.pq) << cell(stat.sq) << cell(stat.rq) << " " << cell(stat.iou) << "\n";
  if (moving.empty) os << "note: no moving segments in prediction or ground truth; moving PQ/SQ/RQ set to 100\n";
  return os.str();
}

std::vector<int> radius_components(const Tensor& points, double r) {
  const std::size_t n = points.dim(0);
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  if (n > 0)
    for (const auto& [i, j] : sampling::radius_neighbors(points, r)) {
      const std::size_t a = find(i), b = find(j);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  std::vector<int> label(n);
  std::map<std::size_t, int> ids;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = ids.emplace(find(i), static_cast<int>(ids.size()));
    label[i] = it->second;
  }
  return label;
}

PanopticResult threshold_baseline(const Tensor& points, std::span<const double> doppler, double v_t, double r) {
  const std::size_t n = doppler.size();
  RIT_EXPECT(points.rank() == 2 && points.dim(0) == n && points.dim(1) == 3, DimensionError,
             "points must be [N, 3] matching the doppler values");
  PanopticResult out{std::vector<int>(n, 0), std::vector<int>(n, -1)};
  std::vector<std::size_t> moving;
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(doppler[i]) > v_t) moving.push_back(i);
  const std::vector<int> comp = radius_components(sampling::select_rows(points, moving), r);
  for (std::size_t a = 0; a < moving.size(); ++a) {
    out.labels[moving[a]] = 1;
    out.instances[moving[a]] = comp[a];
  }
  return out;
}

PanopticResult threshold_baseline(const pc::Scan& scan, double v_t, double r) {
  std::vector<double> doppler;
  doppler.reserve(scan.size());
  for (const auto& p : scan.points) doppler.push_back(p.doppler);
  return threshold_baseline(pc::positions(scan), doppler, v_t, r);
}

double sweep_baseline_radius(std::span<const pc::Scan> scans, double v_t, std::span<const double> radii) {
  RIT_EXPECT(!radii.empty(), ContractError, "radius sweep needs at least one radius");
  double best_r = radii.front(), best_pq = -1.0;
  for (double r : radii) {
    PanopticAccumulator acc;
    for (const auto& s : scans) acc.add(threshold_baseline(s, v_t, r), ground_truth(s));
    const double pq = acc.report().moving.pq;
    if (pq > best_pq) {
      best_pq = pq;
      best_r = r;
    }
  }
  return best_r;
}

std::string result_to_jsonl(const PanopticResult& r) {
  validate(r);
  std::string out;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const json line{{"label", r.labels[i] ? "moving" : "static"},
                    {"instance", r.labels[i] ? json(r.instances[i]) : json(nullptr)}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

PanopticResult result_from_jsonl(const std::string& text, const std::string& source_name) {
  PanopticResult r;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = source_name + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("label") || !j["label"].is_string())
      throw ParseError(where + ": missing string field 'label'");
    const std::string label = j["label"].get<std::string>();
    if (label != "static" && label != "moving") throw ParseError(where + ": label must be \"static\" or \"moving\"");
    const bool moving = label == "moving";
    const auto inst = j.find("instance");
    if (moving) {
      if (inst == j.end() || !inst->is_number_integer() || inst->get<int>() < 0)
        throw ParseError(where + ": moving points need a non-negative integer instance");
      r.instances.push_back(inst->get<int>());
    } else {
      if (inst != j.end() && !inst->is_null()) throw ParseError(where + ": static points must not carry an instance");
      r.instances.push_back(-1);
    }
    r.labels.push_back(moving ? 1 : 0);
  }
  return r;
}

}  // namespace rit::metrics
