#include "rit/cli/commands.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "rit/error.hpp"
#include "rit/pointcloud/sequence_io.hpp"

namespace rit::cli {

SceneStats scene_stats(const std::vector<pc::Sequence>& sequences) {
  SceneStats s;
  for (const pc::Sequence& seq : sequences)
    for (const pc::Scan& scan : seq.frames) {
      std::map<int, std::size_t> sizes;
      for (const pc::RadarPoint& p : scan.points)
        if (p.instance_id) ++sizes[*p.instance_id];
      ++s.scans;
      s.points += scan.size();
      ++s.instances_per_scan[sizes.size()];
      for (const auto& [id, n] : sizes) {
        s.moving_points += n;
        ++s.points_per_instance[n];
      }
    }
  return s;
}

std::string stats_table(const SceneStats& s) {
  std::ostringstream os;
  os << "scans " << s.scans << ", points " << s.points << ", moving points " << s.moving_points << "\n";
  auto histogram = [&](const char* title, const std::map<std::size_t, std::size_t>& h) {
    std::size_t peak = 1;
    for (const auto& [_, n] : h) peak = std::max(peak, n);
    os << title << "\n";
    for (const auto& [k, n] : h)
      os << std::setw(6) << k << std::setw(8) << n << "  " << std::string((n * 40 + peak - 1) / peak, '#') << "\n";
  };
  histogram("moving instances per scan", s.instances_per_scan);
  histogram("points per moving instance", s.points_per_instance);
  return os.str();
}

Dataset load_dataset(const fs::path& dir, std::size_t max_windows) {
  std::vector<pc::Sequence> seqs;
  for (pc::StoredSequence& s : pc::read_dataset(dir)) seqs.push_back(std::move(s.sequence));
  if (seqs.empty()) throw IoError("no sequences under " + dir.string());
  return Dataset::from_sequences(std::move(seqs), max_windows);
}

SceneStats cmd_synth(const PipelineConfig& cfg, const fs::path& out, const std::string& split) {
  const std::vector<pc::Sequence> seqs = synth_sequences(cfg.data, cfg.seed, split);
  pc::write_dataset(out, seqs, cfg.T);
  return scene_stats(seqs);
}

std::vector<EpochLog> cmd_train(const PipelineConfig& cfg, const fs::path& data, const fs::path& out_weights,
                                const TrainOptions& options) {
  const Dataset train = load_dataset(data, cfg.data.windows);
  std::optional<Dataset> val;
  if (options.validation) val = load_dataset(*options.validation, cfg.data.windows);
  Rng root(cfg.seed);
  Rng init = root.substream("init");
  Model model(cfg, init);
  Trainer trainer(cfg, model);
  if (options.resume) trainer.load_checkpoint(*options.resume);
  std::vector<EpochLog> logs;
  while (trainer.epoch() < cfg.train.epochs) {
    const EpochLog log = trainer.run_epoch(train);
    logs.push_back(log);
    if (options.log) {
      std::ostream& os = *options.log;
      os << "epoch " << log.epoch << " lr " << std::setprecision(3) << log.lr << std::fixed << std::setprecision(6)
         << " loss " << log.loss << " ftl " << log.ftl << " bce_local " << log.bce_local << " bce_global "
         << log.bce_global << std::defaultfloat;
      if (val) {
        const metrics::EvalReport r = evaluate(model, *val, cfg.T);
        os << std::fixed << std::setprecision(2) << " | val PQ " << r.pq << " PQ_mov " << r.moving.pq << " IoU_stat "
           << r.stat.iou.value_or(0.0) << std::defaultfloat;
      }
      os << "\n" << std::flush;
    }
    if (options.checkpoint) trainer.save_checkpoint(*options.checkpoint);
  }
  save_weights(out_weights, model);
  return logs;
}

namespace {

fs::path result_path(const fs::path& root, const std::string& sequence, std::size_t frame) {
  return root / sequence / pc::frame_file_name(frame);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_results(const fs::path& out, const Dataset& data, const std::vector<metrics::PanopticResult>& results) {
  RIT_EXPECT(results.size() == data.windows.size(), ContractError, "one result per window expected");
  std::set<std::size_t> made;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const WindowRef& w = data.windows[i];
    const std::string& id = data.sequences[w.sequence].id;
    if (made.insert(w.sequence).second) {
      std::error_code ec;
      fs::create_directories(out / id, ec);
      if (ec) throw IoError("cannot create " + (out / id).string() + ": " + ec.message());
    }
    write_text(result_path(out, id, w.frame), metrics::result_to_jsonl(results[i]));
  }
}

void cmd_infer(const PipelineConfig& cfg, const fs::path& weights, const fs::path& data, const fs::path& out) {
  const Dataset ds = load_dataset(data, cfg.data.windows);
  Rng root(cfg.seed);
  Rng init = root.substream("init");
  Model model(cfg, init);
  load_weights(weights, model);
  write_results(out, ds, infer_dataset(model, ds, cfg.T));
}

void cmd_baseline(const PipelineConfig& cfg, const fs::path& data, const fs::path& out) {
  const Dataset ds = load_dataset(data, cfg.data.windows);
  std::vector<metrics::PanopticResult> results;
  for (const WindowRef& w : ds.windows) results.push_back(metrics::threshold_baseline(ds.current(w), cfg.v_t, cfg.baseline_r));
  write_results(out, ds, results);
}

metrics::EvalReport cmd_eval(const fs::path& pred, const fs::path& gt, std::size_t max_windows) {
  const Dataset ds = load_dataset(gt, max_windows);
  std::vector<std::string> missing;
  for (const WindowRef& w : ds.windows) {
    const fs::path p = result_path(pred, ds.sequences[w.sequence].id, w.frame);
    if (!fs::is_regular_file(p)) missing.push_back(p.string());
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << missing.size() << " predicted frame(s) missing:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) os << "\n  " << missing[i];
    if (missing.size() > 20) os << "\n  ...";
    throw IoError(os.str());
  }
  metrics::PanopticAccumulator acc;
  for (const WindowRef& w : ds.windows) {
    const fs::path p = result_path(pred, ds.sequences[w.sequence].id, w.frame);
    const metrics::PanopticResult r = metrics::result_from_jsonl(read_text(p), p.string());
    const metrics::PanopticResult g = metrics::ground_truth(ds.current(w));
    if (r.labels.size() != g.labels.size())
      throw ParseError(p.string() + ":1: " + std::to_string(r.labels.size()) + " points, ground truth has " +
                       std::to_string(g.labels.size()));
    acc.add(r, g);
  }
  return acc.report();
}

PartitionOutcome cmd_partition(const fs::path& graph) {
  const partition::WeightedGraph g = partition::read_graph(graph.string());
  PartitionOutcome out;
  out.partition = partition::partition_graph(g);
  out.modularity = partition::modularity(g, out.partition.assignment);
  return out;
}

}  // namespace rit::cli
