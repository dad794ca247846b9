#include "rit/cli/model.hpp"

#include "rit/partition/partition.hpp"
#include "rit/sampling/sampling.hpp"

namespace rit::cli {

WindowInput prepare_window(const pc::Sequence& seq, std::size_t t, std::size_t T, Rng* augment_rng) {
  pc::SequenceWindow w = pc::pad_previous(pc::align_previous(pc::make_window(seq, t, T)), T);
  if (augment_rng) w = pc::augment_window(w, *augment_rng);
  const pc::Scan prev = pc::aggregate_previous(w);
  WindowInput in;
  in.current_feats = pc::feature_matrix(w.current);
  in.current_pts = pc::positions(w.current);
  in.previous_feats = pc::feature_matrix(prev);
  in.previous_pts = pc::positions(prev);
  in.gt_labels = pc::label_vector(w.current);
  in.gt_instances = pc::instance_vector(w.current);
  return in;
}

Model::Model(const PipelineConfig& cfg_, Rng& rng) : cfg(cfg_) {
  cfg.validate();
  Rng safe_rng = rng.substream("safe"), net_rng = rng.substream("backbone"), head_rng = rng.substream("head");
  safe = attn::SafeModule(cfg.safe, safe_rng);
  net = backbone::Backbone(cfg.backbone, safe.out_dim(), net_rng);
  head = head::Head(cfg.head, head_rng);
}

head::HeadOutput Model::forward(Tape& tape, const WindowInput& in, bool training, bool teacher_forcing) {
  const Var x = safe.forward(tape, in.current_feats, in.current_pts, in.previous_feats, in.previous_pts, training);
  const Var xb = net.forward(tape, x, in.current_pts, training);
  return head.forward(tape, xb, in.current_pts, training,
                      teacher_forcing ? std::span<const int>(in.gt_labels) : std::span<const int>{});
}

head::LossTerms Model::loss(const head::HeadOutput& out, const WindowInput& in) const {
  return head.loss(out, in.current_pts, in.gt_labels, in.gt_instances);
}

void Model::collect(nn::ParameterSet& set) {
  safe.collect(set);
  net.collect(set);
  head.collect(set);
}

nn::ParameterSet Model::parameters() {
  nn::ParameterSet set;
  collect(set);
  return set;
}

metrics::PanopticResult infer_window(Model& model, const WindowInput& in) {
  const std::size_t n = in.size();
  metrics::PanopticResult out{std::vector<int>(n, 0), std::vector<int>(n, -1)};
  if (n == 0) return out;
  Tape tape(false);
  const head::HeadOutput h = model.forward(tape, in, false);
  if (h.rows.empty()) return out;
  const Tensor pts = sampling::select_rows(in.current_pts, h.rows);
  const partition::Partition p = partition::assign_instances(pts, h.s_global.value(), model.cfg.r);
  for (std::size_t a = 0; a < h.rows.size(); ++a) {
    out.labels[h.rows[a]] = 1;
    out.instances[h.rows[a]] = p.assignment[a];
  }
  return out;
}

}  // namespace rit::cli
