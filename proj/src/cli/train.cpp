#include "rit/cli/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rit/error.hpp"
#include "rit/numerics/weights_io.hpp"

namespace rit::cli {

Dataset Dataset::from_sequences(std::vector<pc::Sequence> sequences, std::size_t limit) {
  Dataset d;
  d.sequences = std::move(sequences);
  for (std::size_t s = 0; s < d.sequences.size(); ++s)
    for (std::size_t f = 0; f < d.sequences[s].frames.size(); ++f) {
      if (limit > 0 && d.windows.size() == limit) return d;
      d.windows.push_back({s, f});
    }
  return d;
}

std::vector<pc::Sequence> synth_sequences(const DataConfig& data, std::uint64_t seed, const std::string& stream) {
  std::vector<pc::Sequence> out;
  const Rng root(seed);
  for (std::size_t i = 0; i < data.sequences; ++i) {
    pc::SyntheticSceneConfig sc = data.synth;
    sc.seed = root.substream("data." + stream, i).engine()();
    pc::Sequence seq = pc::synth_scene(sc);
    seq.id = stream + "_" + std::to_string(i);
    out.push_back(std::move(seq));
  }
  return out;
}

Trainer::Trainer(const PipelineConfig& cfg, Model& model)
    : cfg_(cfg), model_(model), params_(model.parameters()), optimizer_(cfg.train.optimizer, params_) {}

namespace {

std::string where(std::size_t epoch, const WindowRef& w, const pc::Sequence& seq) {
  return "epoch " + std::to_string(epoch) + ", sequence " + seq.id + " frame " + std::to_string(w.frame);
}

void check_finite(const head::LossTerms& t, std::size_t epoch, const WindowRef& w, const pc::Sequence& seq) {
  const double total = t.total.value().item();
  if (std::isfinite(total)) return;
  std::ostringstream os;
  os << "non-finite loss at " << where(epoch, w, seq) << ": total " << total << " (focal Tversky " << t.ftl
     << ", local BCE " << t.bce_local << ", global BCE " << t.bce_global << ")";
  throw NonFiniteLoss(os.str());
}

}  // namespace

EpochLog Trainer::run_epoch(const Dataset& data) {
  const std::size_t total_epochs = cfg_.train.epochs;
  EpochLog log;
  log.epoch = epoch_;
  log.lr = cfg_.train.schedule.lr_at(cfg_.train.optimizer.lr, epoch_, total_epochs);
  const bool forcing = static_cast<double>(epoch_) < cfg_.train.teacher_forcing * static_cast<double>(total_epochs);

  const Rng root(cfg_.seed);
  Rng shuffle_rng = root.substream("shuffle", epoch_);
  std::vector<std::size_t> order(data.windows.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.integer(0, static_cast<std::int64_t>(i) - 1))]);

  const std::size_t bs = cfg_.train.batch_size;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    params_.zero_grad();
    for (std::size_t b = start; b < end; ++b) {
      const WindowRef& w = data.windows[order[b]];
      Rng aug = root.substream("augment", epoch_).substream("window", order[b]);
      const WindowInput in =
          prepare_window(data.sequences[w.sequence], w.frame, cfg_.T, cfg_.train.augment ? &aug : nullptr);
      Tape tape;
      try {
        const head::HeadOutput out = model_.forward(tape, in, true, forcing);
        const head::LossTerms terms = model_.loss(out, in);
        check_finite(terms, epoch_, w, data.sequences[w.sequence]);
        log.loss += terms.total.value().item();
        log.ftl += terms.ftl;
        log.bce_local += terms.bce_local;
        log.bce_global += terms.bce_global;
        tape.backward(nn::scale(terms.total, 1.0 / static_cast<double>(end - start)));
      } catch (const NonFiniteError& e) {
        throw NonFiniteLoss("non-finite value at " + where(epoch_, w, data.sequences[w.sequence]) + ": " + e.what());
      }
    }
    optimizer_.step(log.lr);
  }
  const double n = static_cast<double>(std::max<std::size_t>(order.size(), 1));
  log.loss /= n;
  log.ftl /= n;
  log.bce_local /= n;
  log.bce_global /= n;
  ++epoch_;
  if (on_epoch) on_epoch(log);
  return log;
}

EpochLog Trainer::evaluate_loss(const Dataset& data) {
  EpochLog log;
  log.epoch = epoch_;
  for (const WindowRef& w : data.windows) {
    const WindowInput in = prepare_window(data.sequences[w.sequence], w.frame, cfg_.T);
    Tape tape(false);
    const head::HeadOutput out = model_.forward(tape, in, false);
    const head::LossTerms terms = model_.loss(out, in);
    log.loss += terms.total.value().item();
    log.ftl += terms.ftl;
    log.bce_local += terms.bce_local;
    log.bce_global += terms.bce_global;
  }
  const double n = static_cast<double>(std::max<std::size_t>(data.windows.size(), 1));
  log.loss /= n;
  log.ftl /= n;
  log.bce_local /= n;
  log.bce_global /= n;
  return log;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::vector<nn::WeightEntry> entries = nn::snapshot(params_);
  for (auto& e : optimizer_.state()) entries.push_back(std::move(e));
  Tensor ep({1});
  ep[0] = static_cast<double>(epoch_);
  entries.push_back({"trainer.epoch", nn::DType::f64, ep});
  nn::write_weights(path, entries);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const std::vector<nn::WeightEntry> entries = nn::read_weights(path);
  nn::restore(params_, entries);
  optimizer_.load_state(entries);
  for (const auto& e : entries)
    if (e.name == "trainer.epoch") {
      epoch_ = static_cast<std::size_t>(e.tensor[0]);
      return;
    }
  throw ParseError(path.string() + ": checkpoint has no epoch counter");
}

std::vector<metrics::PanopticResult> infer_dataset(Model& model, const Dataset& data, std::size_t T) {
  std::vector<metrics::PanopticResult> out;
  out.reserve(data.windows.size());
  for (const WindowRef& w : data.windows) out.push_back(infer_window(model, prepare_window(data.sequences[w.sequence], w.frame, T)));
  return out;
}

metrics::EvalReport evaluate(Model& model, const Dataset& data, std::size_t T) {
  metrics::PanopticAccumulator acc;
  for (const WindowRef& w : data.windows) {
    const WindowInput in = prepare_window(data.sequences[w.sequence], w.frame, T);
    acc.add(infer_window(model, in), metrics::ground_truth(data.current(w)));
  }
  return acc.report();
}

metrics::EvalReport evaluate_baseline(const Dataset& data, double v_t, double r) {
  metrics::PanopticAccumulator acc;
  for (const WindowRef& w : data.windows)
    acc.add(metrics::threshold_baseline(data.current(w), v_t, r), metrics::ground_truth(data.current(w)));
  return acc.report();
}

void save_weights(const std::filesystem::path& path, Model& model) {
  nn::write_weights(path, nn::snapshot(model.parameters()));
}

void load_weights(const std::filesystem::path& path, Model& model) {
  nn::restore(model.parameters(), nn::read_weights(path));
}

}  // namespace rit::cli
