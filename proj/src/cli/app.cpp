#include "rit/cli/app.hpp"

#include <fstream>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"
#include "rit/cli/commands.hpp"
#include "rit/cli/gradcheck_suite.hpp"
#include "rit/error.hpp"

namespace rit::cli {

namespace {

using json = nlohmann::json;

/// One `--<dotted.path>` flag per leaf of the configuration. Values are
/// parsed as JSON when possible (numbers, booleans, arrays) and taken as
/// strings otherwise.
class ConfigFlags {
 public:
  void attach(CLI::App& cmd) {
    cmd.add_option("--preset", preset_, "base configuration before --config and flags")
        ->check(CLI::IsMember({"default", "miniature"}));
    cmd.add_option("--config", config_path_, "JSON configuration file; flags override it");
    add_leaves(cmd, json::parse(to_json(PipelineConfig{})), "");
  }

  /// Preset, then the config file, then RIT_SEED, then explicit flags.
  PipelineConfig resolve() const {
    PipelineConfig cfg = preset_ == "miniature" ? miniature_config() : PipelineConfig{};
    if (!config_path_.empty()) cfg = load_config(config_path_, cfg);
    apply_env(cfg);
    json patch = json::object();
    for (const auto& [path, value] : values_) {
      if (!*value) continue;
      json v;
      try {
        v = json::parse(**value);
      } catch (const json::parse_error&) {
        v = **value;
      }
      patch[json::json_pointer("/" + replace_dots(path))] = v;
    }
    if (!patch.empty()) cfg = from_json(patch.dump(), cfg, "<flags>");
    cfg.validate();
    return cfg;
  }

 private:
  static std::string replace_dots(std::string s) {
    for (char& c : s)
      if (c == '.') c = '/';
    return s;
  }

  void add_leaves(CLI::App& cmd, const json& node, const std::string& prefix) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it->is_object()) {
        add_leaves(cmd, *it, path);
        continue;
      }
      auto slot = std::make_shared<std::optional<std::string>>();
      values_.emplace_back(path, slot);
      cmd.add_option_function<std::string>(
             "--" + path, [slot](const std::string& v) { *slot = v; }, "default " + it->dump())
          ->group("Configuration");
    }
  }

  std::string preset_ = "default";
  std::string config_path_;
  std::vector<std::pair<std::string, std::shared_ptr<std::optional<std::string>>>> values_;
};

/// Writes everything to two streams.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    const char ch = traits_type::to_char_type(c);
    return a_->sputc(ch) == traits_type::eof() || b_->sputc(ch) == traits_type::eof() ? traits_type::eof() : c;
  }
  std::streamsize xsputn(const char* s, std::streamsize n) override {
    const std::streamsize x = a_->sputn(s, n), y = b_->sputn(s, n);
    return std::min(x, y);
  }
  int sync() override { return a_->pubsync() == 0 && b_->pubsync() == 0 ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
}

}  // namespace

int run_app(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Radar moving-instance segmentation: data, training, inference and evaluation", "rit");
  app.require_subcommand(1);
  app.set_version_flag("--version", "rit 0.1.0");

  std::string data, out_dir, weights, pred, gt, graph, json_out, split = "train", log_path;
  std::string val_dir, checkpoint, resume;
  std::size_t eval_windows = 0;

  ConfigFlags synth_flags, train_flags, infer_flags, baseline_flags, dump_flags;

  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic sequences and print scene statistics");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--split", split, "scene stream name; splits with different names share no scenes");
  synth_flags.attach(*synth);

  CLI::App* train = app.add_subcommand("train", "Train on a dataset directory and write weights");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", weights, "output weights file")->required();
  train->add_option("--val", val_dir, "dataset evaluated after every epoch");
  train->add_option("--checkpoint", checkpoint, "checkpoint written after every epoch");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--log", log_path, "also write the epoch log to this file");
  train_flags.attach(*train);

  CLI::App* infer = app.add_subcommand("infer", "Segment every window of a dataset");
  infer->add_option("--weights", weights, "weights file")->required();
  infer->add_option("--data", data, "dataset directory")->required();
  infer->add_option("--out", out_dir, "result directory")->required();
  infer_flags.attach(*infer);

  CLI::App* eval = app.add_subcommand("eval", "Score result files against ground truth");
  eval->add_option("--pred", pred, "result directory")->required();
  eval->add_option("--gt", gt, "dataset directory")->required();
  eval->add_option("--windows", eval_windows, "windows evaluated, in order; 0 means all");
  eval->add_option("--json", json_out, "also write the report as JSON");

  double tolerance = 1e-4, corrupt = 1.0;
  std::size_t seeds = 3;
  std::uint64_t first_seed = 0;
  std::vector<std::string> layers;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every parameterized layer");
  gradcheck->add_option("--seeds", seeds, "seeds per layer");
  gradcheck->add_option("--first-seed", first_seed, "first seed");
  gradcheck->add_option("--tolerance", tolerance, "maximum relative error");
  gradcheck->add_option("--layer", layers, "restrict to these layers")->check(CLI::IsMember(gradcheck_layers()));
  gradcheck->add_option("--corrupt-scale", corrupt, "test hook: scales the analytic gradient");

  CLI::App* baseline = app.add_subcommand("baseline", "Doppler threshold baseline over a dataset");
  baseline->add_option("--data", data, "dataset directory")->required();
  baseline->add_option("--out", out_dir, "result directory")->required();
  baseline_flags.attach(*baseline);

  CLI::App* part = app.add_subcommand("partition", "Modularity partition of a weighted graph file");
  part->add_option("--graph", graph, "graph JSON {\"n\": int, \"edges\": [[i, j, w], ...]}")->required();
  part->add_option("--out", json_out, "write the assignment here instead of stdout");

  CLI::App* dump = app.add_subcommand("config", "Print the resolved configuration");
  dump_flags.attach(*dump);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    for (CLI::App* sub : app.get_subcommands()) out << sub->help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "rit 0.1.0\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      const PipelineConfig cfg = synth_flags.resolve();
      out << stats_table(cmd_synth(cfg, out_dir, split));
    } else if (train->parsed()) {
      const PipelineConfig cfg = train_flags.resolve();
      TrainOptions opt;
      if (!val_dir.empty()) opt.validation = val_dir;
      if (!checkpoint.empty()) opt.checkpoint = checkpoint;
      if (!resume.empty()) opt.resume = resume;
      std::ofstream log_file;
      std::unique_ptr<TeeBuf> tee;
      std::ostream tee_stream(nullptr);
      opt.log = &out;
      if (!log_path.empty()) {
        log_file.open(log_path, std::ios::binary);
        if (!log_file) throw IoError("cannot write " + log_path);
        tee = std::make_unique<TeeBuf>(out.rdbuf(), log_file.rdbuf());
        tee_stream.rdbuf(tee.get());
        opt.log = &tee_stream;
      }
      cmd_train(cfg, data, weights, opt);
    } else if (infer->parsed()) {
      cmd_infer(infer_flags.resolve(), weights, data, out_dir);
    } else if (eval->parsed()) {
      const metrics::EvalReport r = cmd_eval(pred, gt, eval_windows);
      out << r.to_table();
      if (!json_out.empty()) write_file(json_out, r.to_json() + "\n");
    } else if (gradcheck->parsed()) {
      nn::GradCheckOptions opt;
      opt.corrupt_scale = corrupt;
      if (layers.empty()) layers = gradcheck_layers();
      std::vector<LayerCheck> checks;
      for (const std::string& l : layers) checks.push_back(check_layer(l, first_seed, seeds, tolerance, opt));
      out << gradcheck_table(checks);
      for (const LayerCheck& c : checks)
        if (!c.pass) return 1;
    } else if (baseline->parsed()) {
      cmd_baseline(baseline_flags.resolve(), data, out_dir);
    } else if (part->parsed()) {
      const PartitionOutcome p = cmd_partition(graph);
      const std::string text = partition::partition_to_json(p.partition) + "\n";
      if (json_out.empty())
        out << text;
      else
        write_file(json_out, text);
      err << "communities " << p.partition.count << ", modularity " << p.modularity << "\n";
    } else if (dump->parsed()) {
      out << to_json(dump_flags.resolve()) << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace rit::cli
