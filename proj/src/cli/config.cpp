#include "rit/cli/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rit/error.hpp"

namespace rit {

namespace nn {
NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::adamw, "adamw"}, {OptimizerKind::sgd, "sgd"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(OptimizerConfig, kind, lr, weight_decay, beta1, beta2, eps, grad_clip)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StepSchedule, milestones, factor)
}  // namespace nn

namespace attn {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SafeConfig, d1, d2, k, T, input_scale)
}

namespace backbone {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BackboneConfig, widths, blocks, s1_pre, k, interp_k)
}

namespace head {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(HeadConfig, width, k, ftl_alpha, ftl_beta, ftl_gamma, ftl_smooth, offset_head,
                                   lambda_local, lambda_global)
}

namespace pc {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ScriptedInstance, position, velocity, length, width)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SyntheticSceneConfig, n_instances, min_points_per_instance,
                                   max_points_per_instance, static_points, noise_fraction, max_clutter_doppler,
                                   min_speed, max_speed, fov_extent, frames, frame_interval, max_ego_speed,
                                   max_yaw_rate, doppler_noise, position_jitter, pose_noise, scripted, seed)
}  // namespace pc

namespace cli {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataConfig, sequences, windows, synth)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, epochs, batch_size, optimizer, schedule, augment, teacher_forcing)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PipelineConfig, T, safe, backbone, head, r, v_t, baseline_r, train, data, seed)

using json = nlohmann::json;

void PipelineConfig::validate() const {
  RIT_EXPECT(safe.T == T, ContractError, "safe.T must equal T");
  backbone.validate();
  RIT_EXPECT(head.width == backbone.widths.front(), ContractError, "head.width must equal the first stage width");
  RIT_EXPECT(safe.k > 0 && head.k > 0, ContractError, "neighbor counts must be positive");
  RIT_EXPECT(r > 0.0 && baseline_r > 0.0 && v_t >= 0.0, ContractError, "radii must be positive");
  RIT_EXPECT(train.batch_size > 0, ContractError, "batch size must be positive");
  RIT_EXPECT(train.optimizer.lr >= 0.0, ContractError, "learning rate must be non-negative");
}

PipelineConfig miniature_config() {
  PipelineConfig cfg;
  cfg.backbone.widths = {16, 32, 64, 128};
  cfg.backbone.blocks = {2, 2, 1, 1};
  cfg.backbone.s1_pre = 1;
  cfg.head.width = 16;
  return cfg;
}

std::string to_json(const PipelineConfig& cfg) { return json(cfg).dump(2); }

namespace {

/// Throws for any key of `user` that `schema` does not have. Arrays are
/// leaves (their contents replace the default wholesale).
void check_keys(const json& user, const json& schema, const std::string& path, const std::string& source) {
  if (!user.is_object() || !schema.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ParseError(source + ":1: unknown config key '" + key + "'");
    check_keys(it.value(), schema.at(it.key()), key, source);
  }
}

}  // namespace

PipelineConfig from_json(const std::string& text, const PipelineConfig& base, const std::string& source_name) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
    throw ParseError(source_name + ":" + std::to_string(line) + ": " + e.what());
  }
  if (!user.is_object()) throw ParseError(source_name + ":1: config must be a JSON object");
  json merged = base;
  check_keys(user, merged, "", source_name);
  merged.merge_patch(user);
  const bool safe_t = user.contains("safe") && user["safe"].is_object() && user["safe"].contains("T");
  if (user.contains("T") && !safe_t) merged["safe"]["T"] = user["T"];
  try {
    return merged.get<PipelineConfig>();
  } catch (const json::exception& e) {
    throw ParseError(source_name + ":1: " + e.what());
  }
}

void save_config(const std::filesystem::path& path, const PipelineConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(cfg) << "\n";
}

PipelineConfig load_config(const std::filesystem::path& path, const PipelineConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), base, path.string());
}

void apply_env(PipelineConfig& cfg) {
  if (const char* s = std::getenv("RIT_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') throw ContractError(std::string("RIT_SEED is not an unsigned integer: ") + s);
    cfg.seed = v;
  }
}

}  // namespace cli
}  // namespace rit
