#include "rit/pointcloud/sequence_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rit/error.hpp"

namespace rit::pc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

double number_field(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) throw ParseError(where + ": missing numeric field '" + key + "'");
  return it->get<double>();
}

}  // namespace

std::string frame_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04zu.jsonl", index);
  return buf;
}

std::string serialize_frame(const Scan& scan) {
  std::string out;
  json header;
  header["timestamp"] = scan.timestamp;
  header["pose"] = json::array();
  for (double v : scan.pose) header["pose"].push_back(v);
  out += header.dump() + "\n";
  for (const RadarPoint& p : scan.points) {
    json j;
    j["x"] = p.x;
    j["y"] = p.y;
    j["z"] = p.z;
    j["rcs"] = p.rcs;
    j["v"] = p.doppler;
    j["label"] = p.label == MotionLabel::moving ? "moving" : "static";
    j["instance"] = p.instance_id ? json(*p.instance_id) : json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

Scan parse_frame(const std::string& text, const std::string& source_name) {
  Scan scan;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
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
    if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
    if (!have_header) {
      scan.timestamp = number_field(j, "timestamp", where);
      auto pose = j.find("pose");
      if (pose == j.end() || !pose->is_array() || pose->size() != 16) {
        throw ParseError(where + ": 'pose' must be an array of 16 numbers");
      }
      for (std::size_t i = 0; i < 16; ++i) {
        if (!(*pose)[i].is_number()) throw ParseError(where + ": 'pose' must be an array of 16 numbers");
        scan.pose[i] = (*pose)[i].get<double>();
      }
      if (!is_rigid(scan.pose)) throw ParseError(where + ": pose is not a rigid transform");
      have_header = true;
      continue;
    }
    RadarPoint p;
    p.x = number_field(j, "x", where);
    p.y = number_field(j, "y", where);
    p.z = number_field(j, "z", where);
    p.rcs = number_field(j, "rcs", where);
    p.doppler = number_field(j, "v", where);
    auto label = j.find("label");
    if (label == j.end() || !label->is_string()) throw ParseError(where + ": missing string field 'label'");
    if (*label == "moving") {
      p.label = MotionLabel::moving;
    } else if (*label == "static") {
      p.label = MotionLabel::stationary;
    } else {
      throw ParseError(where + ": label must be \"static\" or \"moving\"");
    }
    auto inst = j.find("instance");
    if (inst != j.end() && !inst->is_null()) {
      if (!inst->is_number_integer() || inst->get<long long>() < 0) {
        throw ParseError(where + ": instance must be a non-negative integer or null");
      }
      p.instance_id = inst->get<int>();
    }
    if ((p.label == MotionLabel::moving) != p.instance_id.has_value()) {
      throw ParseError(where + ": moving points need an instance id and static points must not have one");
    }
    scan.points.push_back(p);
  }
  if (!have_header) throw ParseError(source_name + ":1: missing frame header line");
  return scan;
}

void write_sequence(const fs::path& dir, const Sequence& seq, std::size_t T) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json meta;
  meta["sequence_id"] = seq.id;
  meta["T"] = T;
  meta["frames"] = json::array();
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const std::string name = frame_file_name(f);
    meta["frames"].push_back(name);
    write_text(dir / name, serialize_frame(seq.frames[f]));
  }
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

StoredSequence read_sequence(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  json meta;
  try {
    meta = json::parse(read_text(meta_path));
  } catch (const json::parse_error& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  StoredSequence out;
  try {
    out.sequence.id = meta.at("sequence_id").get<std::string>();
    out.T = meta.at("T").get<std::size_t>();
    for (const auto& name : meta.at("frames")) {
      const fs::path frame_path = dir / name.get<std::string>();
      out.sequence.frames.push_back(parse_frame(read_text(frame_path), frame_path.string()));
    }
  } catch (const json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  return out;
}

void write_dataset(const fs::path& root, const std::vector<Sequence>& sequences, std::size_t T) {
  for (const Sequence& seq : sequences) write_sequence(root / seq.id, seq, T);
}

std::vector<StoredSequence> read_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<StoredSequence> out;
  for (const auto& d : dirs) out.push_back(read_sequence(d));
  return out;
}

}  // namespace rit::pc
