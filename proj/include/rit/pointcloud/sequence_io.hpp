#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rit/pointcloud/scan.hpp"

// On-disk sequence layout (one directory per sequence):
//
//   <dir>/meta.json          {"sequence_id": str, "T": int, "frames": [file names]}
//   <dir>/frame_0000.jsonl   line 1: {"timestamp": s, "pose": [16 row-major floats]}
//                            line k>1: {"x","y","z","rcs","v": number,
//                                       "label": "static"|"moving", "instance": int|null}

namespace rit::pc {

struct StoredSequence {
  Sequence sequence;
  std::size_t T = 2;
};

std::string frame_file_name(std::size_t index);

void write_sequence(const std::filesystem::path& dir, const Sequence& seq, std::size_t T);
/// Throws ParseError naming the file and line on malformed content.
StoredSequence read_sequence(const std::filesystem::path& dir);

/// Writes each sequence to <root>/<sequence id>/.
void write_dataset(const std::filesystem::path& root, const std::vector<Sequence>& sequences, std::size_t T);
/// Reads every sub-directory holding a meta.json, in lexicographic order.
std::vector<StoredSequence> read_dataset(const std::filesystem::path& root);

std::string serialize_frame(const Scan& scan);
Scan parse_frame(const std::string& text, const std::string& source_name);

}  // namespace rit::pc
