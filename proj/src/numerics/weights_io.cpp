#include "rit/numerics/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "rit/error.hpp"

namespace rit::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "weight container assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("weight container truncated at byte " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(std::span<const WeightEntry> entries) {
  std::vector<std::uint8_t> out = {'R', 'I', 'T', 'W'};
  put<std::uint32_t>(out, kWeightFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const WeightEntry& e : entries) {
    RIT_EXPECT(e.name.size() <= 0xFFFF, ContractError, "weight name too long: " + e.name);
    RIT_EXPECT(e.tensor.rank() <= 0xFF, ContractError, "tensor rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.tensor.rank()));
    for (std::size_t extent : e.tensor.shape()) put<std::uint64_t>(out, extent);
    for (double v : e.tensor.data()) {
      if (e.dtype == DType::f32) {
        put<float>(out, static_cast<float>(v));
      } else {
        put<double>(out, v);
      }
    }
  }
  return out;
}

std::vector<WeightEntry> decode_weights(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.get_string(4) != "RITW") throw ParseError("weight container: bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kWeightFormatVersion) {
    throw ParseError("weight container: unsupported version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<WeightEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    WeightEntry e;
    e.name = in.get_string(in.get<std::uint16_t>());
    const auto dtype = in.get<std::uint8_t>();
    if (dtype > 1) throw ParseError("weight container: unknown dtype code " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    const auto rank = in.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& extent : shape) extent = static_cast<std::size_t>(in.get<std::uint64_t>());
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = e.dtype == DType::f32 ? static_cast<double>(in.get<float>()) : in.get<double>();
    e.tensor = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  if (!in.done()) throw ParseError("weight container: trailing bytes after last entry");
  return entries;
}

void write_weights(const std::filesystem::path& path, std::span<const WeightEntry> entries) {
  const auto bytes = encode_weights(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<WeightEntry> read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_weights(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<WeightEntry> snapshot(const ParameterSet& set, DType dtype) {
  std::vector<WeightEntry> entries;
  for (const Parameter* p : set.params()) entries.push_back({p->name, dtype, p->value});
  for (const NamedBuffer& b : set.buffers()) entries.push_back({b.name, dtype, *b.tensor});
  return entries;
}

void restore(const ParameterSet& set, std::span<const WeightEntry> entries) {
  std::unordered_map<std::string, const WeightEntry*> by_name;
  for (const WeightEntry& e : entries) by_name[e.name] = &e;
  auto assign = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("weights missing entry '" + name + "'");
    if (it->second->tensor.shape() != dst.shape()) {
      throw DimensionError("weights entry '" + name + "' has shape " + shape_string(it->second->tensor.shape()) +
                           ", expected " + shape_string(dst.shape()));
    }
    dst = it->second->tensor;
  };
  for (Parameter* p : set.params()) assign(p->name, p->value);
  for (const NamedBuffer& b : set.buffers()) assign(b.name, *b.tensor);
}

}  // namespace rit::nn
