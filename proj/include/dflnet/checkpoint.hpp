#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dflnet/data.hpp"
#include "dflnet/model.hpp"
#include "dflnet/pcl.hpp"

namespace dflnet {

// DFLT container, all integers little-endian:
//   "DFLT" | u32 version = 1 | u32 count |
//   count x ( u16 name_len | name (UTF-8) | u8 ndim | ndim x u32 dim | f32 values )
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void le(std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::string what) : b_(b), what_(std::move(what)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return le(4); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) {
      throw LengthError(what_ + ": truncated at offset " + std::to_string(pos_) + " (need " + std::to_string(n) +
                        " more bytes, have " + std::to_string(b_.size() - pos_) + ")");
    }
  }
  std::uint32_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint32_t{b_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensors(const std::vector<TensorRecord>& records) {
  detail::ByteWriter w;
  w.raw("DFLT");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xffff) throw InputError("tensor name too long: " + r.name.substr(0, 32) + "...");
    if (r.shape.size() > 0xff) throw InputError("tensor " + r.name + " has too many dimensions");
    if (shape_numel(r.shape) != r.values.size()) throw DimensionError("tensor " + r.name + " shape/data mismatch");
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.raw(r.name);
    w.u8(static_cast<std::uint8_t>(r.shape.size()));
    for (auto d : r.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : r.values) w.f32(v);
  }
  return w.take();
}

inline std::vector<TensorRecord> decode_tensors(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  detail::ByteReader r(bytes, what);
  if (bytes.size() < 4 || r.raw(4) != "DFLT") throw FormatError(what + ": bad magic at offset 0 (expected DFLT)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version) + " at offset 4");
  }
  const auto count = r.u32();
  std::vector<TensorRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name = r.raw(r.u16());
    const auto ndim = r.u8();
    for (int d = 0; d < ndim; ++d) rec.shape.push_back(r.u32());
    const std::size_t n = shape_numel(rec.shape);
    rec.values.reserve(n);
    for (std::size_t k = 0; k < n; ++k) rec.values.push_back(r.f32());
    out.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError(what + ": trailing bytes at offset " + std::to_string(r.pos()));
  return out;
}

inline void write_tensors(const std::filesystem::path& path, const std::vector<TensorRecord>& records) {
  detail::write_file(path, encode_tensors(records));
}

inline std::vector<TensorRecord> read_tensors(const std::filesystem::path& path) {
  return decode_tensors(detail::read_file(path), path.string());
}

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t) {
  TensorRecord r{name, t.shape(), {}};
  r.values.reserve(t.numel());
  for (T v : t.data()) r.values.push_back(static_cast<float>(v));
  return r;
}

template <typename T>
Tensor<T> from_record(const TensorRecord& r) {
  std::vector<T> v(r.values.begin(), r.values.end());
  return Tensor<T>(r.shape, std::move(v));
}

inline const std::string kCentroidTensor = "bank.centroids";

template <typename T>
std::vector<TensorRecord> checkpoint_records(const Model<T>& model, const CentroidBank<T>* bank) {
  std::vector<TensorRecord> recs;
  for (const auto& nt : model.state()) recs.push_back(to_record(nt.name, nt.value));
  if (bank) recs.push_back(to_record(kCentroidTensor, bank->weights()));
  return recs;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const CentroidBank<T>* bank = nullptr) {
  write_tensors(path, checkpoint_records(model, bank));
}

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  std::optional<CentroidBank<T>> bank;
};

// Rebuilds the model described by (spec, dfl, k) and fills it from the file.
// Every model tensor must be present with the planned shape.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path, const BackboneSpec& spec, bool dfl,
                                    std::size_t num_classes) {
  const auto recs = read_tensors(path);
  std::unordered_map<std::string, const TensorRecord*> by_name;
  for (const auto& r : recs) {
    if (!by_name.emplace(r.name, &r).second) throw FormatError(path.string() + ": duplicate tensor " + r.name);
  }
  LoadedCheckpoint<T> out{Model<T>(spec, dfl, num_classes, 0), std::nullopt};
  std::size_t used = 0;
  for (auto& nt : out.model.state()) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw SpecError(path.string() + ": missing tensor " + nt.name);
    if (it->second->shape != nt.value.shape()) {
      throw SpecError(path.string() + ": tensor " + nt.name + " has shape " + shape_str(it->second->shape) +
                      ", model expects " + shape_str(nt.value.shape()));
    }
    auto dst = nt.value.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    ++used;
  }
  if (auto it = by_name.find(kCentroidTensor); it != by_name.end()) {
    const auto& r = *it->second;
    if (r.shape.size() != 2 || r.shape[0] != num_classes) {
      throw SpecError(path.string() + ": tensor " + kCentroidTensor + " has shape " + shape_str(r.shape));
    }
    Tensor<T> w = from_record<T>(r);
    w.requires_grad(true);
    out.bank.emplace(std::move(w));
    ++used;
  }
  if (used != recs.size()) throw SpecError(path.string() + ": checkpoint holds tensors the model does not have");
  return out;
}

}  // namespace dflnet
