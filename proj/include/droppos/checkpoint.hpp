#pragma once

// Checkpoint file layout (all integers little-endian):
//   "DPOS" | version u32 | records...
//   record = name_len u32 | name (UTF-8) | dtype u8 | rank u32 | dims u64[rank] | raw values
// Records run to end of file.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "droppos/droppos.hpp"
#include "droppos/errors.hpp"
#include "droppos/optim.hpp"

namespace droppos {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'D', 'P', 'O', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU64 = 2, kU8 = 3 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU64: return 8;
    case DType::kU8: return 1;
  }
  throw FormatError("unknown dtype tag " + std::to_string(static_cast<int>(t)));
}

template <class U>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<U, float>) return DType::kF32;
  else if constexpr (std::is_same_v<U, double>) return DType::kF64;
  else if constexpr (std::is_same_v<U, std::uint64_t>) return DType::kU64;
  else {
    static_assert(std::is_same_v<U, std::uint8_t>);
    return DType::kU8;
  }
}

struct ArrayRecord {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;

  bool operator==(const ArrayRecord&) const = default;

  template <class U>
  static ArrayRecord from(std::string name, std::vector<std::uint64_t> dims, std::span<const U> values) {
    ArrayRecord r{std::move(name), dtype_of<U>(), std::move(dims), std::vector<std::uint8_t>(values.size_bytes())};
    std::memcpy(r.bytes.data(), values.data(), values.size_bytes());
    return r;
  }

  template <class U>
  std::vector<U> as() const {
    if (dtype != dtype_of<U>()) throw FormatError("record " + name + " has a different dtype");
    std::vector<U> out(bytes.size() / sizeof(U));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
  }
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<ArrayRecord> records;

  bool operator==(const Checkpoint&) const = default;

  const ArrayRecord* find(const std::string& name) const {
    for (const auto& r : records) {
      if (r.name == name) return &r;
    }
    return nullptr;
  }
  const ArrayRecord& at(const std::string& name) const {
    if (auto* r = find(name)) return *r;
    throw FormatError("checkpoint has no record named '" + name + "'");
  }
};

namespace detail {

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw FormatError(std::string("truncated checkpoint: need ") + std::to_string(n) + " bytes for " + what +
                        " at offset " + std::to_string(pos_) + ", " + std::to_string(b_.size() - pos_) + " left");
    }
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put<std::uint32_t>(out, ck.version);
  for (const auto& r : ck.records) {
    std::uint64_t count = 1;
    for (auto d : r.dims) count *= d;
    if (count * dtype_size(r.dtype) != r.bytes.size()) {
      throw FormatError("record " + r.name + ": payload size does not match dims");
    }
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) detail::put<std::uint64_t>(out, d);
    out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  }
  return out;
}

inline Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  detail::Reader rd(bytes);
  auto magic = rd.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) throw FormatError("not a checkpoint: bad magic bytes");
  Checkpoint ck;
  ck.version = rd.get<std::uint32_t>("version");
  if (ck.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ck.version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  while (!rd.done()) {
    ArrayRecord r;
    const auto len = rd.get<std::uint32_t>("name length");
    auto name = rd.take(len, "name");
    r.name.assign(name.begin(), name.end());
    const auto tag = rd.get<std::uint8_t>("dtype");
    if (tag > static_cast<std::uint8_t>(DType::kU8)) {
      throw FormatError("record " + r.name + ": unknown dtype tag " + std::to_string(tag));
    }
    r.dtype = static_cast<DType>(tag);
    const auto rank = rd.get<std::uint32_t>("rank");
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.dims.push_back(rd.get<std::uint64_t>("dims"));
      count *= r.dims.back();
    }
    auto payload = rd.take(count * dtype_size(r.dtype), "values");
    r.bytes.assign(payload.begin(), payload.end());
    ck.records.push_back(std::move(r));
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize(ck);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// ---------------------------------------------------------------- model <-> records

inline std::vector<std::uint64_t> dims_of(const Shape& s) { return {s.begin(), s.end()}; }

template <class T>
void append_params(Checkpoint& ck, const ParamList<T>& params) {
  for (const auto& p : params) ck.records.push_back(ArrayRecord::from<T>(p.name, dims_of(p.tensor.shape()), p.tensor.data()));
}

template <class T>
void append_optimizer(Checkpoint& ck, const ParamList<T>& params, const OptimizerState<T>& st) {
  const std::uint64_t step = st.step;
  ck.records.push_back(ArrayRecord::from<std::uint64_t>("optim.step", {}, std::span<const std::uint64_t>(&step, 1)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto dims = dims_of(params[i].tensor.shape());
    ck.records.push_back(ArrayRecord::from<T>("optim.m/" + params[i].name, dims, std::span<const T>(st.m[i])));
    ck.records.push_back(ArrayRecord::from<T>("optim.v/" + params[i].name, dims, std::span<const T>(st.v[i])));
  }
}

/// Copies checkpointed values into existing parameter tensors (in place).
template <class T>
void restore_params(const Checkpoint& ck, const ParamList<T>& params) {
  for (const auto& p : params) {
    const auto& r = ck.at(p.name);
    if (r.dims != dims_of(p.tensor.shape())) {
      throw FormatError("record " + p.name + " has shape mismatch with the model " + shape_str(p.tensor.shape()));
    }
    const auto values = r.template as<T>();
    auto dst = p.tensor.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

template <class T>
OptimizerState<T> restore_optimizer(const Checkpoint& ck, const ParamList<T>& params) {
  OptimizerState<T> st;
  st.step = ck.at("optim.step").as<std::uint64_t>().at(0);
  for (const auto& p : params) {
    st.m.push_back(ck.at("optim.m/" + p.name).template as<T>());
    st.v.push_back(ck.at("optim.v/" + p.name).template as<T>());
    if (st.m.back().size() != p.tensor.numel() || st.v.back().size() != p.tensor.numel()) {
      throw FormatError("optimizer state for " + p.name + " has the wrong size");
    }
  }
  return st;
}

inline void append_text(Checkpoint& ck, const std::string& name, const std::string& text) {
  ck.records.push_back(ArrayRecord::from<std::uint8_t>(
      name, {text.size()}, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
}

inline std::string read_text(const Checkpoint& ck, const std::string& name) {
  const auto bytes = ck.at(name).as<std::uint8_t>();
  return {bytes.begin(), bytes.end()};
}

}  // namespace droppos
