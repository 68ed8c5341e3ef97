#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pldnet/nn/optim.hpp"

// Weight checkpoint container, all integers little-endian:
//
//   "PLDNET1"                      7-byte magic
//   u32 manifest_len, bytes        model configuration as key=value lines
//   u32 tensor_count
//   per tensor:
//     u32 name_len, bytes          parameter name
//     u8  dtype                    1 = float64, 2 = float32
//     u32 ndim, u64 dims[ndim]
//     raw element data
namespace pldnet::nn {

inline constexpr char kCheckpointMagic[] = "PLDNET1";

enum class DType : std::uint8_t { kFloat64 = 1, kFloat32 = 2 };

struct Checkpoint {
  std::string manifest;
  ParamList tensors;
};

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  const U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string what) : b_(b), what_(std::move(what)) {}

  template <class T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(U));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<T>(u);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw InvalidInput(what_ + ": truncated checkpoint");
  }
  const std::vector<std::uint8_t>& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck, DType dtype = DType::kFloat64) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 7);
  detail::put_le(out, static_cast<std::uint32_t>(ck.manifest.size()));
  out.insert(out.end(), ck.manifest.begin(), ck.manifest.end());
  detail::put_le(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& p : ck.tensors) {
    detail::put_le(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    detail::put_le(out, static_cast<std::uint8_t>(dtype));
    detail::put_le(out, static_cast<std::uint32_t>(p.tensor.ndim()));
    for (auto d : p.tensor.shape()) detail::put_le(out, static_cast<std::uint64_t>(d));
    for (double v : p.tensor.data()) {
      if (dtype == DType::kFloat64) {
        detail::put_le(out, v);
      } else {
        detail::put_le(out, static_cast<float>(v));
      }
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint") {
  detail::Reader r(bytes, what);
  if (r.bytes(7) != std::string(kCheckpointMagic, 7)) throw InvalidInput(what + ": bad magic, not a PLDNET1 file");
  Checkpoint ck;
  ck.manifest = r.bytes(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedParam p;
    p.name = r.bytes(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != 1 && dtype != 2) throw InvalidInput(what + ": unknown dtype code for " + p.name);
    const auto ndim = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = dtype == 1 ? r.get<double>() : static_cast<double>(r.get<float>());
    p.tensor = Tensor::from_data(std::move(shape), std::move(data));
    ck.tensors.push_back(std::move(p));
  }
  if (!r.at_end()) throw InvalidInput(what + ": trailing bytes after last tensor");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck, DType dtype = DType::kFloat64) {
  const auto bytes = encode_checkpoint(ck, dtype);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InvalidInput("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

}  // namespace pldnet::nn
