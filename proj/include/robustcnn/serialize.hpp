#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "robustcnn/tensor.hpp"

namespace robustcnn {

// Tensor wire format: magic "RBT1", shape as four u64 little-endian, then the
// raw little-endian scalar payload. Payload width is the caller's scalar type
// (training artifacts and datasets use 32-bit).
inline constexpr char kTensorMagic[4] = {'R', 'B', 'T', '1'};

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("tensor read: truncated header");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

static_assert(std::endian::native == std::endian::little,
              "scalar payload is written as native bytes and assumes little-endian");

}  // namespace detail

template <typename T>
void save_tensor(std::ostream& os, const TensorT<T>& t) {
  os.write(kTensorMagic, 4);
  const Shape& s = t.shape();
  detail::write_u64(os, static_cast<uint64_t>(s.n));
  detail::write_u64(os, static_cast<uint64_t>(s.c));
  detail::write_u64(os, static_cast<uint64_t>(s.h));
  detail::write_u64(os, static_cast<uint64_t>(s.w));
  os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(sizeof(T) * t.numel()));
  if (!os) throw std::runtime_error("tensor write failed");
}

template <typename T>
TensorT<T> load_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw std::runtime_error("tensor read: bad magic");
  }
  const auto n = static_cast<int64_t>(detail::read_u64(is));
  const auto c = static_cast<int64_t>(detail::read_u64(is));
  const auto h = static_cast<int64_t>(detail::read_u64(is));
  const auto w = static_cast<int64_t>(detail::read_u64(is));
  Shape shape(n, c, h, w);
  std::vector<T> values(shape.numel());
  is.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(sizeof(T) * values.size()));
  if (!is) throw std::runtime_error("tensor read: truncated payload");
  return TensorT<T>::from_vector(shape, std::move(values));
}

template <typename T>
void save_tensor_file(const std::string& path, const TensorT<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  save_tensor(os, t);
}

template <typename T>
TensorT<T> load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  return load_tensor<T>(is);
}

inline void write_prefixed_string(std::ostream& os, const std::string& s) {
  detail::write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_prefixed_string(std::istream& is) {
  const uint64_t len = detail::read_u64(is);
  if (len > (1ULL << 32)) throw std::runtime_error("string read: implausible length");
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("string read: truncated");
  return s;
}

}  // namespace robustcnn
