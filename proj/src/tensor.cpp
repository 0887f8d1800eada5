#include "mcpm/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mcpm {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw runtime_error("tensor extent must be positive, got " + std::to_string(e));
    n *= static_cast<size_t>(e);
  }
  return n;
}

Tensor::Tensor(std::vector<int> extents) : shape(std::move(extents)) {
  data.assign(shape_numel(shape), 0.0);
}

Tensor::Tensor(std::vector<int> extents, std::vector<double> values) : shape(std::move(extents)) {
  if (values.size() != shape_numel(shape)) {
    throw runtime_error("tensor value count " + std::to_string(values.size()) +
                        " does not match shape " + Tensor(shape).shape_str());
  }
  data = std::move(values);
}

Tensor Tensor::full(std::vector<int> extents, double value) {
  Tensor t(std::move(extents));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw runtime_error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
  }
}

namespace {

constexpr unsigned char kMagic[5] = {0x4D, 0x50, 0x54, 0x44, 0x01};

void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

void write_mptd_stream(std::ostream& os, const Tensor& t);
Tensor read_mptd_stream(std::istream& is, const std::string& what);

void write_mptd_stream(std::ostream& os, const Tensor& t) {
  if (t.shape.empty() || t.rank() > 255) {
    throw runtime_error("MPTD: rank must be in [1,255], got " + std::to_string(t.rank()));
  }
  os.write(reinterpret_cast<const char*>(kMagic), sizeof(kMagic));
  unsigned char rank = static_cast<unsigned char>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int e : t.shape) put_u32_le(os, static_cast<uint32_t>(e));
  static_assert(sizeof(double) == 8);
  // Little-endian host assumed; payload is raw IEEE-754 doubles.
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_mptd_stream(std::istream& is, const std::string& what) {
  unsigned char magic[5];
  is.read(reinterpret_cast<char*>(magic), sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw runtime_error("MPTD: bad magic in " + what);
  }
  unsigned char rank = 0;
  is.read(reinterpret_cast<char*>(&rank), 1);
  if (!is || rank == 0) throw runtime_error("MPTD: bad rank in " + what);
  std::vector<int> shape(rank);
  for (int i = 0; i < rank; ++i) {
    uint32_t e = get_u32_le(is);
    if (!is || e == 0) throw runtime_error("MPTD: bad extent in " + what);
    shape[i] = static_cast<int>(e);
  }
  Tensor t(std::move(shape));
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!is) throw runtime_error("MPTD: truncated payload in " + what);
  return t;
}

void write_mptd(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw runtime_error("cannot open for writing: " + path);
  write_mptd_stream(os, t);
  if (!os) throw runtime_error("write failed: " + path);
}

Tensor read_mptd(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw runtime_error("cannot open: " + path);
  return read_mptd_stream(is, path);
}

}  // namespace mcpm
