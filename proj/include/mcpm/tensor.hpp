#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcpm {

/// Error with a stable category so the C API and the CLI can map failures
/// to exit codes without string matching.
enum class ErrorKind { kConfig, kRuntime };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& what) { return Error(ErrorKind::kConfig, what); }
inline Error runtime_error(const std::string& what) { return Error(ErrorKind::kRuntime, what); }

/// Dense row-major tensor of 64-bit floats. The universal value carrier:
/// images, labels, parameters, loss maps and gradients are all Tensors.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> extents);
  Tensor(std::vector<int> extents, std::vector<double> values);

  static Tensor full(std::vector<int> extents, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape); }

  int rank() const { return static_cast<int>(shape.size()); }
  size_t numel() const { return data.size(); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  /// Element access for rank-2 [h,w] and rank-3 [c,h,w] tensors.
  double& at(int y, int x) { return data[static_cast<size_t>(y) * shape[1] + x]; }
  double at(int y, int x) const { return data[static_cast<size_t>(y) * shape[1] + x]; }
  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  std::string shape_str() const;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

size_t shape_numel(const std::vector<int>& shape);

void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

/// MPTD v1 tensor file format: magic bytes 4D 50 54 44 01, u8 rank, then
/// rank little-endian u32 extents, then the row-major little-endian IEEE-754
/// float64 payload.
void write_mptd(const std::string& path, const Tensor& t);
Tensor read_mptd(const std::string& path);

/// Stream variants, used when tensors are embedded in a larger container.
/// `what` names the tensor in error messages.
void write_mptd_stream(std::ostream& out, const Tensor& t);
Tensor read_mptd_stream(std::istream& in, const std::string& what);

}  // namespace mcpm
