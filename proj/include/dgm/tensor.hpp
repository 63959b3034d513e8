#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgm {

/// Error type for all recoverable failures in the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

/// Dense row-major tensor. The MLP stack only ever needs rank 2
/// (batch x features, n x p weights, 1 x p rows), so rows/cols accessors
/// assume rank <= 2; shape() keeps the general form.
template <typename R>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::int64_t rows, std::int64_t cols, R fill = R(0))
      : shape_{rows, cols}, data_(static_cast<std::size_t>(rows * cols), fill) {
    if (rows < 0 || cols < 0) fail("Tensor: negative dimension");
  }
  Tensor(std::int64_t rows, std::int64_t cols, std::vector<R> data)
      : shape_{rows, cols}, data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != rows * cols)
      fail("Tensor: data length " + std::to_string(data_.size()) +
           " does not match shape " + shape_str(rows, cols));
  }

  static Tensor row(std::initializer_list<R> vals) {
    return Tensor(1, static_cast<std::int64_t>(vals.size()), std::vector<R>(vals));
  }
  static Tensor scalar(R v) { return Tensor(1, 1, std::vector<R>{v}); }

  std::int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::int64_t cols() const { return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  const std::vector<std::int64_t>& shape() const { return shape_; }

  R& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  R at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  R& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  R operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::vector<R>& data() { return data_; }
  const std::vector<R>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  bool all_finite() const {
    for (R v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  /// Exact elementwise equality (used by freeze/replay bit-stability checks).
  bool bit_equal(const Tensor& o) const {
    if (!same_shape(o)) return false;
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (data_[i] != o.data_[i]) return false;
    return true;
  }

  std::string shape_str() const { return shape_str(rows(), cols()); }
  static std::string shape_str(std::int64_t r, std::int64_t c) {
    std::ostringstream os;
    os << "[" << r << "x" << c << "]";
    return os.str();
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<R> data_;
};

template <typename R>
inline void check_same_shape(const Tensor<R>& a, const Tensor<R>& b, const char* op) {
  if (!a.same_shape(b))
    fail(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace dgm
