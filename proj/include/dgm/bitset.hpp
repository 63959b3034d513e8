#pragma once

#include <cstdint>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm {

/// Fixed-size bit vector used to store per-task binary masks compactly.
class Bitset {
 public:
  Bitset() = default;
  explicit Bitset(std::int64_t n) : n_(n), words_((static_cast<std::size_t>(n) + 63) / 64, 0) {}

  std::int64_t size() const { return n_; }

  bool get(std::int64_t i) const {
    return (words_[static_cast<std::size_t>(i >> 6)] >> (i & 63)) & 1u;
  }
  void set(std::int64_t i, bool v) {
    const std::uint64_t bit = std::uint64_t(1) << (i & 63);
    auto& w = words_[static_cast<std::size_t>(i >> 6)];
    w = v ? (w | bit) : (w & ~bit);
  }

  std::int64_t count() const {
    std::int64_t c = 0;
    for (std::uint64_t w : words_) c += __builtin_popcountll(w);
    return c;
  }

  void or_with(const Bitset& o) {
    if (o.n_ != n_) fail("Bitset::or_with: size mismatch");
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
  }

  bool is_subset_of(const Bitset& o) const {
    if (o.n_ != n_) return false;
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] & ~o.words_[i]) return false;
    return true;
  }

  /// Grows to `n` bits; new bits are zero. Existing bit positions keep their
  /// values, so this matches zero-padding a mask after layer expansion only
  /// when the caller remaps indices (see resize_mask_2d).
  void resize_flat(std::int64_t n) {
    if (n < n_) fail("Bitset::resize_flat: shrinking not supported");
    n_ = n;
    words_.resize((static_cast<std::size_t>(n) + 63) / 64, 0);
  }

  std::vector<std::uint64_t>& words() { return words_; }
  const std::vector<std::uint64_t>& words() const { return words_; }

  Tensor<double> to_tensor(std::int64_t rows, std::int64_t cols) const {
    if (rows * cols != n_) fail("Bitset::to_tensor: shape does not match bit count");
    Tensor<double> t(rows, cols);
    for (std::int64_t i = 0; i < n_; ++i) t[i] = get(i) ? 1.0 : 0.0;
    return t;
  }

  static Bitset from_tensor_positive(const Tensor<double>& t) {
    Bitset b(t.size());
    for (std::int64_t i = 0; i < t.size(); ++i) b.set(i, t[i] > 0.0);
    return b;
  }

 private:
  std::int64_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Reinterprets a bitset laid out as old_rows x old_cols into a zero-padded
/// new_rows x new_cols bitset (row-major). Used when a layer grows.
inline Bitset resize_mask_2d(const Bitset& b, std::int64_t old_rows, std::int64_t old_cols,
                             std::int64_t new_rows, std::int64_t new_cols) {
  if (old_rows * old_cols != b.size()) fail("resize_mask_2d: shape does not match bit count");
  if (new_rows < old_rows || new_cols < old_cols) fail("resize_mask_2d: shrinking not supported");
  Bitset out(new_rows * new_cols);
  for (std::int64_t r = 0; r < old_rows; ++r)
    for (std::int64_t c = 0; c < old_cols; ++c)
      if (b.get(r * old_cols + c)) out.set(r * new_cols + c, true);
  return out;
}

}  // namespace dgm
