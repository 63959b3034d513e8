#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "dgm/tensor.hpp"

namespace dgm {

/// Seeded RNG with portable derived distributions. mt19937_64 output is
/// standardized; uniform/normal are mapped explicitly (no std::*_distribution)
/// so that streams are bit-reproducible across standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::int64_t below(std::int64_t n) {
    return static_cast<std::int64_t>(gen_() % static_cast<std::uint64_t>(n));
  }

  /// Standard normal via Box-Muller (one value per call; pair cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename R>
  Tensor<R> normal_tensor(std::int64_t rows, std::int64_t cols) {
    Tensor<R> t(rows, cols);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<R>(normal());
    return t;
  }

  template <typename R>
  Tensor<R> uniform_tensor(std::int64_t rows, std::int64_t cols, double lo, double hi) {
    Tensor<R> t(rows, cols);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<R>(uniform(lo, hi));
    return t;
  }

  /// Fisher-Yates shuffle with this generator (stable across platforms).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      const std::int64_t j = below(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << gen_ << " " << (have_spare_ ? 1 : 0) << " ";
    os.precision(17);
    os << spare_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    is >> gen_ >> spare_flag >> spare_;
    if (!is) fail("Rng::load_state: malformed state string");
    have_spare_ = spare_flag != 0;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dgm
