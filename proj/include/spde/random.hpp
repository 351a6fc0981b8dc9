#pragma once

#include <boost/math/distributions/normal.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spde/errors.hpp"

namespace spde {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Stateless:
/// the output is a pure function of (counter, key).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter apply(Counter ctr, Key key) {
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      ctr = round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static Counter round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Uniform in the open interval (0, 1) from 52 random bits. The midpoint
/// offset keeps both ends representable: 2^-53 and 1 - 2^-53.
inline double uniform_open01(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(a >> 6) << 26) | (b >> 6);
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

/// Standard normal draw for (seed, stream, index) by inverse CDF.
inline double standard_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                                static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  const Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  const auto out = Philox4x32::apply(ctr, key);
  static const boost::math::normal_distribution<double> unit;
  return boost::math::quantile(unit, uniform_open01(out[0], out[1]));
}

/// Scalar Wiener increments for one Monte Carlo sample at the finest step.
struct BrownianPath {
  double tau_fine = 0.0;
  std::vector<double> increments;
  std::uint64_t seed = 0;
  std::uint64_t sample_id = 0;

  std::size_t size() const noexcept { return increments.size(); }
  double final_time() const noexcept { return tau_fine * static_cast<double>(increments.size()); }
};

inline BrownianPath generate_path(std::uint64_t seed, std::uint64_t sample_id, std::size_t n_fine, double tau_fine) {
  if (n_fine == 0) throw InvalidParameter("generate_path: N_fine must be >= 1");
  if (!(tau_fine > 0.0) || !std::isfinite(tau_fine)) throw InvalidParameter("generate_path: tau_fine must be > 0");
  BrownianPath path{tau_fine, std::vector<double>(n_fine), seed, sample_id};
  const double scale = std::sqrt(tau_fine);
  for (std::size_t n = 0; n < n_fine; ++n) path.increments[n] = scale * standard_normal(seed, sample_id, n);
  return path;
}

namespace detail {

// Pairwise summation over power-of-two blocks, so that coarsening by f1 and
// then by f2/f1 rounds identically to coarsening by f2 directly.
inline double block_sum(const double* x, std::size_t n) {
  if (n == 1) return x[0];
  if ((n & (n - 1)) == 0) return block_sum(x, n / 2) + block_sum(x + n / 2, n / 2);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

}  // namespace detail

/// Block sums of `factor` consecutive increments: the same path observed on a coarser grid.
inline std::vector<double> coarsen_increments(const std::vector<double>& fine, std::size_t factor) {
  if (factor == 0 || fine.size() % factor != 0) {
    throw InvalidParameter("coarsen_increments: factor " + std::to_string(factor) + " does not divide " +
                           std::to_string(fine.size()));
  }
  std::vector<double> out(fine.size() / factor, 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = detail::block_sum(fine.data() + k * factor, factor);
  return out;
}

inline std::vector<double> coarsen_increments(const BrownianPath& path, std::size_t factor) {
  return coarsen_increments(path.increments, factor);
}

/// ((dW)^2 - tau) / 2, the iterated Ito integral of a scalar Wiener process over one step.
inline double milstein_bracket(double dW, double tau) { return 0.5 * (dW * dW - tau); }

}  // namespace spde
