#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spde/errors.hpp"

namespace spde {

/// Polynomial drift F(u) = c0 u - c1 u^3 - c2 u^5 - ... with all c_i >= 0.
class DriftSpec {
 public:
  DriftSpec() = default;

  /// F(u) = u - u^q for odd q >= 3.
  static DriftSpec canonical(int q) {
    if (q < 3 || q % 2 == 0) throw InvalidParameter("drift.q must be an odd integer >= 3, got " + std::to_string(q));
    std::vector<double> c(static_cast<std::size_t>((q - 1) / 2 + 1), 0.0);
    c.front() = 1.0;
    c.back() = 1.0;
    DriftSpec d(std::move(c));
    d.q_ = q;
    return d;
  }

  /// coeffs[k] multiplies u^(2k+1); coeffs[0] enters with + sign, the rest with - sign.
  static DriftSpec polynomial(std::vector<double> coeffs) {
    for (double c : coeffs) {
      if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidParameter("drift coefficients must be finite and >= 0");
    }
    return DriftSpec(std::move(coeffs));
  }

  static DriftSpec zero() { return DriftSpec(std::vector<double>{}); }

  const std::vector<double>& coeffs() const noexcept { return c_; }
  double c0() const noexcept { return c_.empty() ? 0.0 : c_[0]; }
  /// Canonical exponent q, or 0 for a general polynomial.
  int canonical_q() const noexcept { return q_; }
  /// Highest odd power appearing with nonzero coefficient (1 if linear, 0 if zero).
  int degree() const noexcept {
    for (std::size_t k = c_.size(); k-- > 0;) {
      if (c_[k] != 0.0) return static_cast<int>(2 * k + 1);
    }
    return 0;
  }

  double value(double u) const {
    if (q_ > 0) return u - int_pow(u, q_);
    double acc = 0.0;
    const double u2 = u * u;
    double pw = u;
    for (std::size_t k = 0; k < c_.size(); ++k) {
      acc += (k == 0 ? c_[k] : -c_[k]) * pw;
      pw *= u2;
    }
    return acc;
  }

  double derivative(double u) const {
    if (q_ > 0) return 1.0 - q_ * int_pow(u, q_ - 1);
    double acc = 0.0;
    const double u2 = u * u;
    double pw = 1.0;
    for (std::size_t k = 0; k < c_.size(); ++k) {
      const double deg = static_cast<double>(2 * k + 1);
      acc += (k == 0 ? c_[k] : -c_[k]) * deg * pw;
      pw *= u2;
    }
    return acc;
  }

 private:
  explicit DriftSpec(std::vector<double> c) : c_(std::move(c)) {}

  static double int_pow(double x, int n) {
    double r = 1.0;
    for (int i = 0; i < n; ++i) r *= x;
    return r;
  }

  std::vector<double> c_;
  int q_ = 0;
};

inline double eval_drift(const DriftSpec& spec, double u) { return spec.value(u); }
inline double eval_drift_derivative(const DriftSpec& spec, double u) { return spec.derivative(u); }

struct DiffusionValues {
  double g;      // G(u)
  double dg;     // DG(u)
  double dg_g;   // DG(u) G(u)
};

enum class DiffusionKind { kLinear, kSmoothedSqrt, kUser };

/// Pointwise noise coefficient G together with DG and the Milstein composite DG*G.
class DiffusionSpec {
 public:
  using Fn = std::function<double(double)>;

  DiffusionSpec() : DiffusionSpec(linear(0.0)) {}

  /// G(u) = delta u
  static DiffusionSpec linear(double delta) { return DiffusionSpec(DiffusionKind::kLinear, delta, {}, {}); }
  /// G(u) = delta sqrt(u^2 + 1)
  static DiffusionSpec smoothed_sqrt(double delta) {
    return DiffusionSpec(DiffusionKind::kSmoothedSqrt, delta, {}, {});
  }
  static DiffusionSpec user(Fn g, Fn dg) {
    if (!g || !dg) throw InvalidParameter("user diffusion requires both G and DG");
    return DiffusionSpec(DiffusionKind::kUser, 0.0, std::move(g), std::move(dg));
  }

  DiffusionKind kind() const noexcept { return kind_; }
  double delta() const noexcept { return delta_; }

  /// True when G vanishes identically.
  bool is_zero() const noexcept { return kind_ != DiffusionKind::kUser && delta_ == 0.0; }

  DiffusionValues eval(double u) const {
    switch (kind_) {
      case DiffusionKind::kLinear:
        return {delta_ * u, delta_, delta_ * delta_ * u};
      case DiffusionKind::kSmoothedSqrt: {
        const double r = std::sqrt(u * u + 1.0);
        // delta u / r * delta r simplifies to delta^2 u
        return {delta_ * r, delta_ * u / r, delta_ * delta_ * u};
      }
      case DiffusionKind::kUser: {
        const double g = g_(u), dg = dg_(u);
        if (!std::isfinite(g) || !std::isfinite(dg)) {
          throw EvaluationError("user diffusion returned a non-finite value at u = " + std::to_string(u));
        }
        return {g, dg, dg * g};
      }
    }
    return {0.0, 0.0, 0.0};
  }

  /// Second derivative D^2 G; central differences of DG for user kinds.
  double second_derivative(double u) const {
    switch (kind_) {
      case DiffusionKind::kLinear:
        return 0.0;
      case DiffusionKind::kSmoothedSqrt: {
        const double r2 = u * u + 1.0;
        return delta_ / (r2 * std::sqrt(r2));
      }
      case DiffusionKind::kUser: {
        const double h = 1e-5 * std::max(1.0, std::abs(u));
        return (dg_(u + h) - dg_(u - h)) / (2.0 * h);
      }
    }
    return 0.0;
  }

 private:
  DiffusionSpec(DiffusionKind k, double delta, Fn g, Fn dg)
      : kind_(k), delta_(delta), g_(std::move(g)), dg_(std::move(dg)) {
    if (!std::isfinite(delta_)) throw InvalidParameter("diffusion.delta must be finite");
  }

  DiffusionKind kind_;
  double delta_;
  Fn g_;
  Fn dg_;
};

inline DiffusionValues eval_diffusion(const DiffusionSpec& spec, double u) { return spec.eval(u); }

/// u0(x, y) = tanh((|x - c| - r0) / (sqrt(2) eps))
struct TanhCircle {
  double r0 = 0.6;
  double eps = 0.04;
  double cx = 0.0;
  double cy = 0.0;

  double operator()(double x, double y) const {
    return std::tanh((std::hypot(x - cx, y - cy) - r0) / (std::sqrt(2.0) * eps));
  }
};

struct Model {
  DriftSpec drift = DriftSpec::canonical(3);
  DiffusionSpec diffusion = DiffusionSpec::linear(0.0);
};

// ---------------------------------------------------------------------------
// Sampled checks of the structural assumptions. These are heuristics: they
// report the largest ratio seen over random pairs in [lo, hi].

struct SampleRange {
  double lo = -10.0;
  double hi = 10.0;
};

namespace detail {

template <typename PairFn>
double max_over_pairs(std::size_t count, SampleRange range, std::uint64_t seed, PairFn&& fn) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(range.lo, range.hi);
  double best = -INFINITY;
  for (std::size_t i = 0; i < count; ++i) {
    const double a = dist(rng), b = dist(rng);
    if (a == b) continue;
    best = std::max(best, fn(a, b));
  }
  return best;
}

}  // namespace detail

/// Estimate of mu in (a-b)(F(a)-F(b)) <= mu (a-b)^2.
inline double validate_one_sided_lipschitz(const DriftSpec& spec, std::size_t sample_count,
                                           SampleRange range = {}, std::uint64_t seed = 1) {
  if (sample_count < 2) throw InvalidParameter("validate_one_sided_lipschitz: sample_count must be >= 2");
  return detail::max_over_pairs(sample_count, range, seed, [&](double a, double b) {
    const double d = a - b;
    return d * (spec.value(a) - spec.value(b)) / (d * d);
  });
}

struct DiffusionReport {
  double lipschitz = 0.0;         // sup |G(a)-G(b)| / |a-b|
  double linear_growth = 0.0;     // sup |G(u)| / (|u| + 1)
  double dg_bound = 0.0;          // sup |DG|
  double d2g_bound = 0.0;         // sup |D^2 G|
  double composite_lipschitz = 0.0;  // sup |DG(a)G(a) - DG(b)G(b)| / |a-b|
  double cross_lipschitz = 0.0;   // sup |(DG(a) - DG(b)) G(b)| / |a-b|
  std::vector<std::string> warnings;
};

/// Sampled constants for the Lipschitz/growth, derivative-bound and composite
/// assumptions on G. Each constant is re-estimated on a doubled range; a
/// ratio that grows by more than 10% is flagged as possibly unbounded.
inline DiffusionReport validate_diffusion_assumptions(const DiffusionSpec& spec, std::size_t sample_count,
                                                      SampleRange range = {}, std::uint64_t seed = 1) {
  if (sample_count < 2) throw InvalidParameter("validate_diffusion_assumptions: sample_count must be >= 2");
  auto estimate = [&](SampleRange r) {
    DiffusionReport rep;
    rep.lipschitz = std::max(0.0, detail::max_over_pairs(sample_count, r, seed, [&](double a, double b) {
      return std::abs(spec.eval(a).g - spec.eval(b).g) / std::abs(a - b);
    }));
    rep.composite_lipschitz = std::max(0.0, detail::max_over_pairs(sample_count, r, seed, [&](double a, double b) {
      return std::abs(spec.eval(a).dg_g - spec.eval(b).dg_g) / std::abs(a - b);
    }));
    rep.cross_lipschitz = std::max(0.0, detail::max_over_pairs(sample_count, r, seed, [&](double a, double b) {
      return std::abs((spec.eval(a).dg - spec.eval(b).dg) * spec.eval(b).g) / std::abs(a - b);
    }));
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> dist(r.lo, r.hi);
    for (std::size_t i = 0; i < sample_count; ++i) {
      const double u = dist(rng);
      const auto v = spec.eval(u);
      rep.linear_growth = std::max(rep.linear_growth, std::abs(v.g) / (std::abs(u) + 1.0));
      rep.dg_bound = std::max(rep.dg_bound, std::abs(v.dg));
      rep.d2g_bound = std::max(rep.d2g_bound, std::abs(spec.second_derivative(u)));
    }
    return rep;
  };

  DiffusionReport rep = estimate(range);
  const double mid = 0.5 * (range.lo + range.hi), half = 0.5 * (range.hi - range.lo);
  const DiffusionReport wide = estimate({mid - 2.0 * half, mid + 2.0 * half});
  auto check = [&](const char* name, double narrow, double widened) {
    if (widened > 1.1 * narrow + 1e-12) {
      rep.warnings.push_back(std::string(name) + " estimate grows with the sampling range (" +
                             std::to_string(narrow) + " -> " + std::to_string(widened) + ")");
    }
  };
  check("Lipschitz", rep.lipschitz, wide.lipschitz);
  check("linear growth", rep.linear_growth, wide.linear_growth);
  check("DG bound", rep.dg_bound, wide.dg_bound);
  check("D2G bound", rep.d2g_bound, wide.d2g_bound);
  check("composite DG*G Lipschitz", rep.composite_lipschitz, wide.composite_lipschitz);
  check("(DG(u)-DG(v))G(v) Lipschitz", rep.cross_lipschitz, wide.cross_lipschitz);
  return rep;
}

}  // namespace spde
