#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

// Boost 1.74's pchip calls isnan unqualified; make std::isnan visible there.
namespace boost::math::interpolators {
using std::isnan;
}
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "knudsen/errors.hpp"
#include "knudsen/geometry.hpp"
#include "knudsen/random.hpp"
#include "knudsen/vec.hpp"

namespace knudsen {

/// Surface area of the unit sphere S^{n-1} in R^n.
inline double sphere_area(int n) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

/// Integral of (w.e)_+ over the unit sphere S^{n-1}, i.e. the volume of the
/// unit (n-1)-ball.
inline double hemisphere_cosine_integral(int n) {
  return std::pow(std::numbers::pi, 0.5 * (n - 1)) / std::tgamma(0.5 * (n + 1));
}

namespace detail {

/// Integral over [a, b] (b may be +inf) of a radial integrand that may carry
/// an integrable power singularity at 0.
template <class F>
double radial_quadrature(const F& f, double a, double b) {
  double err = 0.0, l1 = 0.0, total = 0.0, total_err = 0.0, total_l1 = 0.0;
  const double split = std::isinf(b) ? std::max(a, 1.0) : b;
  if (split > a) {
    boost::math::quadrature::tanh_sinh<double> ts;
    total += ts.integrate(f, a, split, 1e-12, &err, &l1);
    total_err += err;
    total_l1 += l1;
  }
  if (std::isinf(b)) {
    boost::math::quadrature::exp_sinh<double> es;
    total += es.integrate(f, split, b, 1e-12, &err, &l1);
    total_err += err;
    total_l1 += l1;
  }
  if (!std::isfinite(total) || total_err > 1e-8 * std::max(total_l1, 1e-300))
    throw QuadratureNotConverged("radial integral error estimate " + std::to_string(total_err));
  return total;
}

}  // namespace detail

/// Inverse-CDF table for a density proportional to `weight` on [0, r_max]:
/// 4096 knots, monotone cubic (PCHIP) interpolation in both directions.
class InverseCdfTable {
 public:
  InverseCdfTable() = default;

  template <class W>
  InverseCdfTable(const W& weight, double r_max, int knots = 4096) : r_max_(r_max) {
    std::vector<double> r(knots), cdf(knots);
    const double h = r_max / (knots - 1);
    r[0] = 0.0;
    cdf[0] = 0.0;
    for (int k = 1; k < knots; ++k) {
      r[k] = k * h;
      cdf[k] = cdf[k - 1] + boost::math::quadrature::gauss<double, 15>::integrate(weight, r[k - 1], r[k]);
    }
    const double total = cdf.back();
    if (!(total > 0.0)) throw QuadratureNotConverged("radial weight has no mass");
    std::vector<double> p, rr;
    for (int k = 0; k < knots; ++k) {
      const double c = cdf[k] / total;
      if (p.empty() || c > p.back()) {
        p.push_back(c);
        rr.push_back(r[k]);
      }
    }
    p.back() = 1.0;
    std::vector<double> p2 = p, rr2 = rr;
    quantile_ = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(
        std::move(p), std::move(rr));
    cdf_ = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(
        std::move(rr2), std::move(p2));
    r_support_ = r_max;
  }

  double quantile(double u) const { return std::clamp((*quantile_)(u), 0.0, r_max_); }
  double cdf(double r) const {
    if (r <= 0.0) return 0.0;
    if (r >= r_support_) return 1.0;
    return std::clamp((*cdf_)(r), 0.0, 1.0);
  }
  bool empty() const { return !quantile_; }

 private:
  double r_max_ = 0.0;
  double r_support_ = 0.0;
  std::shared_ptr<boost::math::interpolators::pchip<std::vector<double>>> quantile_;
  std::shared_ptr<boost::math::interpolators::pchip<std::vector<double>>> cdf_;
};

/// Radially symmetric velocity density M on R^n. Used both as the wall law
/// (diffuse re-emission) and as a velocity part of initial laws.
class VelocityLaw {
 public:
  enum class Kind { Maxwellian, TruncatedPower, TabulatedRadial };

  static VelocityLaw maxwellian(int n, double theta) {
    if (!(theta > 0.0)) throw ConfigError("Maxwellian temperature must be positive");
    VelocityLaw law(Kind::Maxwellian, n);
    law.theta_ = theta;
    law.finish();
    return law;
  }

  /// M(v) proportional to |v|^-alpha on |v| <= 1, alpha in (0, n).
  static VelocityLaw truncated_power(int n, double alpha) {
    if (!(alpha > 0.0 && alpha < n)) throw ConfigError("truncated power exponent must lie in (0, n)");
    VelocityLaw law(Kind::TruncatedPower, n);
    law.alpha_ = alpha;
    law.scale_ = (n - alpha) / sphere_area(n);
    law.finish();
    return law;
  }

  /// Piecewise-linear radial profile through (r_i, M_i); zero beyond the last
  /// knot. The profile is renormalised to unit mass.
  static VelocityLaw tabulated(int n, std::vector<double> r, std::vector<double> m) {
    if (r.size() != m.size() || r.size() < 2) throw ConfigError("tabulated law needs matching r, M arrays");
    for (std::size_t i = 1; i < r.size(); ++i)
      if (!(r[i] > r[i - 1])) throw ConfigError("tabulated radii must be strictly increasing");
    if (r.front() < 0.0) throw ConfigError("tabulated radii must be nonnegative");
    for (double v : m)
      if (v < 0.0) throw ConfigError("tabulated density must be nonnegative");
    VelocityLaw law(Kind::TabulatedRadial, n);
    law.table_r_ = std::move(r);
    law.table_m_ = std::move(m);
    law.raw_mass_ = sphere_area(n) * law.radial_moment(n - 1);
    if (!(law.raw_mass_ > 0.0)) throw ConfigError("tabulated density has zero mass");
    for (double& v : law.table_m_) v /= law.raw_mass_;
    law.finish();
    return law;
  }

  Kind kind() const { return kind_; }
  int dimension() const { return n_; }
  double theta() const { return theta_; }
  double alpha() const { return alpha_; }
  /// Mass of a tabulated profile before renormalisation (1 for closed forms).
  double raw_mass() const { return raw_mass_; }

  /// M(v) for |v| = r.
  double density(double r) const {
    switch (kind_) {
      case Kind::Maxwellian:
        return std::pow(2.0 * std::numbers::pi * theta_, -0.5 * n_) * std::exp(-r * r / (2.0 * theta_));
      case Kind::TruncatedPower:
        return (r > 0.0 && r <= 1.0) ? scale_ * std::pow(r, -alpha_) : 0.0;
      case Kind::TabulatedRadial: {
        if (r > table_r_.back()) return 0.0;
        if (r <= table_r_.front()) return table_m_.front();
        const auto it = std::upper_bound(table_r_.begin(), table_r_.end(), r);
        const std::size_t i = static_cast<std::size_t>(it - table_r_.begin());
        const double t = (r - table_r_[i - 1]) / (table_r_[i] - table_r_[i - 1]);
        return (1.0 - t) * table_m_[i - 1] + t * table_m_[i];
      }
    }
    return 0.0;
  }

  double log_density(double r) const {
    if (kind_ == Kind::Maxwellian)
      return -0.5 * n_ * std::log(2.0 * std::numbers::pi * theta_) - r * r / (2.0 * theta_);
    const double m = density(r);
    return m > 0.0 ? std::log(m) : -std::numeric_limits<double>::infinity();
  }

  /// Upper end of the radial support (infinity for the Maxwellian).
  double support_end() const {
    switch (kind_) {
      case Kind::Maxwellian: return std::numeric_limits<double>::infinity();
      case Kind::TruncatedPower: return 1.0;
      case Kind::TabulatedRadial: return table_r_.back();
    }
    return 0.0;
  }

  /// \int_0^inf r^k M(r) dr.
  double radial_moment(double k) const {
    if (kind_ == Kind::TabulatedRadial) {
      // Piecewise polynomial integrand: 15-point Gauss is exact per segment
      // for the integer k used here and accurate otherwise.
      double s = 0.0;
      if (table_r_.front() > 0.0) {
        s += boost::math::quadrature::gauss<double, 15>::integrate(
            [&](double r) { return std::pow(r, k) * density(r); }, 0.0, table_r_.front());
      }
      for (std::size_t i = 1; i < table_r_.size(); ++i) {
        s += boost::math::quadrature::gauss<double, 15>::integrate(
            [&](double r) { return std::pow(r, k) * density(r); }, table_r_[i - 1], table_r_[i]);
      }
      return s;
    }
    return detail::radial_quadrature(
        [&](double r) {
          const double m = density(r);
          return r > 0.0 && m > 0.0 ? std::pow(r, k) * m : 0.0;
        },
        0.0, support_end());
  }

  /// \int M over R^n, computed by radial quadrature.
  double total_mass() const { return sphere_area(n_) * radial_moment(n_ - 1); }

  /// Flux constant \int_{u.n > 0} M(u) (u.n) du.
  double c0() const { return c0_; }

  // Law of the speed |V| for V ~ M.
  double speed_pdf(double s) const {
    const double m = density(s);
    return s > 0.0 && m > 0.0 ? sphere_area(n_) * std::pow(s, n_ - 1) * m : 0.0;
  }
  double speed_cdf(double s) const {
    if (s <= 0.0) return 0.0;
    switch (kind_) {
      case Kind::Maxwellian: return boost::math::gamma_p(0.5 * n_, s * s / (2.0 * theta_));
      case Kind::TruncatedPower: return s >= 1.0 ? 1.0 : std::pow(s, n_ - alpha_);
      case Kind::TabulatedRadial: return speed_table_.cdf(s);
    }
    return 0.0;
  }

  // Speed density of diffuse re-emission, h_R(r) = c_R r^n M(r).
  double hR_pdf(double r) const {
    const double m = density(r);
    return r > 0.0 && m > 0.0 ? std::pow(r, n_) * m / moment_n_ : 0.0;
  }
  double hR_cdf(double r) const {
    if (r <= 0.0) return 0.0;
    if (kind_ == Kind::Maxwellian) return boost::math::gamma_p(0.5 * (n_ + 1), r * r / (2.0 * theta_));
    if (kind_ == Kind::TruncatedPower) return r >= 1.0 ? 1.0 : std::pow(r, n_ + 1 - alpha_);
    return hR_table_.cdf(r);
  }

  /// R ~ h_R. Maxwellian: sqrt(theta) * chi(n+1); otherwise the inverse-CDF table.
  double sample_hR(CounterRng& rng) const {
    if (kind_ == Kind::Maxwellian) {
      double s = 0.0;
      for (int i = 0; i <= n_; ++i) {
        const double g = rng.normal();
        s += g * g;
      }
      return std::sqrt(theta_ * s);
    }
    if (kind_ == Kind::TruncatedPower) return std::pow(rng.uniform_open(), 1.0 / (n_ + 1 - alpha_));
    return hR_table_.quantile(rng.uniform());
  }

  /// |V| for V ~ M.
  double sample_speed(CounterRng& rng) const {
    switch (kind_) {
      case Kind::Maxwellian: {
        double s = 0.0;
        for (int i = 0; i < n_; ++i) {
          const double g = rng.normal();
          s += g * g;
        }
        return std::sqrt(theta_ * s);
      }
      case Kind::TruncatedPower: return std::pow(rng.uniform_open(), 1.0 / (n_ - alpha_));
      case Kind::TabulatedRadial: return speed_table_.quantile(rng.uniform());
    }
    return 0.0;
  }

  /// V ~ M.
  template <int N>
  Vec<N> sample_velocity(CounterRng& rng) const {
    if (kind_ == Kind::Maxwellian) return std::sqrt(theta_) * rng.normal_vec<N>();
    Vec<N> dir;
    do {
      dir = rng.normal_vec<N>();
    } while (norm2(dir) == 0.0);
    return sample_speed(rng) * normalized(dir);
  }

 private:
  VelocityLaw(Kind kind, int n) : kind_(kind), n_(n) {
    if (n < 2) throw ConfigError("dimension must be at least 2");
  }

  void finish() {
    moment_n_ = radial_moment(n_);
    c0_ = hemisphere_cosine_integral(n_) * moment_n_;
    if (kind_ == Kind::TabulatedRadial) {
      const double rmax = table_r_.back();
      hR_table_ = InverseCdfTable([&](double r) { return std::pow(r, n_) * density(r); }, rmax);
      speed_table_ = InverseCdfTable([&](double r) { return std::pow(r, n_ - 1) * density(r); }, rmax);
    }
  }

  Kind kind_;
  int n_;
  double theta_ = 1.0;
  double alpha_ = 0.0;
  double scale_ = 1.0;
  double raw_mass_ = 1.0;
  double moment_n_ = 1.0;
  double c0_ = 0.0;
  std::vector<double> table_r_, table_m_;
  InverseCdfTable hR_table_, speed_table_;
};

/// Flux constant of a law; also cached on the law itself.
inline double compute_c0(const VelocityLaw& law) {
  return hemisphere_cosine_integral(law.dimension()) * law.radial_moment(law.dimension());
}

/// Angles (theta_1, ..., theta_{n-1}) with theta_1 in (-pi/2, pi/2) and the
/// others in [0, pi).
template <int N>
using AngleVector = std::array<double, N - 1>;

/// Randomness consumed by one boundary event: mark u, speed r, angles theta.
template <int N>
struct Innovation {
  double u = 0.0;
  double r = 0.0;
  AngleVector<N> theta{};

  friend bool operator==(const Innovation&, const Innovation&) = default;
};

template <int N>
using Frame = std::array<Vec<N>, N>;

/// Orthonormal frame (n_x, f_2, ..., f_n). The canonical axis least aligned with
/// n_x seeds f_2; the remaining vectors come from Gram-Schmidt over canonical
/// axes, taking at each step the one with the largest residual (ties by index).
template <int N>
Frame<N> frame_at(const BoundaryPoint<N>& at) {
  Frame<N> f;
  f[0] = at.normal;
  std::array<bool, N> used{};
  int k0 = 0;
  for (int k = 1; k < N; ++k)
    if (std::abs(at.normal[k]) < std::abs(at.normal[k0])) k0 = k;
  auto residual = [&](int k, int filled) {
    Vec<N> e = Vec<N>::unit(k);
    for (int j = 0; j < filled; ++j) e -= dot(e, f[j]) * f[j];
    return e;
  };
  f[1] = normalized(residual(k0, 1));
  used[k0] = true;
  for (int j = 2; j < N; ++j) {
    int best = -1;
    double best_norm = -1.0;
    Vec<N> best_vec;
    for (int k = 0; k < N; ++k) {
      if (used[k]) continue;
      const Vec<N> e = residual(k, j);
      const double nn = norm2(e);
      if (nn > best_norm) {
        best = k;
        best_norm = nn;
        best_vec = e;
      }
    }
    used[best] = true;
    f[j] = normalized(best_vec);
  }
  return f;
}

namespace detail {

// Unit vector on S^{m} (m = N - 2) from hyperspherical angles psi_1..psi_m.
template <int N>
std::array<double, N - 1> sphere_point(const AngleVector<N>& theta) {
  constexpr int M = N - 2;
  std::array<double, N - 1> w{};
  double s = 1.0;
  for (int k = 0; k < M; ++k) {
    const double psi = theta[k + 1];
    w[k] = s * std::cos(psi);
    s *= std::sin(psi);
  }
  w[M] = s;
  return w;
}

// True when the last nonzero coordinate is positive: a fundamental domain of
// the antipodal map on S^{m}.
template <std::size_t K>
bool in_half_sphere(const std::array<double, K>& w) {
  for (std::size_t i = K; i-- > 0;)
    if (w[i] != 0.0) return w[i] > 0.0;
  return true;
}

}  // namespace detail

/// Unit direction with u.n_x = cos(theta_1): polar axis n_x, the remaining
/// angles place the tangential part on a half sphere of the tangent space.
template <int N>
Vec<N> vartheta(const BoundaryPoint<N>& at, const AngleVector<N>& theta) {
  const Frame<N> f = frame_at(at);
  const auto w = detail::sphere_point<N>(theta);
  const double st = std::sin(theta[0]);
  Vec<N> u = std::cos(theta[0]) * f[0];
  for (int k = 0; k < N - 1; ++k) u += (st * w[k]) * f[k + 1];
  return u;
}

/// Inverse of vartheta on inward unit directions.
template <int N>
AngleVector<N> vartheta_inverse(const BoundaryPoint<N>& at, const Vec<N>& u) {
  const Frame<N> f = frame_at(at);
  const double c = dot(u, f[0]);
  if (!(c > 0.0)) throw NotInward("direction does not point into the domain");
  std::array<double, N - 1> t{};
  double s2 = 0.0;
  for (int k = 0; k < N - 1; ++k) {
    t[k] = dot(u, f[k + 1]);
    s2 += t[k] * t[k];
  }
  AngleVector<N> theta{};
  const double s = std::sqrt(s2);
  if (s == 0.0) return theta;
  theta[0] = std::atan2(s, c);
  if (!detail::in_half_sphere(t)) {
    for (double& x : t) x = -x;
    theta[0] = -theta[0];
  }
  constexpr int M = N - 2;
  for (int k = 0; k < M; ++k) {
    double tail2 = 0.0;
    for (int j = k + 1; j <= M; ++j) tail2 += t[j] * t[j];
    theta[k + 1] = (k == M - 1) ? std::atan2(t[M], t[M - 1]) : std::atan2(std::sqrt(tail2), t[k]);
  }
  return theta;
}

/// Theta ~ h_Theta, density proportional to cos(theta_1) |sin theta_1|^{n-2}
/// prod_{j>=2} sin(theta_j)^{n-1-j}.
template <int N>
AngleVector<N> sample_angles(CounterRng& rng) {
  const double s = std::pow(rng.uniform(), 1.0 / (N - 1));
  std::array<double, N - 1> w{};
  if constexpr (N == 2) {
    w[0] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  } else {
    double nn = 0.0;
    do {
      nn = 0.0;
      for (double& x : w) {
        x = rng.normal();
        nn += x * x;
      }
    } while (nn == 0.0);
    for (double& x : w) x /= std::sqrt(nn);
  }
  AngleVector<N> theta{};
  theta[0] = std::asin(s);
  if (!detail::in_half_sphere(w)) {
    for (double& x : w) x = -x;
    theta[0] = -theta[0];
  }
  constexpr int M = N - 2;
  for (int k = 0; k < M; ++k) {
    double tail2 = 0.0;
    for (int j = k + 1; j <= M; ++j) tail2 += w[j] * w[j];
    theta[k + 1] = (k == M - 1) ? std::atan2(w[M], w[M - 1]) : std::atan2(std::sqrt(tail2), w[k]);
  }
  return theta;
}

/// (r, theta) ~ Upsilon = h_R (x) h_Theta. Speeds below 1e-12 are redrawn.
template <int N>
std::pair<double, AngleVector<N>> sample_upsilon(const VelocityLaw& law, CounterRng& rng) {
  double r;
  do {
    r = law.sample_hR(rng);
  } while (r < 1e-12);
  return {r, sample_angles<N>(rng)};
}

/// Innovation ~ Q = U (x) Upsilon.
template <int N>
Innovation<N> sample_innovation(const VelocityLaw& law, CounterRng& rng) {
  Innovation<N> q;
  q.u = rng.uniform();
  auto [r, theta] = sample_upsilon<N>(law, rng);
  q.r = r;
  q.theta = theta;
  return q;
}

/// Post-collision velocity: specular when u > alpha, diffuse r vartheta(x, theta) otherwise.
template <int N>
Vec<N> post_collision_w(const BoundaryPoint<N>& at, const Vec<N>& v_in, const Innovation<N>& q,
                        double alpha_at_x) {
  if (q.u > alpha_at_x) return specular_reflect(at, v_in);
  return q.r * vartheta(at, q.theta);
}

}  // namespace knudsen
