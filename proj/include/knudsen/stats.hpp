#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "knudsen/errors.hpp"
#include "knudsen/geometry.hpp"
#include "knudsen/random.hpp"
#include "knudsen/transport.hpp"
#include "knudsen/vec.hpp"
#include "knudsen/velocity_law.hpp"

namespace knudsen {

// ---------------------------------------------------------------- survival

/// Log-spaced grid on [t_lo, t_hi] with `per_decade` points per factor 10,
/// both ends included.
inline std::vector<double> log_grid(double t_lo, double t_hi, int per_decade = 40) {
  if (!(t_lo > 0.0 && t_hi > t_lo)) throw ConfigError("log grid needs 0 < t_lo < t_hi");
  const double span = std::log10(t_hi / t_lo);
  const int steps = std::max(1, static_cast<int>(std::ceil(span * per_decade - 1e-9)));
  std::vector<double> g(steps + 1);
  for (int k = 0; k <= steps; ++k) g[k] = t_lo * std::pow(10.0, span * k / steps);
  g.back() = t_hi;
  return g;
}

struct WilsonInterval {
  double lo, hi;
};

/// Wilson score interval for k successes out of n at normal quantile z.
inline WilsonInterval wilson(std::uint64_t k, std::uint64_t n, double z = 1.96) {
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double den = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / den;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / den;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Merge time of one pair; censored pairs carry the horizon as time.
struct MergeSample {
  double time = 0.0;
  bool censored = false;
};

struct SurvivalCurve {
  std::vector<double> t;
  std::vector<double> survival;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  std::uint64_t n_pairs = 0;
  double censor_fraction = 0.0;
  double t_max = 0.0;
};

/// Empirical P(tau > t) on the grid points not beyond t_max. Censored pairs
/// count as surviving up to t_max.
inline SurvivalCurve survival_curve(const std::vector<MergeSample>& samples, const std::vector<double>& grid,
                                    double t_max) {
  if (samples.size() < 100) throw TooFewSamples("survival curve needs at least 100 samples");
  std::vector<double> times;
  times.reserve(samples.size());
  std::uint64_t censored = 0;
  for (const auto& s : samples) {
    if (s.censored) ++censored;
    else times.push_back(s.time);
  }
  std::sort(times.begin(), times.end());
  SurvivalCurve c;
  c.n_pairs = samples.size();
  c.censor_fraction = static_cast<double>(censored) / static_cast<double>(samples.size());
  c.t_max = t_max;
  for (double g : grid) {
    if (g > t_max) break;
    const auto alive = static_cast<std::uint64_t>(times.end() - std::upper_bound(times.begin(), times.end(), g));
    const std::uint64_t k = alive + censored;
    const auto ci = wilson(k, c.n_pairs);
    c.t.push_back(g);
    c.survival.push_back(static_cast<double>(k) / static_cast<double>(c.n_pairs));
    c.ci_lo.push_back(ci.lo);
    c.ci_hi.push_back(ci.hi);
  }
  return c;
}

struct RateFit {
  double t_lo = 0.0, t_hi = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

/// Weighted least squares of log P against log t on [t_lo, t_hi]. Weights are
/// the inverse delta-method variances n P / (1 - P), with 1 - P floored at 1/n.
inline RateFit fit_tail_slope(const std::vector<double>& t, const std::vector<double>& p, double n,
                              double t_lo, double t_hi) {
  std::vector<double> xs, ys, ws;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < t_lo * (1 - 1e-12) || t[i] > t_hi * (1 + 1e-12)) continue;
    if (!(p[i] > 0.0)) throw DegenerateWindow("survival vanishes inside the fit window");
    xs.push_back(std::log(t[i]));
    ys.push_back(std::log(p[i]));
    ws.push_back(n * p[i] / std::max(1.0 - p[i], 1.0 / n));
  }
  if (xs.size() < 8) throw DegenerateWindow("fit window holds fewer than 8 grid points");
  const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  if (*ymax - *ymin <= 1e-12 * std::max(1.0, std::abs(*ymax)))
    throw DegenerateWindow("survival is constant on the fit window");
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sw += ws[i];
    sx += ws[i] * xs[i];
    sy += ws[i] * ys[i];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += ws[i] * (xs[i] - mx) * (xs[i] - mx);
    sxy += ws[i] * (xs[i] - mx) * (ys[i] - my);
    syy += ws[i] * (ys[i] - my) * (ys[i] - my);
  }
  RateFit f;
  f.t_lo = t_lo;
  f.t_hi = t_hi;
  f.points = xs.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (f.intercept + f.slope * xs[i]);
    rss += ws[i] * e * e;
  }
  // Weights are absolute inverse variances, so the slope variance is 1 / sxx.
  f.slope_stderr = std::sqrt(1.0 / sxx);
  f.r2 = syy > 0 ? 1.0 - rss / syy : 1.0;
  return f;
}

inline RateFit fit_tail_slope(const SurvivalCurve& c, double t_lo, double t_hi) {
  if (t_hi > c.t_max * (1 + 1e-12)) throw DegenerateWindow("fit window extends beyond t_max");
  return fit_tail_slope(c.t, c.survival, static_cast<double>(c.n_pairs), t_lo, t_hi);
}

// ------------------------------------------------------------- hypothesis tests

/// Kolmogorov limiting survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  if (lambda < 1.18) {
    // Jacobi dual form converges fast for small lambda.
    const double y = std::exp(-M_PI * M_PI / (8.0 * lambda * lambda));
    double s = 0.0;
    for (int k = 1; k <= 50; k += 2) s += std::pow(y, k * k);
    return std::clamp(1.0 - std::sqrt(2.0 * M_PI) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

struct TestResult {
  double statistic = 0.0;
  double p_value = 0.0;
  double dof = 0.0;  // chi-square only
};

/// One-sample Kolmogorov-Smirnov test against a continuous CDF, with
/// Stephens' finite-n correction.
inline TestResult ks_test(std::vector<double> xs, const std::function<double(double)>& cdf) {
  if (xs.size() < 1000) throw TooFewSamples("KS test needs at least 1000 samples");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d), 0.0};
}

/// Two-sample Kolmogorov-Smirnov test.
inline TestResult ks_test(std::vector<double> a, std::vector<double> b) {
  if (a.size() < 1000 || b.size() < 1000) throw TooFewSamples("KS test needs at least 1000 samples per side");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d), 0.0};
}

/// Chi-square goodness of fit of observed counts against cell probabilities.
/// Consecutive cells are merged until every expected count reaches 5.
inline TestResult chi2_test(const std::vector<std::uint64_t>& observed, const std::vector<double>& prob) {
  if (observed.size() != prob.size()) throw ConfigError("chi2_test: size mismatch");
  const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
  if (n < 1000) throw TooFewSamples("chi-square test needs at least 1000 samples");
  const double ptot = std::accumulate(prob.begin(), prob.end(), 0.0);
  std::vector<double> o, e;
  double acc_o = 0, acc_e = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    acc_o += static_cast<double>(observed[i]);
    acc_e += n * prob[i] / ptot;
    if (acc_e >= 5.0) {
      o.push_back(acc_o);
      e.push_back(acc_e);
      acc_o = acc_e = 0;
    }
  }
  if (acc_e > 0 || acc_o > 0) {
    if (e.empty()) {
      o.push_back(acc_o);
      e.push_back(acc_e);
    } else {
      o.back() += acc_o;
      e.back() += acc_e;
    }
  }
  if (e.size() < 2) throw TooFewSamples("chi-square test has fewer than two cells after merging");
  double x2 = 0;
  for (std::size_t i = 0; i < o.size(); ++i) x2 += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
  const double dof = static_cast<double>(e.size() - 1);
  return {x2, boost::math::gamma_q(0.5 * dof, 0.5 * x2), dof};
}

/// Chi-square test that two count vectors come from the same cell law.
/// Consecutive cells are merged until each pooled expected count reaches 5.
inline TestResult chi2_homogeneity(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  if (a.size() != b.size()) throw ConfigError("chi2_homogeneity: size mismatch");
  const double na = std::accumulate(a.begin(), a.end(), 0.0);
  const double nb = std::accumulate(b.begin(), b.end(), 0.0);
  if (na < 1000 || nb < 1000) throw TooFewSamples("chi-square test needs at least 1000 samples per side");
  const double fa = na / (na + nb), fb = nb / (na + nb);
  std::vector<double> ca, cb;
  double acc_a = 0, acc_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc_a += static_cast<double>(a[i]);
    acc_b += static_cast<double>(b[i]);
    if (std::min(fa, fb) * (acc_a + acc_b) >= 5.0) {
      ca.push_back(acc_a);
      cb.push_back(acc_b);
      acc_a = acc_b = 0;
    }
  }
  if ((acc_a > 0 || acc_b > 0) && !ca.empty()) {
    ca.back() += acc_a;
    cb.back() += acc_b;
  }
  if (ca.size() < 2) throw TooFewSamples("chi-square test has fewer than two cells after merging");
  double x2 = 0;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    const double tot = ca[i] + cb[i];
    const double ea = tot * fa, eb = tot * fb;
    x2 += (ca[i] - ea) * (ca[i] - ea) / ea + (cb[i] - eb) * (cb[i] - eb) / eb;
  }
  const double dof = static_cast<double>(ca.size() - 1);
  return {x2, boost::math::gamma_q(0.5 * dof, 0.5 * x2), dof};
}

template <int N>
std::size_t spatial_cell(const Domain<N>& domain, int k, const Vec<N>& x) {
  auto idx = [&](int a) {
    const double u = (x[a] - domain.box_lo()[a]) / (domain.box_hi()[a] - domain.box_lo()[a]);
    return std::clamp(static_cast<int>(u * k), 0, k - 1);
  };
  return static_cast<std::size_t>(idx(0)) * k + idx(1);
}

/// Probability of each cell of a k x k grid over the first two coordinates of
/// the bounding box under the uniform law on D, by quasi-Monte Carlo.
template <int N>
std::vector<double> spatial_cell_probabilities(const Domain<N>& domain, int k, std::uint64_t points = 1'000'000) {
  std::vector<double> cells(static_cast<std::size_t>(k) * k, 0.0);
  double inside = 0;
  for (std::uint64_t i = 1; i <= points; ++i) {
    Vec<N> x;
    for (int a = 0; a < N; ++a)
      x[a] = domain.box_lo()[a] + (domain.box_hi()[a] - domain.box_lo()[a]) * halton(i, kHaltonPrimes[a]);
    if (!domain.contains(x)) continue;
    inside += 1;
    cells[spatial_cell(domain, k, x)] += 1;
  }
  for (double& c : cells) c /= inside;
  return cells;
}

template <int N>
std::vector<std::uint64_t> spatial_counts(const Domain<N>& domain, int k, const std::vector<Vec<N>>& xs) {
  std::vector<std::uint64_t> c(static_cast<std::size_t>(k) * k, 0);
  for (const auto& x : xs) ++c[spatial_cell(domain, k, x)];
  return c;
}

// -------------------------------------------------------------- TV distance

/// Product binning of phase space: a grid over the bounding box (per axis),
/// speed edges (last cell open-ended) and the polar angle of v in its first
/// two coordinates.
struct PhaseBinning {
  int position_bins = 4;
  std::vector<double> speed_edges = {0.5, 1.0, 1.5, 2.0, 3.0};
  int angle_bins = 8;
};

template <int N>
std::size_t phase_cell(const Domain<N>& domain, const PhaseBinning& b, const PhasePoint<N>& p) {
  std::size_t cell = 0;
  for (int a = 0; a < N; ++a) {
    const double u = (p.x[a] - domain.box_lo()[a]) / (domain.box_hi()[a] - domain.box_lo()[a]);
    cell = cell * b.position_bins + std::clamp(static_cast<int>(u * b.position_bins), 0, b.position_bins - 1);
  }
  const double s = norm(p.v);
  const auto sb = static_cast<std::size_t>(std::upper_bound(b.speed_edges.begin(), b.speed_edges.end(), s) -
                                           b.speed_edges.begin());
  cell = cell * (b.speed_edges.size() + 1) + sb;
  const double ang = std::atan2(p.v[1], p.v[0]) + M_PI;
  cell = cell * b.angle_bins + std::clamp(static_cast<int>(ang / (2 * M_PI) * b.angle_bins), 0, b.angle_bins - 1);
  return cell;
}

/// Half L1 distance between the normalised histograms of two samples.
template <int N>
double tv_histogram(const Domain<N>& domain, const std::vector<PhasePoint<N>>& a,
                    const std::vector<PhasePoint<N>>& b, const PhaseBinning& binning) {
  std::size_t cells = binning.angle_bins * (binning.speed_edges.size() + 1);
  for (int k = 0; k < N; ++k) cells *= binning.position_bins;
  std::vector<double> ha(cells, 0.0), hb(cells, 0.0);
  for (const auto& p : a) ha[phase_cell(domain, binning, p)] += 1.0 / a.size();
  for (const auto& p : b) hb[phase_cell(domain, binning, p)] += 1.0 / b.size();
  double s = 0.0;
  for (std::size_t i = 0; i < cells; ++i) s += std::abs(ha[i] - hb[i]);
  return 0.5 * s;
}

struct TvReport {
  double coarse, medium, fine;
  double min() const { return std::min({coarse, medium, fine}); }
  double max() const { return std::max({coarse, medium, fine}); }
};

/// The three binnings used for sensitivity reporting.
inline std::vector<PhaseBinning> tv_binnings() {
  return {PhaseBinning{2, {1.0, 2.0}, 4}, PhaseBinning{}, PhaseBinning{6, {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0}, 12}};
}

template <int N>
TvReport tv_sensitivity(const Domain<N>& domain, const std::vector<PhasePoint<N>>& a,
                        const std::vector<PhasePoint<N>>& b) {
  const auto bs = tv_binnings();
  return {tv_histogram(domain, a, b, bs[0]), tv_histogram(domain, a, b, bs[1]), tv_histogram(domain, a, b, bs[2])};
}

// ------------------------------------------------------------- moment gate

/// Rate functions r(t) accepted by the moment gate.
struct RateFunction {
  enum class Kind { Constant, Power, PowerLog } kind = Kind::Constant;
  double exponent = 0.0;  // d for Power, n for PowerLog

  static RateFunction constant() { return {}; }
  static RateFunction power(double d) { return {Kind::Power, d}; }
  /// (1+t)^n / (1 + log^2(1+t)).
  static RateFunction power_log(double n) { return {Kind::PowerLog, n}; }

  double operator()(double t) const {
    switch (kind) {
      case Kind::Constant: return 1.0;
      case Kind::Power: return std::pow(1.0 + t, exponent);
      case Kind::PowerLog: {
        const double l = std::log1p(t);
        return std::pow(1.0 + t, exponent) / (1.0 + l * l);
      }
    }
    return 1.0;
  }

  /// log r(t) from log t, so that t itself never has to be formed.
  double log_value_at(double log_t) const {
    const double l = log_t > 40.0 ? log_t : std::log1p(std::exp(log_t));  // log(1 + t)
    switch (kind) {
      case Kind::Constant: return 0.0;
      case Kind::Power: return exponent * l;
      case Kind::PowerLog:
        if (l <= 1.0) return exponent * l - std::log1p(l * l);
        return exponent * l - 2.0 * std::log(l) - std::log1p(1.0 / (l * l));
    }
    return 0.0;
  }
};

/// Speed law of the velocity part of an initial condition.
struct SpeedLaw {
  std::function<double(double)> pdf;  // empty for a point mass
  double point = 0.0;                 // speed of the point mass

  static SpeedLaw of(const VelocityLaw& law) {
    return {[law](double s) { return law.speed_pdf(s); }, 0.0};
  }
  static SpeedLaw point_mass(double s) { return {{}, s}; }
};

namespace detail {

// \int_0^inf g(s) ds for a nonnegative g given through log_g(log s), which
// returns -inf where g vanishes. The part below s = 1 is mapped through
// s = exp(-y). Throws MomentDiverges when the local log-log exponent of g at the
// origin reaches -1.
inline double moment_integral(const std::function<double(double)>& log_g, const std::string& what) {
  const double l1 = std::log(1e-10), l2 = std::log(1e-12);
  const double g1 = log_g(l1), g2 = log_g(l2);
  if (std::isfinite(g1) && std::isfinite(g2)) {
    const double beta = (g1 - g2) / (l1 - l2);
    if (beta <= -1.0 + 1e-4) throw MomentDiverges(what + ": integrand behaves like s^" + std::to_string(beta) + " at 0");
  }
  boost::math::quadrature::exp_sinh<double> es;
  double err = 0, l1norm = 0;
  const double near = es.integrate([&](double y) { return std::exp(log_g(-y) - y); }, 0.0,
                                   std::numeric_limits<double>::infinity(), 1e-10, &err, &l1norm);
  double err2 = 0, l1norm2 = 0;
  const double far = es.integrate([&](double s) { return std::exp(log_g(std::log(s))); }, 1.0,
                                  std::numeric_limits<double>::infinity(), 1e-10, &err2, &l1norm2);
  const double total = near + far;
  if (!std::isfinite(total) || err + err2 > 1e-6 * std::max(total, 1e-300))
    throw QuadratureNotConverged(what + ": error estimate " + std::to_string(err + err2));
  return total;
}

}  // namespace detail

struct MomentReport {
  double initial = 0.0;
  double equilibrium = 0.0;
  double reemission = 0.0;
  double c0() const { return std::max({initial, equilibrium, reemission}); }
};

/// The three moments E[r(d(D)/|V|)] under the initial speed law, the speed law
/// of M, and h_R. Throws MomentDiverges when any of them is infinite.
inline MomentReport moment_C0(const RateFunction& r, const SpeedLaw& initial, const VelocityLaw& wall,
                              double diameter) {
  // log r(d / s) + log p(s): r overflows long before the product does.
  auto against = [&](const std::function<double(double)>& pdf) {
    return [&r, pdf, diameter](double log_s) {
      const double p = pdf(std::exp(log_s));
      if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
      return r.log_value_at(std::log(diameter) - log_s) + std::log(p);
    };
  };
  MomentReport m;
  if (initial.pdf)
    m.initial = detail::moment_integral(against(initial.pdf), "initial law");
  else
    m.initial = r(diameter / initial.point);
  m.equilibrium = detail::moment_integral(against([&](double s) { return wall.speed_pdf(s); }), "equilibrium");
  m.reemission = detail::moment_integral(against([&](double s) { return wall.hR_pdf(s); }), "re-emission law");
  return m;
}

}  // namespace knudsen
