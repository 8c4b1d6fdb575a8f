#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "knudsen/coupling.hpp"
#include "knudsen/errors.hpp"
#include "knudsen/geometry.hpp"
#include "knudsen/parallel.hpp"
#include "knudsen/random.hpp"
#include "knudsen/stats.hpp"
#include "knudsen/transport.hpp"
#include "knudsen/velocity_law.hpp"

namespace knudsen {

/// Stream ids: pair i of an ensemble uses stream i; the independent reference
/// ensembles of the fidelity check use shifted blocks.
inline constexpr std::uint64_t kReferenceBlock = 1ULL << 40;

// ------------------------------------------------------------------ oracles

/// Closed-form planar geometry for disks and annuli, written independently of
/// Domain, used as reference for hitting-density and overlap checks.
namespace oracle {

struct Circle {
  Vec<2> center;
  double radius;
  double inward;  // -1: normal points to the centre (outer wall); +1: away (hole)

  Vec<2> point(double phi) const { return center + radius * Vec<2>{{std::cos(phi), std::sin(phi)}}; }
  Vec<2> normal(double phi) const { return inward * Vec<2>{{std::cos(phi), std::sin(phi)}}; }
};

inline std::vector<Circle> circles_of(const Domain<2>& d) {
  if (const auto* b = std::get_if<Ball<2>>(&d.shape())) return {{b->center, b->radius, -1.0}};
  if (const auto* a = std::get_if<Annulus<2>>(&d.shape()))
    return {{a->center, a->r_outer, -1.0}, {a->center, a->r_inner, 1.0}};
  throw ConfigError("closed-form oracle supports disks and annuli only");
}

/// Mutual visibility: inward at both ends and the open chord misses every hole.
inline bool sees(const std::vector<Circle>& cs, const Vec<2>& x, const Vec<2>& nx, const Vec<2>& z,
                 const Vec<2>& nz) {
  const Vec<2> d = z - x;
  if (!(dot(d, nx) > 0.0) || !(-dot(d, nz) > 0.0)) return false;
  for (const auto& c : cs) {
    if (c.inward < 0) continue;
    const double s = dot(c.center - x, d) / norm2(d);
    if (s > 0.0 && s < 1.0 && norm(x + s * d - c.center) <= c.radius) return false;
  }
  return true;
}

/// 2 \int_0^inf r^2 M(r) dr, the planar flux constant.
inline double flux_constant(const VelocityLaw& law) {
  const double end = law.support_end();
  auto f = [&](double r) { return r * r * law.density(r); };
  return 2.0 * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, end, 15, 1e-12);
}

/// Hitting density at (tau, z) for emission from x with inward normal nx.
inline double mu(const std::vector<Circle>& cs, const VelocityLaw& law, double c0, const Vec<2>& x,
                 const Vec<2>& nx, double tau, const Vec<2>& z, const Vec<2>& nz) {
  if (!(tau > 0.0) || !sees(cs, x, nx, z, nz)) return 0.0;
  const Vec<2> d = z - x;
  return law.density(norm(d) / tau) / c0 / std::pow(tau, 4) * dot(d, nx) * (-dot(d, nz));
}

template <class F>
double integrate(const F& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 12, 1e-10);
}

/// Fixed composite 15-point Gauss rule on finite [a, b].
template <class F>
double composite(const F& f, double a, double b, int panels) {
  double sum = 0.0;
  const double h = (b - a) / panels;
  for (int k = 0; k < panels; ++k)
    sum += boost::math::quadrature::gauss<double, 15>::integrate(f, a + k * h, a + (k + 1) * h);
  return sum;
}

}  // namespace oracle

// -------------------------------------------------------------- checks

struct StationarityRow {
  double t;
  double chi2_p;
  double speed_ks_p;
};

/// Particles started from mu_infinity; at each time the position law is
/// tested against the uniform law (k x k cells) and the speed law against M.
template <int N>
std::vector<StationarityRow> stationarity_check(const Model<N>& model, std::size_t particles,
                                                const std::vector<double>& times, std::uint64_t seed,
                                                unsigned threads, int cells = 10) {
  const auto init = InitialLaw<N>::equilibrium();
  const auto snaps = parallel_map<std::vector<PhasePoint<N>>>(particles, threads, [&](std::size_t i) {
    CounterRng rng(seed, i);
    auto p = init.sample(model, rng);
    std::vector<PhasePoint<N>> out;
    for (double t : times) {
      const auto [x, v] = state_at(model, p, t, rng);
      out.push_back({x, v});
    }
    return out;
  });
  const auto probs = spatial_cell_probabilities(model.domain, cells);
  std::vector<StationarityRow> rows;
  for (std::size_t k = 0; k < times.size(); ++k) {
    std::vector<Vec<N>> xs;
    std::vector<double> speeds;
    for (const auto& s : snaps) {
      xs.push_back(s[k].x);
      speeds.push_back(norm(s[k].v));
    }
    const auto chi = chi2_test(spatial_counts(model.domain, cells, xs), probs);
    const auto ks = ks_test(speeds, [&](double s) { return model.wall.speed_cdf(s); });
    rows.push_back({times[k], chi.p_value, ks.p_value});
  }
  return rows;
}

struct HittingCheck {
  double chi2_p = 0.0;
  double oracle_mass = 0.0;  // total oracle probability, 1 when mu is normalised
  std::size_t cells = 0;
};

/// (zeta(x0, V), q(x0, V)) for diffusely emitted V against the closed-form
/// density on (tau bins) x (boundary component, angle bins).
inline HittingCheck hitting_density_check(const Model<2>& model, const BoundaryPoint<2>& x0, std::size_t samples,
                                          int tau_bins, int angle_bins, std::uint64_t seed, unsigned threads) {
  const auto cs = oracle::circles_of(model.domain);
  std::vector<double> edges{0.0};
  const double lo = 0.02 * model.domain.diameter(), hi = 25.0 * model.domain.diameter();
  for (int k = 0; k <= tau_bins - 2; ++k) edges.push_back(lo * std::pow(hi / lo, static_cast<double>(k) / (tau_bins - 2)));
  edges.push_back(std::numeric_limits<double>::infinity());
  const std::size_t ncell = cs.size() * angle_bins * tau_bins;
  auto cell_of = [&](std::size_t comp, double phi, double tau) {
    const double a = std::fmod(phi + 2 * std::numbers::pi, 2 * std::numbers::pi);
    const int ai = std::clamp(static_cast<int>(a / (2 * std::numbers::pi) * angle_bins), 0, angle_bins - 1);
    const int ti = std::clamp(static_cast<int>(std::upper_bound(edges.begin(), edges.end(), tau) - edges.begin()) - 1, 0,
                              tau_bins - 1);
    return (comp * angle_bins + ai) * tau_bins + ti;
  };

  constexpr std::size_t kBatch = 4096;
  const std::size_t batches = (samples + kBatch - 1) / kBatch;
  const auto partial = parallel_map<std::vector<std::uint64_t>>(batches, threads, [&](std::size_t b) {
    std::vector<std::uint64_t> counts(ncell, 0);
    CounterRng rng(seed, b);
    const std::size_t end = std::min(samples, (b + 1) * kBatch);
    for (std::size_t i = b * kBatch; i < end; ++i) {
      const auto [r, th] = sample_upsilon<2>(model.wall, rng);
      const Vec<2> v = r * vartheta(x0, th);
      const double tau = model.domain.exit_time(x0.x, v, true);
      const Vec<2> z = x0.x + tau * v;
      std::size_t comp = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < cs.size(); ++c) {
        const double gap = std::abs(norm(z - cs[c].center) - cs[c].radius);
        if (gap < best) {
          best = gap;
          comp = c;
        }
      }
      const Vec<2> rel = z - cs[comp].center;
      ++counts[cell_of(comp, std::atan2(rel[1], rel[0]), tau)];
    }
    return counts;
  });
  std::vector<std::uint64_t> counts(ncell, 0);
  for (const auto& p : partial)
    for (std::size_t i = 0; i < ncell; ++i) counts[i] += p[i];

  const double c0 = oracle::flux_constant(model.wall);
  const double support = model.wall.support_end();
  auto second_moment = [&](double u) {
    u = std::min({u, support, 60.0});
    if (!(u > 0.0)) return 0.0;
    return oracle::composite([&](double r) { return r * r * model.wall.density(r); }, 0.0, u, 16);
  };
  std::vector<double> prob(ncell, 0.0);
  for (std::size_t comp = 0; comp < cs.size(); ++comp) {
    const auto& c = cs[comp];
    for (int ai = 0; ai < angle_bins; ++ai) {
      const double p1 = 2 * std::numbers::pi * ai / angle_bins, p2 = 2 * std::numbers::pi * (ai + 1) / angle_bins;
      for (int ti = 0; ti < tau_bins; ++ti) {
        const double a = edges[ti], b = edges[ti + 1];
        prob[(comp * angle_bins + ai) * tau_bins + ti] = oracle::composite(
            [&](double phi) {
              const Vec<2> z = c.point(phi), nz = c.normal(phi);
              if (!oracle::sees(cs, x0.x, x0.normal, z, nz)) return 0.0;
              // tau -> s = |z - x0| / tau turns the time integral into a speed moment
              const Vec<2> d = z - x0.x;
              const double len = norm(d);
              const double mass = second_moment(len / a) - second_moment(len / b);
              return c.radius * mass / c0 / std::pow(len, 3) * dot(d, x0.normal) * (-dot(d, nz));
            },
            p1, p2, 8);
      }
    }
  }
  HittingCheck out;
  for (double p : prob) out.oracle_mass += p;
  out.cells = ncell;
  out.chi2_p = chi2_test(counts, prob).p_value;
  return out;
}

struct LambdaCheck {
  std::size_t attempts = 0;
  double success_rate = 0.0;
  double overlap = 0.0;  // quadrature of the min of the two hitting densities
  double sigma = 0.0;
  double ks_r_p = 0.0;
  double ks_r_tilde_p = 0.0;
  bool within_3sigma() const { return std::abs(success_rate - overlap) <= 3.0 * sigma; }
};

/// Maximal-coupling draws for a stationary particle at x_tilde0 with velocity
/// v_tilde0, against the quadrature value of the overlap mass.
inline LambdaCheck lambda_check(const Model<2>& model, const BoundaryPoint<2>& x0, const Vec<2>& x_tilde0,
                                const Vec<2>& v_tilde0, std::size_t attempts, std::uint64_t seed, unsigned threads) {
  const double lag = model.domain.hitting_time(x_tilde0, v_tilde0);
  const BoundaryPoint<2> xt = model.domain.hitting_point(x_tilde0, v_tilde0);
  struct Draw {
    bool ok;
    double r, rt;
  };
  const auto draws = parallel_map<Draw>(attempts, threads, [&](std::size_t i) {
    CounterRng rng(seed, i);
    const auto a = maximal_coupling_draw(rng, model.domain, model.wall, x0, xt, lag);
    return Draw{a.success, a.r, a.r_tilde};
  });
  LambdaCheck out;
  out.attempts = attempts;
  std::vector<double> r, rt;
  std::size_t ok = 0;
  for (const auto& d : draws) {
    ok += d.ok;
    r.push_back(d.r);
    rt.push_back(d.rt);
  }
  out.success_rate = static_cast<double>(ok) / attempts;
  const auto cdf = [&](double s) { return model.wall.hR_cdf(s); };
  out.ks_r_p = ks_test(r, cdf).p_value;
  out.ks_r_tilde_p = ks_test(rt, cdf).p_value;

  const auto cs = oracle::circles_of(model.domain);
  const double c0 = oracle::flux_constant(model.wall);
  double overlap = 0.0;
  for (const auto& c : cs) {
    overlap += oracle::integrate(
        [&](double phi) {
          const Vec<2> z = c.point(phi), nz = c.normal(phi);
          return c.radius * oracle::integrate(
                                [&](double tau) {
                                  return std::min(oracle::mu(cs, model.wall, c0, x0.x, x0.normal, tau, z, nz),
                                                  oracle::mu(cs, model.wall, c0, xt.x, xt.normal, tau - lag, z, nz));
                                },
                                lag, std::numeric_limits<double>::infinity());
        },
        0.0, 2 * std::numbers::pi);
  }
  out.overlap = overlap;
  out.sigma = std::sqrt(std::max(overlap * (1 - overlap), 1e-12) / attempts);
  return out;
}

struct FidelityCheck {
  double primary_speed_p = 0.0;
  double primary_radius_p = 0.0;
  double stationary_speed_p = 0.0;
  double stationary_radius_p = 0.0;
  double min_p() const {
    return std::min({primary_speed_p, primary_radius_p, stationary_speed_p, stationary_radius_p});
  }
};

/// Two-sample KS of each chain of coupled pairs at time t against an
/// independent single-chain ensemble with the same initial law.
template <int N>
FidelityCheck fidelity_check(const Model<N>& model, const PatchPair<N>& patches, const GammaOptions& opt,
                             const InitialLaw<N>& f0, std::size_t pairs, double t, std::uint64_t seed,
                             unsigned threads) {
  const auto mu_inf = InitialLaw<N>::equilibrium();
  const auto coupled = parallel_map<std::pair<PhasePoint<N>, PhasePoint<N>>>(pairs, threads, [&](std::size_t i) {
    CounterRng rng(seed, i);
    const auto p = f0.sample(model, rng);
    const auto s = mu_inf.sample(model, rng);
    auto c = make_coupled(p, s);
    return advance_coupled_to(model, patches, c, t, rng, opt);
  });
  auto single = [&](const InitialLaw<N>& law, std::uint64_t block) {
    return parallel_map<PhasePoint<N>>(pairs, threads, [&](std::size_t i) {
      CounterRng rng(seed, block + i);
      auto p = law.sample(model, rng);
      const auto [x, v] = state_at(model, p, t, rng);
      return PhasePoint<N>{x, v};
    });
  };
  const auto ref_p = single(f0, kReferenceBlock);
  const auto ref_s = single(mu_inf, 2 * kReferenceBlock);
  auto column = [](const auto& pts, auto f) {
    std::vector<double> out;
    for (const auto& p : pts) out.push_back(f(p));
    return out;
  };
  std::vector<PhasePoint<N>> cp, cs;
  for (const auto& pr : coupled) {
    cp.push_back(pr.first);
    cs.push_back(pr.second);
  }
  const auto speed = [](const PhasePoint<N>& p) { return norm(p.v); };
  const auto radius = [](const PhasePoint<N>& p) { return norm(p.x); };
  FidelityCheck out;
  out.primary_speed_p = ks_test(column(cp, speed), column(ref_p, speed)).p_value;
  out.primary_radius_p = ks_test(column(cp, radius), column(ref_p, radius)).p_value;
  out.stationary_speed_p = ks_test(column(cs, speed), column(ref_s, speed)).p_value;
  out.stationary_radius_p = ks_test(column(cs, radius), column(ref_s, radius)).p_value;
  return out;
}

struct PermanenceCheck {
  std::size_t merged = 0;
  std::size_t divergences = 0;
  std::size_t events_checked = 0;
};

/// Runs pairs until `target` of them have merged, then steps each merged pair
/// `extra_events` more times, comparing the chains bitwise after every step.
template <int N>
PermanenceCheck merge_permanence_check(const Model<N>& model, const PatchPair<N>& patches, const GammaOptions& opt,
                                       const InitialLaw<N>& f0, std::size_t target, int extra_events, double t_max,
                                       std::uint64_t seed, unsigned threads) {
  struct One {
    bool merged = false;
    std::size_t divergences = 0;
    std::size_t events = 0;
  };
  PermanenceCheck out;
  const auto mu_inf = InitialLaw<N>::equilibrium();
  std::size_t offset = 0;
  while (out.merged < target) {
    const std::size_t batch = std::max<std::size_t>(target - out.merged, 256);
    const auto res = parallel_map<One>(batch, threads, [&](std::size_t j) {
      CounterRng rng(seed, offset + j);
      auto c = make_coupled(f0.sample(model, rng), mu_inf.sample(model, rng));
      One o;
      if (run_until_coupled(model, patches, c, t_max, rng, opt).censored) return o;
      o.merged = true;
      for (int k = 0; k < extra_events; ++k) {
        coupled_step(model, patches, c, rng, opt);
        ++o.events;
        if (!c.identical() || c.z) ++o.divergences;
      }
      return o;
    });
    for (const auto& o : res) {
      if (!o.merged || out.merged >= target) continue;
      ++out.merged;
      out.divergences += o.divergences;
      out.events_checked += o.events;
    }
    offset += batch;
    if (offset > 100 * target + 100000) break;
  }
  return out;
}

// ------------------------------------------------------------ pair ensembles

struct PairRecord {
  MergeSample merge;
  CouplingAudit audit;
  std::uint64_t primary_collisions = 0;
  std::uint64_t stationary_collisions = 0;
};

template <int N>
std::vector<PairRecord> run_pairs(const Model<N>& model, const PatchPair<N>& patches, const GammaOptions& opt,
                                  const InitialLaw<N>& f0, std::size_t pairs, double t_max, std::uint64_t seed,
                                  unsigned threads) {
  const auto mu_inf = InitialLaw<N>::equilibrium();
  return parallel_map<PairRecord>(pairs, threads, [&](std::size_t i) {
    CounterRng rng(seed, i);
    const auto p = f0.sample(model, rng);
    const auto s = mu_inf.sample(model, rng);
    auto c = make_coupled(p, s);
    const auto o = run_until_coupled(model, patches, c, t_max, rng, opt);
    PairRecord r;
    r.merge = {o.time, o.censored};
    r.audit = c.audit;
    r.primary_collisions = c.primary.collisions;
    r.stationary_collisions = c.stationary.collisions;
    return r;
  });
}

inline std::vector<MergeSample> merge_samples(const std::vector<PairRecord>& recs) {
  std::vector<MergeSample> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(r.merge);
  return out;
}

}  // namespace knudsen
