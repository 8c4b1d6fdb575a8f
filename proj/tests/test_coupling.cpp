#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "knudsen/coupling.hpp"
#include "knudsen/experiments.hpp"
#include "knudsen/stats.hpp"

using namespace knudsen;
using boost::math::quadrature::gauss_kronrod;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();
using V2 = Vec<2>;

const auto kDisk = Domain<2>::ball({0.0, 0.0}, 1.0);
const auto kMaxwell = VelocityLaw::maxwellian(2, 1.0);
const PatchPair<2> kWhole = [] {
  PatchPair<2> p;
  p.whole_boundary = true;
  return p;
}();

Model<2> disk_model(double alpha = 1.0) { return Model<2>(kDisk, kMaxwell, AlphaField::constant(alpha), alpha); }

double chi3_cdf(double r) {
  return std::erf(r / std::sqrt(2.0)) - std::sqrt(2.0 / kPi) * r * std::exp(-0.5 * r * r);
}
double angle_cdf(double t) { return 0.5 * (1.0 + std::sin(t)); }

// Unit-disk hitting density in (tau, boundary angle phi), normalised to unit
// mass: M(|z - x| / tau) tau^-4 |(z - x).n_x| |(z - x).n_z| / c0, c0 = 1/sqrt(2 pi).
double disk_mu(const V2& x, double tau, double phi) {
  if (!(tau > 0.0)) return 0.0;
  const V2 z{std::cos(phi), std::sin(phi)};
  const V2 d = z - x;
  const double speed = norm(d) / tau;
  const double m = std::exp(-0.5 * speed * speed) / (2 * kPi);
  const double a = std::abs(dot(d, -1.0 * x)), b = std::abs(dot(d, -1.0 * z));
  return m / std::pow(tau, 4) * a * b * std::sqrt(2 * kPi);
}

double integrate(const std::function<double(double)>& f, double a, double b) {
  return gauss_kronrod<double, 31>::integrate(f, a, b, 12, 1e-10);
}

// Angle of the boundary point opposite direction, kept away from x's own angle.
double disk_mass(const V2& x, double phi_x) {
  return integrate(
      [&](double phi) { return integrate([&](double tau) { return disk_mu(x, tau, phi); }, 0.0, kInf); }, phi_x,
      phi_x + 2 * kPi);
}

BoundaryPoint<2> on_disk(double phi) { return kDisk.boundary_point({std::cos(phi), std::sin(phi)}); }

JointPosition<2> joint_of(const Model<2>& m, CoupledState<2>& c) {
  const auto eP = schedule_next(m, c.primary);
  const auto eS = schedule_next(m, c.stationary);
  const EventTime now = (eS.time < eP.time) ? eS.time : eP.time;
  JointPosition<2> at;
  at.now = now;
  at.x_on_boundary = eP.time == now;
  at.x = at.x_on_boundary ? eP.point : BoundaryPoint<2>{c.primary.x + (now - c.primary.t) * c.primary.v, V2{}};
  at.v_minus = c.primary.v;
  at.x_tilde_on_boundary = eS.time == now;
  at.x_tilde = at.x_tilde_on_boundary ? eS.point.x : c.stationary.x + (now - c.stationary.t) * c.stationary.v;
  at.v_tilde_minus = c.stationary.v;
  if (!at.x_tilde_on_boundary) at.tilde_next = eS;
  return at;
}

CoupledState<2> random_pair(const Model<2>& m, CounterRng& rng) {
  return make_coupled(InitialLaw<2>::equilibrium().sample(m, rng), InitialLaw<2>::equilibrium().sample(m, rng));
}

}  // namespace

TEST(MuX, DiameterExample) {
  const auto x = on_disk(0.0), z = on_disk(kPi);
  const double m1 = std::exp(-0.5) / (2 * kPi);
  const double expected = m1 * std::pow(2.0, -4) * 2.0 * 2.0 / kMaxwell.c0();
  EXPECT_NEAR(mu_x_eval(kDisk, kMaxwell, x, 2.0, z), expected, 1e-15);
  EXPECT_NEAR(mu_x_eval(kDisk, kMaxwell, x, 2.0, z), disk_mu(x.x, 2.0, kPi), 1e-15);
}

TEST(MuX, AgreesWithDirectFormula) {
  CounterRng rng(41, 0);
  for (int i = 0; i < 1000; ++i) {
    const double phi_x = 2 * kPi * rng.uniform(), phi_z = 2 * kPi * rng.uniform(), tau = 5 * rng.uniform();
    const auto x = on_disk(phi_x), z = on_disk(phi_z);
    const double ref = disk_mu(x.x, tau, phi_z);
    EXPECT_NEAR(mu_x_eval(kDisk, kMaxwell, x, tau, z), ref, 1e-12 * (1.0 + ref));
  }
}

TEST(MuX, VanishingCases) {
  const auto x = on_disk(0.0);
  EXPECT_EQ(mu_x_eval(kDisk, kMaxwell, x, 1.0, x), 0.0);
  EXPECT_EQ(mu_x_eval(kDisk, kMaxwell, x, 0.0, on_disk(2.0)), 0.0);
  EXPECT_EQ(mu_x_eval(kDisk, kMaxwell, x, -1.0, on_disk(2.0)), 0.0);
  // Tangential chord: z - x orthogonal to n_x.
  const BoundaryPoint<2> flat{{0.0, 0.0}, {0.0, 1.0}};
  EXPECT_EQ(mu_x_eval(kDisk, kMaxwell, flat, 1.0, BoundaryPoint<2>{{1.0, 0.0}, {-1.0, 0.0}}), 0.0);
  const auto ann = Domain<2>::annulus({0.0, 0.0}, 1.0, 2.0);
  EXPECT_EQ(mu_x_eval(ann, kMaxwell, ann.boundary_point({2.0, 0.0}), 2.0, ann.boundary_point({-2.0, 0.0})), 0.0);
  EXPECT_GT(mu_x_eval(ann, kMaxwell, ann.boundary_point({2.0, 0.0}), 2.0,
                      ann.boundary_point({2 * std::cos(0.3), 2 * std::sin(0.3)})),
            0.0);
}

TEST(MuX, UnitMass) {
  EXPECT_NEAR(disk_mass({1.0, 0.0}, 0.0), 1.0, 1e-7);
  EXPECT_NEAR(disk_mass({std::cos(2.0), std::sin(2.0)}, 2.0), 1.0, 1e-7);
}

TEST(MuX, MatchesSampledHittingLaw) {
  // 8 x 12 cells of (tau, phi) for emissions from x = (1, 0).
  const auto m = disk_model();
  const auto x = on_disk(0.0);
  const std::vector<double> tau_edges = {0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0};
  auto tau_cell = [&](double t) {
    return static_cast<std::size_t>(std::upper_bound(tau_edges.begin(), tau_edges.end(), t) - tau_edges.begin());
  };
  CounterRng rng(42, 0);
  const int samples = 200000;
  std::vector<std::uint64_t> counts(8 * 12, 0);
  for (int i = 0; i < samples; ++i) {
    const auto [r, th] = sample_upsilon<2>(m.wall, rng);
    const V2 v = r * vartheta(x, th);
    const double tau = kDisk.hitting_time(x.x, v);
    double phi = std::atan2(x.x[1] + tau * v[1], x.x[0] + tau * v[0]);
    if (phi < 0) phi += 2 * kPi;
    ++counts[12 * tau_cell(tau) + std::min<std::size_t>(11, static_cast<std::size_t>(phi / (2 * kPi / 12)))];
  }
  std::vector<double> prob(counts.size(), 0.0);
  std::vector<double> lo = {0.0}, hi;
  for (double e : tau_edges) {
    hi.push_back(e);
    lo.push_back(e);
  }
  hi.push_back(kInf);
  double total = 0.0;
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 12; ++b) {
      prob[12 * a + b] = integrate(
          [&](double phi) { return integrate([&](double tau) { return disk_mu(x.x, tau, phi); }, lo[a], hi[a]); },
          b * 2 * kPi / 12, (b + 1) * 2 * kPi / 12);
      total += prob[12 * a + b];
    }
  EXPECT_NEAR(total, 1.0, 1e-6);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double e = prob[k] * samples;
    if (e < 5) continue;
    EXPECT_LT(std::abs(counts[k] - e), 4.5 * std::sqrt(e)) << "cell " << k;
  }
  EXPECT_GT(chi2_test(counts, prob).p_value, 1e-3);
}

TEST(MaximalCoupling, ZeroLagSameTargetAlwaysSucceeds) {
  const auto x0 = on_disk(0.4);
  CounterRng rng(43, 0);
  for (int i = 0; i < 5000; ++i) {
    const auto a = maximal_coupling_draw(rng, kDisk, kMaxwell, x0, x0, 0.0);
    ASSERT_TRUE(a.success);
    EXPECT_NEAR(a.r_tilde, a.r, 1e-12 * a.r);
    EXPECT_NEAR(a.theta_tilde[0], a.theta[0], 1e-10);
  }
}

TEST(MaximalCoupling, SuccessRateMatchesOverlapAndMarginalsAreUpsilon) {
  // x0 = (1,0); stationary at the centre moving left reaches (-1,0) after 1.
  const auto x0 = on_disk(0.0);
  const auto xt = on_disk(kPi);
  const double lag = 1.0;
  const double overlap = integrate(
      [&](double phi) {
        return integrate([&](double tau) { return std::min(disk_mu(x0.x, tau, phi), disk_mu(xt.x, tau - lag, phi)); },
                         lag, kInf);
      },
      0.0, 2 * kPi);
  CounterRng rng(44, 0);
  const int attempts = 100000;
  int ok = 0;
  std::vector<double> r, rt, th, tht;
  for (int i = 0; i < attempts; ++i) {
    const auto a = maximal_coupling_draw(rng, kDisk, kMaxwell, x0, xt, lag);
    ok += a.success;
    r.push_back(a.r);
    rt.push_back(a.r_tilde);
    th.push_back(a.theta[0]);
    tht.push_back(a.theta_tilde[0]);
    if (a.success) {
      // Shared target reached by both flights.
      EXPECT_NEAR(norm(x0.x + a.flight * a.r * vartheta(x0, a.theta) - a.meeting.x), 0.0, 1e-9);
      EXPECT_NEAR(norm(xt.x + (a.flight - lag) * a.r_tilde * vartheta(xt, a.theta_tilde) - a.meeting.x), 0.0, 1e-9);
    }
  }
  const double rate = static_cast<double>(ok) / attempts;
  const double sigma = std::sqrt(overlap * (1 - overlap) / attempts);
  EXPECT_NEAR(rate, overlap, 3 * sigma) << "overlap " << overlap;
  EXPECT_GT(ks_test(r, chi3_cdf).p_value, 1e-3);
  EXPECT_GT(ks_test(rt, chi3_cdf).p_value, 1e-3);
  EXPECT_GT(ks_test(th, angle_cdf).p_value, 1e-3);
  EXPECT_GT(ks_test(tht, angle_cdf).p_value, 1e-3);
}

TEST(MaximalCoupling, Errors) {
  CounterRng rng(45, 0);
  EXPECT_THROW(maximal_coupling_draw(rng, kDisk, kMaxwell, on_disk(0.0), on_disk(kPi), 2.5), LagTooLarge);
  CouplingOptions none;
  none.residual_budget = 0;
  bool thrown = false;
  for (int i = 0; i < 200 && !thrown; ++i) {
    try {
      maximal_coupling_draw(rng, kDisk, kMaxwell, on_disk(0.0), on_disk(kPi), 1.0, none);
    } catch (const ResidualRejectionBudgetExceeded&) {
      thrown = true;
    }
  }
  EXPECT_TRUE(thrown);
}

TEST(GammaDraw, IdenticalPositionsGiveIdenticalInnovations) {
  const auto m = disk_model();
  JointPosition<2> at;
  at.x = on_disk(1.0);
  at.x_on_boundary = true;
  at.x_tilde = at.x.x;
  at.x_tilde_on_boundary = true;
  at.v_minus = {-1.0, 0.0};
  at.v_tilde_minus = {0.0, -2.0};
  CounterRng rng(46, 0);
  const auto g = gamma_draw(rng, m, kWhole, at, {});
  EXPECT_EQ(g.branch, GammaBranch::Identical);
  EXPECT_EQ(g.q, g.q_tilde);
}

TEST(GammaDraw, SlowStationaryChainIsIndependent) {
  const auto m = disk_model();
  auto p = make_particle(m, V2{0.0, 0.0}, V2{2.0, 0.0});
  auto s = make_particle(m, V2{0.0, 0.5}, V2{-0.5, 0.0});
  auto c = make_coupled(p, s);
  auto at = joint_of(m, c);
  ASSERT_TRUE(at.x_on_boundary);
  CounterRng rng(47, 0);
  EXPECT_EQ(gamma_draw(rng, m, kWhole, at, {}).branch, GammaBranch::Independent);
  at.v_tilde_minus = {-1.5, 0.0};
  EXPECT_EQ(gamma_draw(rng, m, kWhole, at, {}).branch, GammaBranch::Maximal);
  at.v_minus = {0.9, 0.0};
  EXPECT_EQ(gamma_draw(rng, m, kWhole, at, {}).branch, GammaBranch::Independent);
}

TEST(GammaDraw, PatchModeGatesOnEmittingPatch) {
  const Model<2> m(Domain<2>::annulus({0.0, 0.0}, 1.0, 2.0), kMaxwell, AlphaField::constant(1.0), 1.0);
  PatchPair<2> patches;
  patches.emitting = {{2.0, 0.0}, 1.0};
  patches.receiving = {{2 * std::cos(1.5), 2 * std::sin(1.5)}, 0.2};
  GammaOptions opt;
  opt.mode = CouplingMode::Patch;
  JointPosition<2> at;
  at.x = m.domain.boundary_point({2.0, 0.0});
  at.x_on_boundary = true;
  at.v_minus = {1.5, 0.0};
  at.x_tilde = {1.5, 0.0};
  at.x_tilde_on_boundary = false;
  at.v_tilde_minus = {1.2, 0.1};
  at.tilde_next = ScheduledEvent<2>{EventTime{0.4, 0.0}, m.domain.hitting_point(at.x_tilde, at.v_tilde_minus)};
  CounterRng rng(48, 0);
  EXPECT_EQ(gamma_draw(rng, m, patches, at, opt).branch, GammaBranch::Maximal);
  at.x = m.domain.boundary_point({-2.0, 0.0});
  EXPECT_EQ(gamma_draw(rng, m, patches, at, opt).branch, GammaBranch::Independent);
  at.x = m.domain.boundary_point({2.0, 0.0});
  at.v_tilde_minus = {-1.2, 0.1};
  at.tilde_next = ScheduledEvent<2>{EventTime{0.4, 0.0}, m.domain.hitting_point(at.x_tilde, at.v_tilde_minus)};
  EXPECT_EQ(gamma_draw(rng, m, patches, at, opt).branch, GammaBranch::Independent);
  EXPECT_EQ(gamma_draw(rng, m, patches, at, GammaOptions{}).branch, GammaBranch::Maximal);
}

TEST(GammaDraw, BothMarginalsAreQ) {
  const auto m = disk_model();
  CounterRng setup(49, 0);
  std::vector<double> u, r, th, ut, rt, tht;
  int maximal = 0;
  for (std::uint64_t i = 0; i < 100000; ++i) {
    JointPosition<2> at;
    at.x = on_disk(2 * kPi * setup.uniform());
    at.x_on_boundary = true;
    at.v_minus = m.wall.sample_velocity<2>(setup);
    at.x_tilde = kDisk.sample_uniform(setup);
    at.x_tilde_on_boundary = false;
    at.v_tilde_minus = m.wall.sample_velocity<2>(setup);
    at.tilde_next = ScheduledEvent<2>{EventTime{kDisk.hitting_time(at.x_tilde, at.v_tilde_minus), 0.0},
                                      kDisk.hitting_point(at.x_tilde, at.v_tilde_minus)};
    CounterRng rng(50, i);
    const auto g = gamma_draw(rng, m, kWhole, at, {});
    maximal += g.branch == GammaBranch::Maximal;
    if (g.branch == GammaBranch::Maximal) {
      ASSERT_EQ(g.q.u, g.q_tilde.u);
    }
    u.push_back(g.q.u);
    r.push_back(g.q.r);
    th.push_back(g.q.theta[0]);
    ut.push_back(g.q_tilde.u);
    rt.push_back(g.q_tilde.r);
    tht.push_back(g.q_tilde.theta[0]);
  }
  EXPECT_GT(maximal, 10000);
  EXPECT_LT(maximal, 90000);
  const auto uniform = [](double x) { return std::clamp(x, 0.0, 1.0); };
  EXPECT_GT(ks_test(u, uniform).p_value, 1e-3);
  EXPECT_GT(ks_test(ut, uniform).p_value, 1e-3);
  EXPECT_GT(ks_test(r, chi3_cdf).p_value, 1e-3);
  EXPECT_GT(ks_test(rt, chi3_cdf).p_value, 1e-3);
  // Angles binned into 20 equiprobable cells of h_Theta.
  auto cells = [](const std::vector<double>& t) {
    std::vector<std::uint64_t> c(20, 0);
    for (double x : t) ++c[std::min<std::size_t>(19, static_cast<std::size_t>(angle_cdf(x) * 20))];
    return c;
  };
  EXPECT_GT(chi2_test(cells(th), std::vector<double>(20, 0.05)).p_value, 1e-3);
  EXPECT_GT(chi2_test(cells(tht), std::vector<double>(20, 0.05)).p_value, 1e-3);
}

TEST(CoupledStep, PrimaryHitsWithStationaryInteriorStoresZ) {
  const auto m = disk_model();
  auto c = make_coupled(make_particle(m, V2{0.0, 0.0}, V2{2.0, 0.0}), make_particle(m, V2{0.0, 0.1}, V2{-1.5, 0.0}));
  CounterRng rng(51, 0);
  CounterRng replay = rng;
  const auto g = gamma_draw(replay, m, kWhole, joint_of(m, c), {});
  ASSERT_EQ(g.branch, GammaBranch::Maximal);
  coupled_step(m, kWhole, c, rng);
  EXPECT_EQ(c.last_row, 1);
  ASSERT_TRUE(c.z.has_value());
  EXPECT_EQ(c.z->q, g.q_tilde);
  EXPECT_EQ(c.z->target, g.target);
  EXPECT_EQ(c.stationary.collisions, 0u);
  EXPECT_EQ(c.primary.collisions, 1u);
}

TEST(CoupledStep, StationaryHitConsumesStoredZ) {
  const auto m = disk_model();
  int checked = 0;
  for (std::uint64_t i = 0; i < 2000 && checked < 200; ++i) {
    CounterRng rng(52, i);
    auto c = random_pair(m, rng);
    for (int k = 0; k < 50 && !c.merged; ++k) {
      const auto eP = schedule_next(m, c.primary);
      const auto eS = schedule_next(m, c.stationary);
      if (c.z && eS.time < eP.time) {
        const auto stored = *c.z;
        const V2 expected =
            detail::guard_tangential(m, eS.point, post_collision_w(eS.point, c.stationary.v, stored.q, 1.0), nullptr);
        coupled_step(m, kWhole, c, rng);
        EXPECT_EQ(c.last_row, 10);
        EXPECT_FALSE(c.z.has_value());
        EXPECT_EQ(c.stationary.v, expected);
        if (stored.target) {
          EXPECT_EQ(schedule_next(m, c.stationary).time, stored.target->time);
          EXPECT_EQ(schedule_next(m, c.stationary).point, stored.target->point);
        }
        ++checked;
        break;
      }
      coupled_step(m, kWhole, c, rng);
    }
  }
  EXPECT_GE(checked, 200);
}

TEST(CoupledStep, ZLifecycleFollowsTableRows) {
  const auto m = Model<2>(kDisk, kMaxwell, AlphaField::constant(0.7), 0.7);
  std::uint64_t steps = 0;
  std::array<std::uint64_t, 10> seen{};
  for (std::uint64_t i = 0; steps < 1'000'000; ++i) {
    CounterRng rng(53, i);
    auto c = random_pair(m, rng);
    EventTime last{};
    while (steps < 1'000'000 && c.steps < 2000) {
      const bool had_z = c.z.has_value();
      const auto eP = schedule_next(m, c.primary);
      const auto eS = schedule_next(m, c.stationary);
      const EventTime now = (eS.time < eP.time) ? eS.time : eP.time;
      ASSERT_TRUE(last <= now);
      last = now;
      coupled_step(m, kWhole, c, rng);
      ++steps;
      const int row = c.last_row;
      ASSERT_GE(row, 1);
      ASSERT_LE(row, 10);
      ++seen[row - 1];
      // Rows 1-4 and 9 start from an empty Z, rows 5-8 and 10 from a stored one.
      ASSERT_EQ(had_z, row >= 5 && row != 9);
      switch (row) {
        case 1:
        case 2: ASSERT_TRUE(c.z.has_value()); break;
        case 5:
        case 6: ASSERT_TRUE(c.z.has_value()); break;
        default: ASSERT_FALSE(c.z.has_value()); break;
      }
      ASSERT_EQ(c.primary.t, now);
      ASSERT_EQ(c.stationary.t, now);
      if (c.merged) {
        ASSERT_TRUE(c.identical());
        ASSERT_FALSE(c.z.has_value());
      }
    }
  }
  for (int row : {1, 2, 5, 6, 9, 10}) EXPECT_GT(seen[row - 1], 0u) << "row " << row;
}

TEST(CoupledStep, MergeAtSharedEvent) {
  const auto m = disk_model();
  int merges = 0;
  for (std::uint64_t i = 0; i < 500; ++i) {
    CounterRng rng(54, i);
    auto c = random_pair(m, rng);
    while (!c.merged && c.steps < 100000) {
      coupled_step(m, kWhole, c, rng);
      if (c.merged) {
        ++merges;
        EXPECT_EQ(c.last_row, 3) << "merge happens when both chains hit the same stored point";
        EXPECT_TRUE(c.identical());
        EXPECT_EQ(c.merge_time, c.primary.t);
      }
    }
  }
  EXPECT_GT(merges, 450);
}

TEST(RunUntilCoupled, IdenticalStartMergesAtZero) {
  const auto m = disk_model();
  CounterRng a(55, 7), b(55, 7);
  const auto p = InitialLaw<2>::equilibrium().sample(m, a);
  const auto s = InitialLaw<2>::equilibrium().sample(m, b);
  auto c = make_coupled(p, s);
  CounterRng rng(56, 0);
  const auto o = run_until_coupled(m, kWhole, c, 200.0, rng);
  EXPECT_FALSE(o.censored);
  EXPECT_EQ(o.time, 0.0);
  EXPECT_EQ(o.steps, 0u);
}

TEST(RunUntilCoupled, DiskCensoringIsRare) {
  const auto m = disk_model();
  InitialLaw<2> f0;
  f0.velocity = InitialLaw<2>::Velocity::Law;
  f0.law = kMaxwell;
  const auto recs = run_pairs(m, kWhole, {}, f0, 10000, 200.0, 57, 1);
  std::size_t censored = 0;
  std::vector<double> times;
  for (const auto& r : recs) {
    censored += r.merge.censored;
    if (!r.merge.censored) times.push_back(r.merge.time);
  }
  EXPECT_LT(static_cast<double>(censored) / recs.size(), 0.01);
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  EXPECT_TRUE(std::isfinite(times[times.size() / 2]));
}

TEST(RunUntilCoupled, MergedChainsStayBitwiseEqual) {
  const auto m = Model<2>(kDisk, kMaxwell, AlphaField::constant(0.5), 0.5);
  const auto check = merge_permanence_check(m, kWhole, {}, InitialLaw<2>::equilibrium(), 1000, 100,
                                            1000.0, 58, 1);
  EXPECT_EQ(check.merged, 1000u);
  EXPECT_EQ(check.events_checked, 100000u);
  EXPECT_EQ(check.divergences, 0u);
}

TEST(CouplingProperties, MarginalFidelity) {
  const auto m = disk_model();
  InitialLaw<2> f0;
  f0.velocity = InitialLaw<2>::Velocity::Law;
  f0.law = VelocityLaw::truncated_power(2, 1.0);
  const auto fid = fidelity_check(m, kWhole, {}, f0, 10000, 5.0, 59, 1);
  EXPECT_GT(fid.primary_speed_p, 1e-3);
  EXPECT_GT(fid.primary_radius_p, 1e-3);
  EXPECT_GT(fid.stationary_speed_p, 1e-3);
  EXPECT_GT(fid.stationary_radius_p, 1e-3);
}

TEST(CouplingProperties, LambdaSuccessRateIsStableAcrossSeeds) {
  const auto m = disk_model();
  std::vector<double> rates;
  for (std::uint64_t seed : {60, 61, 62}) {
    CouplingAudit total;
    for (const auto& r : run_pairs(m, kWhole, {}, InitialLaw<2>::equilibrium(), 3000, 200.0, seed, 1))
      total += r.audit;
    ASSERT_GT(total.lambda_attempts, 1000u);
    rates.push_back(static_cast<double>(total.lambda_successes) / total.lambda_attempts);
  }
  const double mean = (rates[0] + rates[1] + rates[2]) / 3.0;
  EXPECT_GT(mean, 0.05);
  for (double r : rates) EXPECT_NEAR(r, mean, 0.2 * mean);
}
