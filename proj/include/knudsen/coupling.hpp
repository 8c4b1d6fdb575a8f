#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "knudsen/errors.hpp"
#include "knudsen/geometry.hpp"
#include "knudsen/random.hpp"
#include "knudsen/transport.hpp"
#include "knudsen/velocity_law.hpp"

namespace knudsen {

/// Log of the hitting density mu_x(tau, z) of (zeta(x, V), q(x, V)) for a
/// diffusely emitted V from boundary point x; -inf outside the support.
template <int N>
double log_mu_x(const Domain<N>& domain, const VelocityLaw& wall, const BoundaryPoint<N>& x, double tau,
                const BoundaryPoint<N>& z) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (!(tau > 0.0)) return kNegInf;
  const Vec<N> d = z.x - x.x;
  const double a = std::abs(dot(d, x.normal));
  const double b = std::abs(dot(d, z.normal));
  if (a == 0.0 || b == 0.0) return kNegInf;
  if (!domain.is_convex() && !domain.communicates(x, z)) return kNegInf;
  const double lm = wall.log_density(norm(d) / tau);
  if (lm == kNegInf) return kNegInf;
  return lm - std::log(wall.c0()) - (N + 2) * std::log(tau) + std::log(a) + std::log(b);
}

template <int N>
double mu_x_eval(const Domain<N>& domain, const VelocityLaw& wall, const BoundaryPoint<N>& x, double tau,
                 const BoundaryPoint<N>& z) {
  return std::exp(log_mu_x(domain, wall, x, tau, z));
}

/// Meeting point fixed by a successful maximal-coupling draw. Both chains
/// install this exact value as their next event.
template <int N>
struct SharedTarget {
  EventTime time;
  BoundaryPoint<N> point;

  friend bool operator==(const SharedTarget&, const SharedTarget&) = default;
};

template <int N>
struct CouplingAttempt {
  bool success = false;
  double r = 0.0;
  AngleVector<N> theta{};
  double r_tilde = 0.0;
  AngleVector<N> theta_tilde{};
  /// Flight duration from x0 and arrival point, set on success.
  double flight = 0.0;
  BoundaryPoint<N> meeting;
  std::uint64_t residual_proposals = 0;
};

struct CouplingOptions {
  std::uint64_t residual_budget = 1'000'000;
};

/// One draw from the maximal coupling of the two hitting laws: the primary
/// side is emitted diffusely from x0 now, the tilde side from x_tilde after a
/// delay `lag`. Both (r, theta) marginals are Upsilon.
template <int N>
CouplingAttempt<N> maximal_coupling_draw(CounterRng& rng, const Domain<N>& domain, const VelocityLaw& wall,
                                         const BoundaryPoint<N>& x0, const BoundaryPoint<N>& x_tilde, double lag,
                                         const CouplingOptions& opt = {}) {
  if (lag > domain.diameter() + domain.tolerance())
    throw LagTooLarge("lag " + std::to_string(lag) + " exceeds the diameter");
  CouplingAttempt<N> out;
  {
    const auto [r, th] = sample_upsilon<N>(wall, rng);
    out.r = r;
    out.theta = th;
  }
  const Vec<N> v = out.r * vartheta(x0, out.theta);
  const double s = domain.exit_time(x0.x, v, true);
  const BoundaryPoint<N> y = domain.project(x0.x + s * v);
  const double l_here = log_mu_x(domain, wall, x0, s, y);
  const double l_there = log_mu_x(domain, wall, x_tilde, s - lag, y);
  const double accept = (l_here == -std::numeric_limits<double>::infinity()) ? 0.0
                        : (l_there >= l_here)                              ? 1.0
                                                                           : std::exp(l_there - l_here);
  if (rng.uniform() < accept) {
    const Vec<N> vt = (y.x - x_tilde.x) / (s - lag);
    out.success = true;
    out.r_tilde = norm(vt);
    out.theta_tilde = vartheta_inverse(x_tilde, vt / out.r_tilde);
    out.flight = s;
    out.meeting = y;
    return out;
  }
  // Residual of the tilde law: propose from it and keep with 1 - min/mu_tilde.
  for (;;) {
    if (++out.residual_proposals > opt.residual_budget)
      throw ResidualRejectionBudgetExceeded(std::to_string(opt.residual_budget) + " proposals rejected");
    const auto [rt, tht] = sample_upsilon<N>(wall, rng);
    const Vec<N> vt = rt * vartheta(x_tilde, tht);
    const double st = domain.exit_time(x_tilde.x, vt, true);
    const BoundaryPoint<N> yt = domain.project(x_tilde.x + st * vt);
    const double lt = log_mu_x(domain, wall, x_tilde, st, yt);
    const double l0 = log_mu_x(domain, wall, x0, st + lag, yt);
    const double keep = (l0 >= lt) ? 0.0 : -std::expm1(l0 - lt);
    if (rng.uniform() < keep) {
      out.r_tilde = rt;
      out.theta_tilde = tht;
      return out;
    }
  }
}

enum class CouplingMode { Convex, Patch };

/// Stored innovation of the memory variable Z, with the meeting point when it
/// came from a successful maximal-coupling draw.
template <int N>
struct StoredInnovation {
  Innovation<N> q;
  std::optional<SharedTarget<N>> target;

  friend bool operator==(const StoredInnovation&, const StoredInnovation&) = default;
};

enum class GammaBranch { Identical, Maximal, Independent };

template <int N>
struct GammaDraw {
  GammaBranch branch = GammaBranch::Independent;
  Innovation<N> q;
  Innovation<N> q_tilde;
  std::optional<SharedTarget<N>> target;  // set on a successful maximal draw
  bool attempt_success = false;
};

/// Where each chain is at a joint event time.
template <int N>
struct JointPosition {
  EventTime now;
  BoundaryPoint<N> x;  // normal meaningful only when x_on_boundary
  bool x_on_boundary;
  Vec<N> v_minus;
  Vec<N> x_tilde;
  bool x_tilde_on_boundary;
  Vec<N> v_tilde_minus;
  /// Next event of the tilde chain when it is interior: q(x_tilde, v_tilde).
  std::optional<ScheduledEvent<N>> tilde_next;
};

struct GammaOptions {
  CouplingMode mode = CouplingMode::Convex;
  double speed_threshold = 1.0;
  CouplingOptions lambda;
};

/// Draws (Q, Q_tilde) from the three-branch mixture Gamma.
template <int N>
GammaDraw<N> gamma_draw(CounterRng& rng, const Model<N>& model, const PatchPair<N>& patches,
                        const JointPosition<N>& at, const GammaOptions& opt) {
  GammaDraw<N> g;
  if (at.x_on_boundary && at.x_tilde_on_boundary && at.x.x == at.x_tilde) {
    g.branch = GammaBranch::Identical;
    g.q = sample_innovation<N>(model.wall, rng);
    g.q_tilde = g.q;
    return g;
  }
  bool lambda_ok = at.x_on_boundary && !at.x_tilde_on_boundary && at.tilde_next &&
                   norm(at.v_minus) >= opt.speed_threshold && norm(at.v_tilde_minus) >= opt.speed_threshold;
  if (lambda_ok && opt.mode == CouplingMode::Patch)
    lambda_ok = patches.in_emitting(model.domain, at.x.x) && patches.in_emitting(model.domain, at.tilde_next->point.x);
  if (!lambda_ok) {
    g.branch = GammaBranch::Independent;
    g.q = sample_innovation<N>(model.wall, rng);
    g.q_tilde = sample_innovation<N>(model.wall, rng);
    return g;
  }
  g.branch = GammaBranch::Maximal;
  const double u = rng.uniform();
  const double lag = at.tilde_next->time - at.now;
  const CouplingAttempt<N> a =
      maximal_coupling_draw(rng, model.domain, model.wall, at.x, at.tilde_next->point, lag, opt.lambda);
  g.q = Innovation<N>{u, a.r, a.theta};
  g.q_tilde = Innovation<N>{u, a.r_tilde, a.theta_tilde};
  g.attempt_success = a.success;
  if (a.success) g.target = SharedTarget<N>{at.now + a.flight, a.meeting};
  return g;
}

/// Counters of Table 1 rows (index = row - 1) and maximal-coupling attempts.
struct CouplingAudit {
  std::array<std::uint64_t, 10> rows{};
  std::uint64_t lambda_attempts = 0;
  std::uint64_t lambda_successes = 0;
  std::uint64_t shared_installs = 0;

  CouplingAudit& operator+=(const CouplingAudit& o) {
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] += o.rows[i];
    lambda_attempts += o.lambda_attempts;
    lambda_successes += o.lambda_successes;
    shared_installs += o.shared_installs;
    return *this;
  }
};

/// Coupled pair (primary, stationary, Z).
template <int N>
struct CoupledState {
  ParticleState<N> primary;
  ParticleState<N> stationary;
  std::optional<StoredInnovation<N>> z;
  bool merged = false;
  EventTime merge_time;
  std::uint64_t steps = 0;
  /// Row of Table 1 applied by the last step (1..10), 0 before any step.
  int last_row = 0;
  CouplingAudit audit;

  bool identical() const { return primary.same_phase(stationary); }
};

template <int N>
CoupledState<N> make_coupled(const ParticleState<N>& primary, const ParticleState<N>& stationary) {
  CoupledState<N> c;
  c.primary = primary;
  c.stationary = stationary;
  if (c.identical()) {
    c.merged = true;
    c.merge_time = primary.t;
  }
  return c;
}

namespace detail {

template <int N>
bool diffuse_at(const Model<N>& m, const Vec<N>& x, const Innovation<N>& q) {
  return q.u <= m.alpha_at(x);
}

template <int N>
void install(ParticleState<N>& p, const SharedTarget<N>& t) {
  p.next = ScheduledEvent<N>{t.time, t.point};
}

}  // namespace detail

/// Advances both chains to the next joint event time and applies one row of
/// Table 1. Tangential departures fall back to the inward normal so that the
/// two chains never consume different guard draws.
template <int N>
void coupled_step(const Model<N>& model, const PatchPair<N>& patches, CoupledState<N>& c, CounterRng& rng,
                  const GammaOptions& opt = {}) {
  auto& P = c.primary;
  auto& S = c.stationary;
  const ScheduledEvent<N> eP = schedule_next(model, P);
  const ScheduledEvent<N> eS = schedule_next(model, S);
  const EventTime now = (eS.time < eP.time) ? eS.time : eP.time;
  const bool hitP = eP.time == now;
  const bool hitS = eS.time == now;
  if (!hitP) drift_to(P, now);
  if (!hitS) drift_to(S, now);

  JointPosition<N> at;
  at.now = now;
  at.x = hitP ? eP.point : BoundaryPoint<N>{P.x, Vec<N>{}};
  at.x_on_boundary = hitP;
  at.v_minus = P.v;
  at.x_tilde = hitS ? eS.point.x : S.x;
  at.x_tilde_on_boundary = hitS;
  at.v_tilde_minus = S.v;
  if (!hitS) at.tilde_next = eS;

  const GammaDraw<N> g = gamma_draw(rng, model, patches, at, opt);
  if (g.branch == GammaBranch::Maximal) {
    ++c.audit.lambda_attempts;
    if (g.attempt_success) ++c.audit.lambda_successes;
  }
  const bool z_empty = !c.z.has_value();
  int row = 0;

  if (hitP) {
    fire_event(model, P, g.q);
    // Row 1 with a successful draw: the primary follows the stored meeting.
    if (!hitS && z_empty && g.target && detail::diffuse_at(model, eP.point.x, g.q)) {
      detail::install(P, *g.target);
      ++c.audit.shared_installs;
    }
  }
  if (hitS) {
    const StoredInnovation<N> used = z_empty ? StoredInnovation<N>{g.q_tilde, std::nullopt} : *c.z;
    fire_event(model, S, used.q);
    if (used.target && detail::diffuse_at(model, eS.point.x, used.q)) {
      detail::install(S, *used.target);
      ++c.audit.shared_installs;
    }
    c.z.reset();
  } else if (z_empty) {
    c.z = StoredInnovation<N>{g.q_tilde, g.target};
  }

  if (hitP && !hitS) {
    if (g.branch == GammaBranch::Maximal)
      row = z_empty ? 1 : 5;
    else
      row = z_empty ? 2 : 6;
  } else if (hitP && hitS) {
    const bool same = eP.point.x == eS.point.x;
    row = same ? (z_empty ? 3 : 7) : (z_empty ? 4 : 8);
  } else {
    row = z_empty ? 9 : 10;
  }
  ++c.audit.rows[row - 1];
  c.last_row = row;
  ++c.steps;

  if (!c.merged && !c.z && c.identical()) {
    c.merged = true;
    c.merge_time = now;
  }
}

struct CouplingOutcome {
  bool censored = false;
  double time = 0.0;  // merge time, or t_max when censored
  std::uint64_t steps = 0;
};

/// Runs coupled_step until the chains merge or the next joint event lies
/// beyond t_max.
template <int N>
CouplingOutcome run_until_coupled(const Model<N>& model, const PatchPair<N>& patches, CoupledState<N>& c,
                                  double t_max, CounterRng& rng, const GammaOptions& opt = {}) {
  const EventTime limit{t_max, 0.0};
  while (!c.merged) {
    const EventTime next_p = schedule_next(model, c.primary).time;
    const EventTime next_s = schedule_next(model, c.stationary).time;
    const EventTime next = (next_s < next_p) ? next_s : next_p;
    if (limit < next) return CouplingOutcome{true, t_max, c.steps};
    coupled_step(model, patches, c, rng, opt);
  }
  return CouplingOutcome{false, c.merge_time.value(), c.steps};
}

/// Steps the pair (merged or not) until its next joint event lies after t,
/// then returns both free-flight phases at t.
template <int N>
std::pair<PhasePoint<N>, PhasePoint<N>> advance_coupled_to(const Model<N>& model, const PatchPair<N>& patches,
                                                     CoupledState<N>& c, double t, CounterRng& rng,
                                                     const GammaOptions& opt = {}) {
  const EventTime limit{t, 0.0};
  for (;;) {
    const EventTime next_p = schedule_next(model, c.primary).time;
    const EventTime next_s = schedule_next(model, c.stationary).time;
    const EventTime next = (next_s < next_p) ? next_s : next_p;
    if (limit < next) break;
    coupled_step(model, patches, c, rng, opt);
  }
  auto phase = [&](const ParticleState<N>& p) { return PhasePoint<N>{p.x + (limit - p.t) * p.v, p.v}; };
  return {phase(c.primary), phase(c.stationary)};
}

}  // namespace knudsen
