#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "knudsen/errors.hpp"
#include "knudsen/geometry.hpp"
#include "knudsen/random.hpp"
#include "knudsen/velocity_law.hpp"

namespace knudsen {

/// Event time kept as an unevaluated sum hi + lo so that sums over millions of
/// flights do not drift.
struct EventTime {
  double hi = 0.0;
  double lo = 0.0;

  double value() const { return hi + lo; }

  friend EventTime operator+(EventTime a, double b) {
    const double s = a.hi + b;
    const double bb = s - a.hi;
    const double err = (a.hi - (s - bb)) + (b - bb);
    const double lo = a.lo + err;
    const double hi = s + lo;
    return {hi, lo - (hi - s)};
  }
  /// a - b rounded to double.
  friend double operator-(const EventTime& a, const EventTime& b) { return (a.hi - b.hi) + (a.lo - b.lo); }
  friend bool operator==(const EventTime&, const EventTime&) = default;
  friend bool operator<(const EventTime& a, const EventTime& b) {
    return a.hi < b.hi || (a.hi == b.hi && a.lo < b.lo);
  }
  friend bool operator<=(const EventTime& a, const EventTime& b) { return !(b < a); }
};

/// Accommodation coefficient alpha(x): probability of diffuse reflection.
/// Either constant or base + amplitude cos(k phi(x)), phi being the polar angle
/// of x - center in the first two coordinates.
struct AlphaField {
  double base = 1.0;
  double amplitude = 0.0;
  double frequency = 1.0;
  double center_x = 0.0;
  double center_y = 0.0;

  static AlphaField constant(double a) { return AlphaField{a, 0.0, 1.0, 0.0, 0.0}; }

  template <int N>
  double operator()(const Vec<N>& x) const {
    if (amplitude == 0.0) return base;
    return base + amplitude * std::cos(frequency * std::atan2(x[1] - center_y, x[0] - center_x));
  }
  double lower_bound() const { return base - std::abs(amplitude); }
  double upper_bound() const { return base + std::abs(amplitude); }
};

/// Everything the dynamics depends on: domain, wall law, accommodation, and
/// the explosion guard.
template <int N>
struct Model {
  Domain<N> domain;
  VelocityLaw wall;
  AlphaField alpha;
  double alpha0 = 1.0;
  std::uint64_t max_collisions = 10'000'000;

  Model(Domain<N> d, VelocityLaw w, AlphaField a, double a0)
      : domain(std::move(d)), wall(std::move(w)), alpha(a), alpha0(a0) {
    if (wall.dimension() != N) throw ConfigError("wall law dimension does not match the domain");
    if (!(alpha0 > 0.0 && alpha0 <= 1.0)) throw ConfigError("alpha0 must lie in (0, 1]");
    if (alpha.lower_bound() < alpha0 - 1e-15 || alpha.upper_bound() > 1.0 + 1e-15)
      throw ConfigError("alpha(x) must stay within [alpha0, 1]");
  }

  double alpha_at(const Vec<N>& x) const { return alpha(x); }
};

/// Position and velocity at one instant.
template <int N>
struct PhasePoint {
  Vec<N> x;
  Vec<N> v;
};

template <int N>
struct ScheduledEvent {
  EventTime time;
  BoundaryPoint<N> point;

  friend bool operator==(const ScheduledEvent&, const ScheduledEvent&) = default;
};

/// One free-transport particle: position and velocity at time t plus the
/// cached next boundary event.
template <int N>
struct ParticleState {
  EventTime t;
  Vec<N> x;
  Vec<N> v;
  bool on_boundary = false;
  Vec<N> normal;  // valid when on_boundary
  std::optional<ScheduledEvent<N>> next;
  std::uint64_t collisions = 0;

  /// Equality of the dynamical state (collision counters excluded).
  bool same_phase(const ParticleState& o) const {
    return t == o.t && x == o.x && v == o.v && on_boundary == o.on_boundary && next == o.next;
  }
};

namespace detail {

// Departure velocities within 1e-12 of the tangent plane are redrawn from the
// diffuse law; this is a probability-zero event for the exact dynamics.
template <int N>
Vec<N> guard_tangential(const Model<N>& m, const BoundaryPoint<N>& at, Vec<N> v, CounterRng* rng) {
  while (dot(v, at.normal) <= 1e-12 * norm(v)) {
    if (rng == nullptr) return at.normal * norm(v);
    const auto [r, th] = sample_upsilon<N>(m.wall, *rng);
    v = r * vartheta(at, th);
  }
  return v;
}

}  // namespace detail

/// Particle at an interior point (or on the boundary with an outgoing velocity).
template <int N>
ParticleState<N> make_particle(const Model<N>& m, const Vec<N>& x, const Vec<N>& v, double t0 = 0.0) {
  if (!(norm2(v) > 0.0)) throw NonPositiveSpeed("initial velocity has zero norm");
  ParticleState<N> p;
  p.t = EventTime{t0, 0.0};
  p.x = x;
  p.v = v;
  if (m.domain.on_boundary(x)) {
    p.on_boundary = true;
    p.normal = m.domain.inward_normal(x);
  }
  return p;
}

/// Particle started on the boundary with an incoming velocity: an extra
/// innovation is drawn and applied before the first flight.
template <int N>
ParticleState<N> make_boundary_particle(const Model<N>& m, const Vec<N>& x, const Vec<N>& v_in,
                                        CounterRng& rng, double t0 = 0.0) {
  const BoundaryPoint<N> at = m.domain.boundary_point(x);
  ParticleState<N> p;
  p.t = EventTime{t0, 0.0};
  p.x = x;
  p.on_boundary = true;
  p.normal = at.normal;
  if (dot(v_in, at.normal) > 0.0) {
    p.v = v_in;
    return p;
  }
  const Innovation<N> q = sample_innovation<N>(m.wall, rng);
  p.v = detail::guard_tangential(m, at, post_collision_w(at, v_in, q, m.alpha_at(x)), &rng);
  return p;
}

/// Fills (and returns) the cached next boundary event.
template <int N>
const ScheduledEvent<N>& schedule_next(const Model<N>& m, ParticleState<N>& p) {
  if (p.next) return *p.next;
  if (p.on_boundary && dot(p.v, p.normal) <= 0.0) {
    // Incoming at the boundary: zero flight.
    p.next = ScheduledEvent<N>{p.t, BoundaryPoint<N>{p.x, p.normal}};
    return *p.next;
  }
  const double s = m.domain.exit_time(p.x, p.v, p.on_boundary);
  p.next = ScheduledEvent<N>{p.t + s, m.domain.project(p.x + s * p.v)};
  return *p.next;
}

/// Moves the particle to its scheduled boundary event and applies the
/// reflection map with the given innovation.
template <int N>
void fire_event(const Model<N>& m, ParticleState<N>& p, const Innovation<N>& q, CounterRng* guard_rng = nullptr) {
  const ScheduledEvent<N> ev = schedule_next(m, p);
  if (++p.collisions > m.max_collisions)
    throw ExplosionGuardTripped("more than " + std::to_string(m.max_collisions) + " collisions");
  p.t = ev.time;
  p.x = ev.point.x;
  p.on_boundary = true;
  p.normal = ev.point.normal;
  p.v = detail::guard_tangential(m, ev.point, post_collision_w(ev.point, p.v, q, m.alpha_at(ev.point.x)),
                                 guard_rng);
  p.next.reset();
}

/// Moves an unscheduled-event particle forward by free flight to time `t`,
/// which must not exceed its next event time. The cached event is kept.
template <int N>
void drift_to(ParticleState<N>& p, const EventTime& t) {
  const double dt = t - p.t;
  if (dt == 0.0) return;
  p.x += dt * p.v;
  p.t = t;
  p.on_boundary = false;
}

/// Fires events until the next one lies strictly after `t_query`, then
/// returns the free-flight position and velocity at t_query. An event exactly
/// at t_query is fired first (right-continuous velocity).
template <int N>
std::pair<Vec<N>, Vec<N>> state_at(const Model<N>& m, ParticleState<N>& p, double t_query, CounterRng& rng) {
  const EventTime tq{t_query, 0.0};
  while (schedule_next(m, p).time <= tq) fire_event(m, p, sample_innovation<N>(m.wall, rng), &rng);
  return {p.x + (tq - p.t) * p.v, p.v};
}

/// Number of boundary events in [t, t + horizon].
template <int N>
std::uint64_t collisions_in(const Model<N>& m, ParticleState<N>& p, double horizon, CounterRng& rng) {
  const std::uint64_t before = p.collisions;
  state_at(m, p, p.t.value() + horizon, rng);
  return p.collisions - before;
}

/// Initial distribution f0 = (spatial part) x (velocity part).
template <int N>
struct InitialLaw {
  enum class Where { Uniform, Point, Ball } where = Where::Uniform;
  enum class Velocity { Law, Point, Equilibrium } velocity = Velocity::Equilibrium;
  Vec<N> point;          // Point: the position; Ball: the centre
  double ball_radius = 0.0;
  std::optional<VelocityLaw> law;  // Velocity::Law
  Vec<N> v0;                       // Velocity::Point

  static InitialLaw equilibrium() { return InitialLaw{}; }

  Vec<N> sample_position(const Model<N>& m, CounterRng& rng) const {
    switch (where) {
      case Where::Uniform: return m.domain.sample_uniform(rng);
      case Where::Point: return point;
      case Where::Ball:
        for (;;) {
          Vec<N> y;
          for (int i = 0; i < N; ++i) y[i] = 2.0 * rng.uniform() - 1.0;
          if (norm2(y) >= 1.0) continue;
          const Vec<N> x = point + ball_radius * y;
          if (m.domain.contains(x)) return x;
        }
    }
    return point;
  }

  Vec<N> sample_velocity(const Model<N>& m, CounterRng& rng) const {
    switch (velocity) {
      case Velocity::Law: return law->template sample_velocity<N>(rng);
      case Velocity::Point: return v0;
      case Velocity::Equilibrium: return m.wall.template sample_velocity<N>(rng);
    }
    return v0;
  }

  /// Draws (X0, V0) and builds the particle; boundary starts with an
  /// incoming velocity consume one extra innovation.
  ParticleState<N> sample(const Model<N>& m, CounterRng& rng) const {
    const Vec<N> x = sample_position(m, rng);
    Vec<N> v;
    do {
      v = sample_velocity(m, rng);
    } while (!(norm2(v) > 0.0) && velocity != Velocity::Point);
    if (m.domain.on_boundary(x)) return make_boundary_particle(m, x, v, rng);
    return make_particle(m, x, v);
  }
};

}  // namespace knudsen
