#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "knudsen/errors.hpp"
#include "knudsen/random.hpp"
#include "knudsen/vec.hpp"

namespace knudsen {

/// A point of the boundary together with its unit inward normal.
template <int N>
struct BoundaryPoint {
  Vec<N> x;
  Vec<N> normal;

  friend bool operator==(const BoundaryPoint&, const BoundaryPoint&) = default;
};

template <int N>
struct Ball {
  Vec<N> center;
  double radius = 1.0;
};

template <int N>
struct Ellipsoid {
  Vec<N> center;
  Vec<N> semi_axes;
};

/// Spherical shell r_inner < |x - center| < r_outer.
template <int N>
struct Annulus {
  Vec<N> center;
  double r_inner = 1.0;
  double r_outer = 2.0;
};

/// User level set: phi < 0 inside, phi > 0 outside, grad phi != 0 near phi = 0.
/// The box must enclose the closure of the domain.
template <int N>
struct ImplicitSurface {
  std::function<double(const Vec<N>&)> phi;
  std::function<Vec<N>(const Vec<N>&)> grad;
  Vec<N> box_lo;
  Vec<N> box_hi;
  bool convex = false;
};

/// v - 2 (v.n) n.
template <int N>
inline Vec<N> specular_reflect(const BoundaryPoint<N>& at, const Vec<N>& v) {
  return v - (2.0 * dot(v, at.normal)) * at.normal;
}

/// Bounded C^2 domain D described by a level set, with analytic fast paths for
/// balls, ellipsoids and shells. Immutable after construction.
template <int N>
class Domain {
 public:
  using Shape = std::variant<Ball<N>, Ellipsoid<N>, Annulus<N>, ImplicitSurface<N>>;

  explicit Domain(Shape shape) : shape_(std::move(shape)) {
    std::visit([this](const auto& s) { init(s); }, shape_);
    tolerance_ = 1e-9 * diameter_;
  }

  static Domain ball(Vec<N> center, double radius) { return Domain(Ball<N>{center, radius}); }
  static Domain ellipsoid(Vec<N> center, Vec<N> semi_axes) {
    return Domain(Ellipsoid<N>{center, semi_axes});
  }
  static Domain annulus(Vec<N> center, double r_inner, double r_outer) {
    return Domain(Annulus<N>{center, r_inner, r_outer});
  }

  const Shape& shape() const { return shape_; }
  double diameter() const { return diameter_; }
  double tolerance() const { return tolerance_; }
  bool is_convex() const { return convex_; }
  const Vec<N>& box_lo() const { return box_lo_; }
  const Vec<N>& box_hi() const { return box_hi_; }

  double phi(const Vec<N>& x) const {
    return std::visit([&](const auto& s) { return phi_of(s, x); }, shape_);
  }

  Vec<N> gradient(const Vec<N>& x) const {
    return std::visit([&](const auto& s) { return grad_of(s, x); }, shape_);
  }

  Vec<N> inward_normal(const Vec<N>& x) const {
    return std::visit([&](const auto& s) { return normal_of(s, x); }, shape_);
  }

  bool on_boundary(const Vec<N>& x) const { return std::abs(phi(x)) <= tolerance_; }
  bool contains(const Vec<N>& x) const { return phi(x) < 0.0; }

  BoundaryPoint<N> boundary_point(const Vec<N>& x) const { return {x, inward_normal(x)}; }

  /// First positive time at which x + s v meets the boundary. Points on the
  /// boundary with v.n <= 0 give 0.
  double hitting_time(const Vec<N>& x, const Vec<N>& v) const {
    check_speed(v);
    if (on_boundary(x)) {
      if (dot(v, inward_normal(x)) <= 0.0) return 0.0;
      return exit_time(x, v, true);
    }
    return exit_time(x, v, false);
  }

  BoundaryPoint<N> hitting_point(const Vec<N>& x, const Vec<N>& v) const {
    const double s = hitting_time(x, v);
    if (s == 0.0) return boundary_point(x);
    return project(x + s * v);
  }

  /// Exit time for a ray whose boundary status is already known; this is the
  /// path used by the simulators.
  double exit_time(const Vec<N>& x, const Vec<N>& v, bool from_boundary) const {
    return std::visit([&](const auto& s) { return exit_of(s, x, v, from_boundary); }, shape_);
  }

  /// Newton projection onto {phi = 0}; exact shapes are returned unchanged when
  /// already within tolerance.
  BoundaryPoint<N> project(Vec<N> q) const {
    for (int it = 0; it < 8 && std::abs(phi(q)) > tolerance_; ++it) {
      const Vec<N> g = gradient(q);
      q -= (phi(q) / norm2(g)) * g;
    }
    return boundary_point(q);
  }

  /// Distance along the boundary between two boundary points; infinity when
  /// they lie on different components. Exact on spheres and shells; other
  /// shapes use the length of the chord projected onto the boundary.
  double geodesic_distance(const Vec<N>& a, const Vec<N>& b) const {
    return std::visit([&](const auto& s) { return geodesic_of(s, a, b); }, shape_);
  }

  /// True when the open segment (a, b) lies in D.
  bool segment_inside(const Vec<N>& a, const Vec<N>& b) const {
    return std::visit([&](const auto& s) { return segment_of(s, a, b); }, shape_);
  }

  /// Mutual visibility of two boundary points: open chord inside D and strictly
  /// inward at both ends.
  bool communicates(const BoundaryPoint<N>& a, const BoundaryPoint<N>& b) const {
    const Vec<N> d = b.x - a.x;
    const double len = norm(d);
    if (len <= tolerance_) return false;
    constexpr double kGrazing = 1e-9;
    if (dot(a.normal, d) <= kGrazing * len) return false;
    if (-dot(b.normal, d) <= kGrazing * len) return false;
    return segment_inside(a.x, b.x);
  }

  /// Uniform point in D by rejection from the bounding box.
  Vec<N> sample_uniform(CounterRng& rng) const {
    for (;;) {
      Vec<N> x;
      for (int i = 0; i < N; ++i) x[i] = box_lo_[i] + (box_hi_[i] - box_lo_[i]) * rng.uniform();
      if (contains(x)) return x;
    }
  }

  /// Deterministic low-discrepancy cloud of boundary points, obtained by
  /// casting rays from quasi-uniform interior points in quasi-uniform
  /// directions.
  std::vector<BoundaryPoint<N>> boundary_samples(std::size_t count) const {
    std::vector<BoundaryPoint<N>> out;
    out.reserve(count);
    std::uint64_t idx = 1;
    while (out.size() < count) {
      Vec<N> x;
      for (int i = 0; i < N; ++i)
        x[i] = box_lo_[i] + (box_hi_[i] - box_lo_[i]) * halton(idx, kHaltonPrimes[i]);
      Vec<N> dir;
      // Halton points mapped through the inverse normal CDF give an isotropic
      // direction; the Box-Muller style map below avoids special functions.
      for (int i = 0; i < N; i += 2) {
        const double u1 = std::max(halton(idx, kHaltonPrimes[N + i]), 1e-12);
        const double u2 = halton(idx, kHaltonPrimes[N + i + 1]);
        const double rad = std::sqrt(-2.0 * std::log(u1));
        dir[i] = rad * std::cos(2.0 * M_PI * u2);
        if (i + 1 < N) dir[i + 1] = rad * std::sin(2.0 * M_PI * u2);
      }
      ++idx;
      if (!contains(x) || norm2(dir) == 0.0) continue;
      out.push_back(project(x + exit_time(x, dir, false) * dir));
    }
    return out;
  }

 private:
  static void check_speed(const Vec<N>& v) {
    if (!(norm2(v) > 0.0)) throw NonPositiveSpeed("velocity has zero norm");
  }

  // Larger root of |y + s w|^2 = 1 for |y| <= 1 (numerically stable form).
  static double unit_sphere_exit(const Vec<N>& y, const Vec<N>& w) {
    const double a = norm2(w);
    const double b = dot(y, w);
    const double c = norm2(y) - 1.0;
    const double disc = std::max(b * b - a * c, 0.0);
    const double sq = std::sqrt(disc);
    if (b <= 0.0) return (-b + sq) / a;
    const double denom = b + sq;
    return denom > 0.0 ? std::max(-c / denom, 0.0) : 0.0;
  }

  void init(const Ball<N>& s) {
    diameter_ = 2.0 * s.radius;
    convex_ = true;
    for (int i = 0; i < N; ++i) {
      box_lo_[i] = s.center[i] - s.radius;
      box_hi_[i] = s.center[i] + s.radius;
    }
  }
  void init(const Ellipsoid<N>& s) {
    diameter_ = 2.0 * *std::max_element(s.semi_axes.c.begin(), s.semi_axes.c.end());
    convex_ = true;
    for (int i = 0; i < N; ++i) {
      box_lo_[i] = s.center[i] - s.semi_axes[i];
      box_hi_[i] = s.center[i] + s.semi_axes[i];
    }
  }
  void init(const Annulus<N>& s) {
    if (!(s.r_inner > 0.0 && s.r_outer > s.r_inner))
      throw ConfigError("annulus radii must satisfy 0 < r_inner < r_outer");
    diameter_ = 2.0 * s.r_outer;
    convex_ = false;
    for (int i = 0; i < N; ++i) {
      box_lo_[i] = s.center[i] - s.r_outer;
      box_hi_[i] = s.center[i] + s.r_outer;
    }
  }
  void init(const ImplicitSurface<N>& s) {
    if (!s.phi || !s.grad) throw ConfigError("implicit surface needs phi and its gradient");
    // The box diagonal bounds the diameter from above.
    diameter_ = norm(s.box_hi - s.box_lo);
    convex_ = s.convex;
    box_lo_ = s.box_lo;
    box_hi_ = s.box_hi;
  }

  // Level sets, scaled so that |grad phi| = 1 on the boundary of analytic shapes.
  static double phi_of(const Ball<N>& s, const Vec<N>& x) {
    return (norm2(x - s.center) - s.radius * s.radius) / (2.0 * s.radius);
  }
  static double phi_of(const Ellipsoid<N>& s, const Vec<N>& x) {
    return 0.5 * (norm2(hadamard_div(x - s.center, s.semi_axes)) - 1.0);
  }
  static double phi_of(const Annulus<N>& s, const Vec<N>& x) {
    const double r = norm(x - s.center);
    return (r - s.r_inner) * (r - s.r_outer) / (s.r_outer - s.r_inner);
  }
  static double phi_of(const ImplicitSurface<N>& s, const Vec<N>& x) { return s.phi(x); }

  static Vec<N> grad_of(const Ball<N>& s, const Vec<N>& x) { return (x - s.center) / s.radius; }
  static Vec<N> grad_of(const Ellipsoid<N>& s, const Vec<N>& x) {
    return hadamard_div(hadamard_div(x - s.center, s.semi_axes), s.semi_axes);
  }
  static Vec<N> grad_of(const Annulus<N>& s, const Vec<N>& x) {
    const Vec<N> d = x - s.center;
    const double r = norm(d);
    return ((2.0 * r - s.r_inner - s.r_outer) / ((s.r_outer - s.r_inner) * r)) * d;
  }
  static Vec<N> grad_of(const ImplicitSurface<N>& s, const Vec<N>& x) { return s.grad(x); }

  static Vec<N> normal_of(const Ball<N>& s, const Vec<N>& x) { return normalized(s.center - x); }
  static Vec<N> normal_of(const Ellipsoid<N>& s, const Vec<N>& x) {
    return -normalized(grad_of(s, x));
  }
  static Vec<N> normal_of(const Annulus<N>& s, const Vec<N>& x) {
    const Vec<N> d = x - s.center;
    const double r = norm(d);
    // Outer sphere: towards the centre; inner sphere: away from it.
    return (r > 0.5 * (s.r_inner + s.r_outer)) ? (-1.0 / r) * d : (1.0 / r) * d;
  }
  static Vec<N> normal_of(const ImplicitSurface<N>& s, const Vec<N>& x) {
    return -normalized(s.grad(x));
  }

  double exit_of(const Ball<N>& s, const Vec<N>& x, const Vec<N>& v, bool) const {
    return unit_sphere_exit((x - s.center) / s.radius, v / s.radius);
  }
  double exit_of(const Ellipsoid<N>& s, const Vec<N>& x, const Vec<N>& v, bool) const {
    return unit_sphere_exit(hadamard_div(x - s.center, s.semi_axes), hadamard_div(v, s.semi_axes));
  }
  double exit_of(const Annulus<N>& s, const Vec<N>& x, const Vec<N>& v, bool from_boundary) const {
    const Vec<N> y = x - s.center;
    double t = unit_sphere_exit(y / s.r_outer, v / s.r_outer);
    // Entry into the inner ball: smaller root of |y + s v|^2 = r_in^2.
    const double a = norm2(v);
    const double b = dot(y, v);
    if (b < 0.0) {
      const double c = norm2(y) - s.r_inner * s.r_inner;
      const double disc = b * b - a * c;
      if (disc > 0.0) {
        const double t_in = c / (-b + std::sqrt(disc));
        const double skip = from_boundary ? 1e-7 * diameter_ / std::sqrt(a) : 0.0;
        if (t_in > skip && t_in < t) t = t_in;
      }
    }
    return t;
  }
  double exit_of(const ImplicitSurface<N>& s, const Vec<N>& x, const Vec<N>& v,
                 bool from_boundary) const {
    const double speed = norm(v);
    const double ds = diameter_ / (1024.0 * speed);
    const double s_max = diameter_ / speed * (1.0 + 1e-6) + ds;
    double lo = from_boundary ? 1e-7 * diameter_ / speed : 0.0;
    double f_lo = s.phi(x + lo * v);
    if (f_lo > 0.0) throw RootNotBracketed("ray starts outside the domain");
    double hi = lo;
    double f_hi = f_lo;
    while (f_hi <= 0.0) {
      lo = hi;
      f_lo = f_hi;
      hi = lo + ds;
      if (hi > s_max) throw RootNotBracketed("no sign change of phi within the diameter");
      f_hi = s.phi(x + hi * v);
    }
    // Safeguarded Newton: fall back to bisection whenever the step leaves [lo, hi].
    double t = 0.5 * (lo + hi);
    const double tol = 1e-12 * (diameter_ / speed);
    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
      const Vec<N> p = x + t * v;
      const double f = s.phi(p);
      if (f > 0.0) hi = t; else lo = t;
      if (f == 0.0) return t;
      const double df = dot(s.grad(p), v);
      double next = (df != 0.0) ? t - f / df : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      t = next;
    }
    return hi;
  }

  static double arc(const Vec<N>& a, const Vec<N>& b, const Vec<N>& c, double r) {
    const double cosang = std::clamp(dot(a - c, b - c) / (norm(a - c) * norm(b - c)), -1.0, 1.0);
    return r * std::acos(cosang);
  }
  double geodesic_of(const Ball<N>& s, const Vec<N>& a, const Vec<N>& b) const {
    return arc(a, b, s.center, s.radius);
  }
  double geodesic_of(const Annulus<N>& s, const Vec<N>& a, const Vec<N>& b) const {
    const double ra = norm(a - s.center), rb = norm(b - s.center);
    const double mid = 0.5 * (s.r_inner + s.r_outer);
    if ((ra > mid) != (rb > mid)) return std::numeric_limits<double>::infinity();
    return arc(a, b, s.center, ra > mid ? s.r_outer : s.r_inner);
  }
  template <class S>
  double geodesic_of(const S&, const Vec<N>& a, const Vec<N>& b) const {
    constexpr int kPieces = 32;
    const double chord = norm(b - a);
    if (chord <= tolerance_) return chord;
    const double jump = std::max(4.0 * chord / kPieces, 1e-3 * diameter_);
    double len = 0.0;
    Vec<N> prev = a;
    for (int k = 1; k <= kPieces; ++k) {
      const Vec<N> q = (k == kPieces) ? b : project(a + (static_cast<double>(k) / kPieces) * (b - a)).x;
      if (std::abs(phi(q)) > 1e3 * tolerance_) return std::numeric_limits<double>::infinity();
      const double step = norm(q - prev);
      if (step > jump) return std::numeric_limits<double>::infinity();
      len += step;
      prev = q;
    }
    return len;
  }

  bool segment_of(const Ball<N>&, const Vec<N>&, const Vec<N>&) const { return true; }
  bool segment_of(const Ellipsoid<N>&, const Vec<N>&, const Vec<N>&) const { return true; }
  bool segment_of(const Annulus<N>& s, const Vec<N>& a, const Vec<N>& b) const {
    // Outer ball is convex; only the hole can block the chord.
    // Endpoints may sit on the inner sphere; only an interior closest point
    // can dip into the hole.
    const Vec<N> d = b - a;
    const double t = -dot(a - s.center, d) / norm2(d);
    if (t <= 0.0 || t >= 1.0) return true;
    return norm(a + t * d - s.center) > s.r_inner + tolerance_;
  }
  bool segment_of(const ImplicitSurface<N>& s, const Vec<N>& a, const Vec<N>& b) const {
    if (s.convex) return true;
    constexpr int kGrid = 64;
    // Grid nodes t = k / (kGrid + 1) plus the midpoints between consecutive nodes.
    for (int k = 1; k <= 2 * kGrid + 1; ++k) {
      const double t = static_cast<double>(k) / (2.0 * (kGrid + 1));
      if (s.phi(a + t * (b - a)) >= 0.0) return false;
    }
    return true;
  }

  Shape shape_;
  double diameter_ = 0.0;
  double tolerance_ = 0.0;
  bool convex_ = false;
  Vec<N> box_lo_;
  Vec<N> box_hi_;
};

/// Geodesic ball of the boundary around `center`.
template <int N>
struct BoundaryPatch {
  Vec<N> center;
  double radius = 0.0;

  bool contains(const Domain<N>& domain, const Vec<N>& x) const {
    return norm(x - center) < radius && domain.geodesic_distance(center, x) < radius;
  }
};

/// Result of the patch search. For convex domains `whole_boundary` is set and
/// the patches are unused.
template <int N>
struct PatchPair {
  bool whole_boundary = false;
  BoundaryPatch<N> emitting;   // F
  BoundaryPatch<N> receiving;  // R
  double d0 = 0.0;
  std::size_t verified_pairs = 0;
  std::size_t emitting_samples = 0;
  std::size_t receiving_samples = 0;

  bool in_emitting(const Domain<N>& domain, const Vec<N>& x) const {
    return whole_boundary || emitting.contains(domain, x);
  }
};

struct PatchSearchOptions {
  std::size_t boundary_samples = 2048;
  std::size_t candidate_centers = 64;
  std::size_t verify_pairs = 4096;
};

namespace detail {

// Evenly strided subsample of at most `k` indices.
inline std::vector<std::size_t> stride(const std::vector<std::size_t>& idx, std::size_t k) {
  if (idx.size() <= k) return idx;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = 0; j < k; ++j) out.push_back(idx[j * idx.size() / k]);
  return out;
}

// At most `k` indices: the half farthest from the patch centre (its rim,
// where communication fails first) followed by a stride of the rest.
inline std::vector<std::size_t> rim_first(std::vector<std::size_t> idx, const std::vector<double>& dist,
                                          std::size_t k) {
  if (idx.size() <= k) return idx;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  std::vector<std::size_t> out(idx.begin(), idx.begin() + k / 2);
  const std::vector<std::size_t> inner(idx.begin() + k / 2, idx.end());
  for (std::size_t j : stride(inner, k - k / 2)) out.push_back(j);
  return out;
}

}  // namespace detail

/// Finds two geodesic boundary patches F and R with F <-> R (every sampled
/// cross pair communicates) and positive separation d0. Convex domains return
/// the whole-boundary marker. Only F gates coupling attempts, so candidates
/// are ranked by the sample mass of F, ties by the mass of R.
template <int N>
PatchPair<N> find_patches(const Domain<N>& domain, const PatchSearchOptions& opt = {}) {
  PatchPair<N> out;
  if (domain.is_convex()) {
    out.whole_boundary = true;
    return out;
  }
  const auto pts = domain.boundary_samples(opt.boundary_samples);
  const double d = domain.diameter();
  // Patch radii as fractions of the diameter, largest first.
  std::vector<double> radii;
  for (int k = 20; k >= 1; --k) radii.push_back(0.025 * k);
  radii.push_back(0.0125);
  constexpr std::size_t kMinSamples = 4;
  // Verification runs on caps two sample spacings wider than the ones
  // returned, so that points between samples near a cap edge are covered.
  std::vector<double> nearest(pts.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (i != j) nearest[i] = std::min(nearest[i], norm(pts[i].x - pts[j].x));
  std::nth_element(nearest.begin(), nearest.begin() + nearest.size() / 2, nearest.end());
  const double margin = 2.0 * nearest[nearest.size() / 2];

  std::vector<std::size_t> centers;
  const std::size_t step = std::max<std::size_t>(1, pts.size() / opt.candidate_centers);
  for (std::size_t i = 0; i < pts.size(); i += step) centers.push_back(i);
  // geo[c][j]: geodesic distance from candidate center c to sample j.
  std::vector<std::vector<double>> geo(centers.size(), std::vector<double>(pts.size()));
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (std::size_t j = 0; j < pts.size(); ++j)
      geo[c][j] = domain.geodesic_distance(pts[centers[c]].x, pts[j].x);
  auto members = [&](std::size_t c, double radius) {
    std::vector<std::size_t> m;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (geo[c][j] < radius) m.push_back(j);
    return m;
  };

  // count[c][k]: samples within radii[k] * d of candidate center c.
  std::vector<std::vector<std::size_t>> count(centers.size(), std::vector<std::size_t>(radii.size()));
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (std::size_t k = 0; k < radii.size(); ++k) count[c][k] = members(c, radii[k] * d).size();

  struct Candidate {
    std::size_t cf, cr;
    double rf, rr;
    std::size_t nf, nr;
  };
  std::vector<Candidate> cands;
  for (std::size_t a = 0; a < centers.size(); ++a) {
    for (std::size_t b = 0; b < centers.size(); ++b) {
      if (a == b || !domain.communicates(pts[centers[a]], pts[centers[b]])) continue;
      const double sep = geo[a][centers[b]];
      for (std::size_t kf = 0; kf < radii.size(); ++kf) {
        for (std::size_t kr = kf; kr < radii.size(); ++kr) {
          if (std::isfinite(sep) && sep - (radii[kf] + radii[kr]) * d <= 2.0 * margin) continue;
          cands.push_back({a, b, radii[kf] * d, radii[kr] * d, count[a][kf], count[b][kr]});
        }
      }
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.nf != b.nf) return a.nf > b.nf;
    return a.nr > b.nr;
  });

  const std::size_t side = static_cast<std::size_t>(std::sqrt(static_cast<double>(opt.verify_pairs)));
  for (const auto& c : cands) {
    if (c.nf < kMinSamples || c.nr < kMinSamples) continue;
    const auto fm = members(c.cf, c.rf + margin);
    const auto rm = members(c.cr, c.rr + margin);
    bool ok = true;
    // Quick reject on a coarse subsample before spending the full budget.
    for (std::size_t a : detail::rim_first(fm, geo[c.cf], 8))
      for (std::size_t b : detail::rim_first(rm, geo[c.cr], 8))
        if (ok && !domain.communicates(pts[a], pts[b])) ok = false;
    if (!ok) continue;
    double d0 = std::numeric_limits<double>::infinity();
    std::size_t checked = 0;
    const auto f_check = detail::rim_first(fm, geo[c.cf], side);
    const auto r_check = detail::rim_first(rm, geo[c.cr], side);
    for (std::size_t a : f_check) {
      for (std::size_t b : r_check) {
        ++checked;
        if (!domain.communicates(pts[a], pts[b])) {
          ok = false;
          break;
        }
        d0 = std::min(d0, norm(pts[a].x - pts[b].x));
      }
      if (!ok) break;
    }
    if (!ok || !(d0 > 0.0)) continue;
    out.emitting = {pts[centers[c.cf]].x, c.rf};
    out.receiving = {pts[centers[c.cr]].x, c.rr};
    out.d0 = d0;
    out.verified_pairs = checked;
    out.emitting_samples = c.nf;
    out.receiving_samples = c.nr;
    return out;
  }
  throw PatchSearchFailed("no communicating patch pair found within the sample budget");
}

}  // namespace knudsen
