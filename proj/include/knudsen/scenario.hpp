#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "knudsen/coupling.hpp"
#include "knudsen/errors.hpp"
#include "knudsen/experiments.hpp"
#include "knudsen/geometry.hpp"
#include "knudsen/stats.hpp"
#include "knudsen/transport.hpp"
#include "knudsen/velocity_law.hpp"

namespace knudsen {

using Json = nlohmann::json;

enum class ModeChoice { Auto, Convex, Patch };

struct FidelitySettings {
  std::size_t pairs = 0;  // 0 disables the check in `couple`
  double t = 5.0;
};

struct SimulateSettings {
  std::size_t particles = 100000;
  std::vector<double> times{1.0, 5.0, 10.0};
  int cells = 10;
};

struct ValidateSettings {
  std::size_t stationarity_particles = 100000;
  std::vector<double> times{1.0, 5.0, 10.0};
  int cells = 10;
  std::size_t hitting_samples = 1000000;
  int tau_bins = 30;
  int angle_bins = 30;
  std::size_t lambda_attempts = 100000;
  Json lambda_geometry;  // optional {x0, x_tilde, v_tilde}
  std::size_t fidelity_pairs = 10000;
  double fidelity_t = 5.0;
  std::size_t merged_pairs = 10000;
  int extra_events = 100;
  double permanence_t_max = 1000.0;
  std::size_t involution_samples = 10000;
  double p_min = 1e-3;
};

/// Parsed and validated configuration. Domain, wall law and initial law stay
/// as JSON until the dimension is fixed.
struct Scenario {
  int dimension = 2;
  Json domain;
  Json wall_law;
  AlphaField alpha;
  double alpha0 = 1.0;
  Json initial;
  std::size_t n_pairs = 10000;
  double t_max = 200.0;
  double grid_t_lo = 0.1;
  int grid_per_decade = 40;
  std::uint64_t seed = 1;
  ModeChoice mode = ModeChoice::Auto;
  double speed_threshold = 1.0;
  std::optional<std::array<double, 2>> fit_window;
  std::size_t residual_budget = 1000000;
  FidelitySettings fidelity;
  SimulateSettings simulate;
  ValidateSettings validate;
  PatchSearchOptions patch_search;

  std::array<double, 2> window() const {
    return fit_window ? *fit_window : std::array<double, 2>{10.0, t_max / 2.0};
  }
  std::string domain_kind() const { return domain.at("kind").get<std::string>(); }
  /// Kind, or the family for implicit domains.
  std::string domain_name() const {
    return domain_kind() == "implicit" ? domain.at("family").get<std::string>() : domain_kind();
  }
};

// ------------------------------------------------------------------ parsing

namespace config {

inline void only_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline double positive(double v, const std::string& what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(what + " must be positive and finite");
  return v;
}

inline std::vector<double> numbers(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : j) {
    if (!e.is_number()) throw ConfigError(what + " must be an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

template <int N>
Vec<N> vec(const Json& j, const std::string& what) {
  const auto xs = numbers(j, what);
  if (xs.size() != static_cast<std::size_t>(N))
    throw ConfigError(what + " needs " + std::to_string(N) + " components");
  Vec<N> v;
  for (int i = 0; i < N; ++i) v[i] = xs[i];
  return v;
}

template <int N>
Vec<N> vec_or_zero(const Json& j, const char* key, const std::string& what) {
  return j.contains(key) ? vec<N>(j.at(key), what + "." + key) : Vec<N>{};
}

inline void check_domain(const Json& d, int n) {
  if (!d.is_object() || !d.contains("kind")) throw ConfigError("domain needs a kind");
  const auto kind = d.at("kind").get<std::string>();
  auto vector_of = [&](const char* key) {
    if (d.contains(key) && numbers(d.at(key), std::string("domain.") + key).size() != static_cast<std::size_t>(n))
      throw ConfigError(std::string("domain.") + key + " needs " + std::to_string(n) + " components");
  };
  vector_of("center");
  if (kind == "ball") {
    only_keys(d, "domain", {"kind", "center", "radius"});
    positive(get_or(d, "radius", 1.0, "domain"), "domain.radius");
  } else if (kind == "ellipse" || kind == "ellipsoid") {
    only_keys(d, "domain", {"kind", "center", "semi_axes"});
    if (!d.contains("semi_axes")) throw ConfigError("ellipse needs semi_axes");
    vector_of("semi_axes");
    for (double a : numbers(d.at("semi_axes"), "domain.semi_axes")) positive(a, "domain.semi_axes");
  } else if (kind == "annulus") {
    only_keys(d, "domain", {"kind", "center", "r_inner", "r_outer"});
    const double ri = get_or(d, "r_inner", 1.0, "domain"), ro = get_or(d, "r_outer", 2.0, "domain");
    if (!(ri > 0.0 && ro > ri)) throw ConfigError("annulus radii must satisfy 0 < r_inner < r_outer");
  } else if (kind == "implicit") {
    const auto family = get_or<std::string>(d, "family", "", "domain");
    if (family == "superellipse") {
      only_keys(d, "domain", {"kind", "family", "center", "semi_axes", "exponent"});
      if (!d.contains("semi_axes")) throw ConfigError("superellipse needs semi_axes");
      vector_of("semi_axes");
      for (double a : numbers(d.at("semi_axes"), "domain.semi_axes")) positive(a, "domain.semi_axes");
      if (!(get_or(d, "exponent", 4.0, "domain") >= 2.0)) throw ConfigError("superellipse exponent must be >= 2");
    } else if (family == "cassini") {
      only_keys(d, "domain", {"kind", "family", "center", "focus", "b"});
      if (n != 2) throw ConfigError("cassini ovals are planar");
      const double a = get_or(d, "focus", 1.0, "domain"), b = get_or(d, "b", 1.2, "domain");
      if (!(a > 0.0 && b > a)) throw ConfigError("cassini oval needs 0 < focus < b (one connected component)");
    } else {
      throw ConfigError("implicit domain needs family superellipse or cassini");
    }
  } else {
    throw ConfigError("unknown domain kind '" + kind + "'");
  }
}

inline void check_law(const Json& l, const std::string& where) {
  if (!l.is_object() || !l.contains("kind")) throw ConfigError(where + " needs a kind");
  const auto kind = l.at("kind").get<std::string>();
  if (kind == "maxwellian") {
    only_keys(l, where, {"kind", "theta"});
  } else if (kind == "truncated_power") {
    only_keys(l, where, {"kind", "alpha"});
  } else if (kind == "tabulated") {
    only_keys(l, where, {"kind", "r", "m"});
    if (!l.contains("r") || !l.contains("m")) throw ConfigError(where + " needs r and m arrays");
  } else {
    throw ConfigError("unknown law kind '" + kind + "' in " + where);
  }
}

inline void check_initial(const Json& i, int n) {
  only_keys(i, "initial", {"position", "velocity"});
  if (i.contains("position")) {
    const Json& p = i.at("position");
    if (p.is_string()) {
      if (p.get<std::string>() != "uniform") throw ConfigError("initial.position must be \"uniform\" or an object");
    } else {
      only_keys(p, "initial.position", {"point", "ball"});
      if (p.size() != 1) throw ConfigError("initial.position takes exactly one of point, ball");
      if (p.contains("point") && numbers(p.at("point"), "initial.position.point").size() != static_cast<std::size_t>(n))
        throw ConfigError("initial.position.point has the wrong dimension");
      if (p.contains("ball")) {
        only_keys(p.at("ball"), "initial.position.ball", {"center", "radius"});
        positive(get_or(p.at("ball"), "radius", 0.0, "initial.position.ball"), "initial.position.ball.radius");
      }
    }
  }
  if (i.contains("velocity")) {
    const Json& v = i.at("velocity");
    if (v.is_string()) {
      if (v.get<std::string>() != "equilibrium")
        throw ConfigError("initial.velocity must be \"equilibrium\" or an object");
    } else {
      only_keys(v, "initial.velocity", {"law", "point"});
      if (v.size() != 1) throw ConfigError("initial.velocity takes exactly one of law, point");
      if (v.contains("law")) check_law(v.at("law"), "initial.velocity.law");
      if (v.contains("point")) {
        const auto p = numbers(v.at("point"), "initial.velocity.point");
        if (p.size() != static_cast<std::size_t>(n)) throw ConfigError("initial.velocity.point has the wrong dimension");
        double s = 0;
        for (double c : p) s += c * c;
        if (!(s > 0.0)) throw ConfigError("initial.velocity.point must be nonzero");
      }
    }
  }
}

}  // namespace config

/// Validates a JSON document and fills defaults.
inline Scenario parse_scenario(const Json& j) {
  using namespace config;
  only_keys(j, "config",
            {"dimension", "domain", "wall_law", "alpha", "alpha0", "initial", "n_pairs", "t_max", "grid", "seed",
             "mode", "speed_threshold", "fit_window", "residual_budget", "fidelity", "simulate", "validate",
             "patch_search"});
  Scenario s;
  s.dimension = get_or(j, "dimension", 2, "config");
  if (s.dimension != 2 && s.dimension != 3) throw ConfigError("dimension must be 2 or 3");

  s.domain = j.contains("domain") ? j.at("domain") : Json{{"kind", "ball"}, {"radius", 1.0}};
  check_domain(s.domain, s.dimension);
  s.wall_law = j.contains("wall_law") ? j.at("wall_law") : Json{{"kind", "maxwellian"}, {"theta", 1.0}};
  check_law(s.wall_law, "wall_law");
  if (s.wall_law.at("kind") == "truncated_power")
    throw ConfigError("truncated_power is an initial-condition law; the wall law needs M bounded below near 0");

  if (j.contains("alpha")) {
    const Json& a = j.at("alpha");
    if (a.is_number()) {
      s.alpha = AlphaField::constant(a.get<double>());
    } else {
      only_keys(a, "alpha", {"base", "amplitude", "frequency"});
      s.alpha.base = get_or(a, "base", 1.0, "alpha");
      s.alpha.amplitude = get_or(a, "amplitude", 0.0, "alpha");
      s.alpha.frequency = get_or(a, "frequency", 1.0, "alpha");
    }
  }
  if (s.domain.contains("center")) {
    const auto c = numbers(s.domain.at("center"), "domain.center");
    s.alpha.center_x = c[0];
    s.alpha.center_y = c[1];
  }
  s.alpha0 = get_or(j, "alpha0", s.alpha.lower_bound(), "config");
  if (!(s.alpha0 > 0.0 && s.alpha0 <= 1.0)) throw ConfigError("alpha0 must lie in (0, 1]");
  if (s.alpha.lower_bound() < s.alpha0 - 1e-15 || s.alpha.upper_bound() > 1.0 + 1e-15)
    throw ConfigError("alpha(x) must stay within [alpha0, 1]");

  s.initial = j.contains("initial") ? j.at("initial") : Json::object();
  check_initial(s.initial, s.dimension);

  const auto n_pairs = get_or<std::int64_t>(j, "n_pairs", 10000, "config");
  if (n_pairs < 1) throw ConfigError("n_pairs must be at least 1");
  s.n_pairs = static_cast<std::size_t>(n_pairs);
  s.t_max = positive(get_or(j, "t_max", 200.0, "config"), "t_max");
  if (j.contains("grid")) {
    only_keys(j.at("grid"), "grid", {"t_lo", "per_decade"});
    s.grid_t_lo = positive(get_or(j.at("grid"), "t_lo", 0.1, "grid"), "grid.t_lo");
    s.grid_per_decade = get_or(j.at("grid"), "per_decade", 40, "grid");
    if (s.grid_per_decade < 1) throw ConfigError("grid.per_decade must be at least 1");
  }
  if (!(s.grid_t_lo < s.t_max)) throw ConfigError("grid.t_lo must be below t_max");
  s.seed = get_or<std::uint64_t>(j, "seed", 1, "config");

  const auto mode = get_or<std::string>(j, "mode", "auto", "config");
  if (mode == "auto") s.mode = ModeChoice::Auto;
  else if (mode == "convex") s.mode = ModeChoice::Convex;
  else if (mode == "patch") s.mode = ModeChoice::Patch;
  else throw ConfigError("mode must be auto, convex or patch");
  s.speed_threshold = positive(get_or(j, "speed_threshold", 1.0, "config"), "speed_threshold");
  if (j.contains("fit_window")) {
    const auto w = numbers(j.at("fit_window"), "fit_window");
    if (w.size() != 2 || !(w[0] > 0.0 && w[1] > w[0])) throw ConfigError("fit_window must be [t_lo, t_hi] with 0 < t_lo < t_hi");
    if (w[1] > s.t_max) throw ConfigError("fit_window must end at or before t_max");
    s.fit_window = std::array<double, 2>{w[0], w[1]};
  }
  s.residual_budget = get_or<std::size_t>(j, "residual_budget", 1000000, "config");

  if (j.contains("fidelity")) {
    const Json& f = j.at("fidelity");
    only_keys(f, "fidelity", {"pairs", "t"});
    s.fidelity.pairs = get_or<std::size_t>(f, "pairs", 0, "fidelity");
    s.fidelity.t = positive(get_or(f, "t", 5.0, "fidelity"), "fidelity.t");
    if (s.fidelity.pairs != 0 && s.fidelity.pairs < 1000) throw ConfigError("fidelity.pairs must be 0 or at least 1000");
  }
  if (j.contains("simulate")) {
    const Json& m = j.at("simulate");
    only_keys(m, "simulate", {"particles", "times", "cells"});
    s.simulate.particles = get_or<std::size_t>(m, "particles", s.simulate.particles, "simulate");
    if (m.contains("times")) s.simulate.times = numbers(m.at("times"), "simulate.times");
    s.simulate.cells = get_or(m, "cells", s.simulate.cells, "simulate");
    if (s.simulate.particles < 1000) throw ConfigError("simulate.particles must be at least 1000");
  }
  if (j.contains("validate")) {
    const Json& v = j.at("validate");
    only_keys(v, "validate",
              {"stationarity_particles", "times", "cells", "hitting_samples", "tau_bins", "angle_bins",
               "lambda_attempts", "lambda_geometry", "fidelity_pairs", "fidelity_t", "merged_pairs", "extra_events",
               "permanence_t_max", "involution_samples", "p_min"});
    auto& o = s.validate;
    o.stationarity_particles = get_or(v, "stationarity_particles", o.stationarity_particles, "validate");
    if (v.contains("times")) o.times = numbers(v.at("times"), "validate.times");
    o.cells = get_or(v, "cells", o.cells, "validate");
    o.hitting_samples = get_or(v, "hitting_samples", o.hitting_samples, "validate");
    o.tau_bins = get_or(v, "tau_bins", o.tau_bins, "validate");
    o.angle_bins = get_or(v, "angle_bins", o.angle_bins, "validate");
    o.lambda_attempts = get_or(v, "lambda_attempts", o.lambda_attempts, "validate");
    if (v.contains("lambda_geometry")) {
      o.lambda_geometry = v.at("lambda_geometry");
      only_keys(o.lambda_geometry, "validate.lambda_geometry", {"x0", "x_tilde", "v_tilde"});
    }
    o.fidelity_pairs = get_or(v, "fidelity_pairs", o.fidelity_pairs, "validate");
    o.fidelity_t = positive(get_or(v, "fidelity_t", o.fidelity_t, "validate"), "validate.fidelity_t");
    o.merged_pairs = get_or(v, "merged_pairs", o.merged_pairs, "validate");
    o.extra_events = get_or(v, "extra_events", o.extra_events, "validate");
    o.permanence_t_max = positive(get_or(v, "permanence_t_max", o.permanence_t_max, "validate"),
                                  "validate.permanence_t_max");
    o.involution_samples = get_or(v, "involution_samples", o.involution_samples, "validate");
    o.p_min = get_or(v, "p_min", o.p_min, "validate");
  }
  if (j.contains("patch_search")) {
    const Json& p = j.at("patch_search");
    only_keys(p, "patch_search", {"boundary_samples", "candidate_centers", "verify_pairs"});
    s.patch_search.boundary_samples = get_or(p, "boundary_samples", s.patch_search.boundary_samples, "patch_search");
    s.patch_search.candidate_centers =
        get_or(p, "candidate_centers", s.patch_search.candidate_centers, "patch_search");
    s.patch_search.verify_pairs = get_or(p, "verify_pairs", s.patch_search.verify_pairs, "patch_search");
  }
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_scenario(j);
}

// ----------------------------------------------------------------- builders

inline VelocityLaw build_law(const Json& l, int n) {
  const auto kind = l.at("kind").get<std::string>();
  if (kind == "maxwellian") return VelocityLaw::maxwellian(n, config::get_or(l, "theta", 1.0, "law"));
  if (kind == "truncated_power") return VelocityLaw::truncated_power(n, config::get_or(l, "alpha", 1.0, "law"));
  return VelocityLaw::tabulated(n, config::numbers(l.at("r"), "law.r"), config::numbers(l.at("m"), "law.m"));
}

/// {sum |(x_i - c_i) / a_i|^p}^{1/p} - 1, scaled by the smallest semi-axis.
template <int N>
ImplicitSurface<N> superellipse(const Vec<N>& center, const Vec<N>& semi, double p) {
  const double scale = *std::min_element(semi.c.begin(), semi.c.end());
  ImplicitSurface<N> s;
  auto sum = [=](const Vec<N>& x) {
    double acc = 0;
    for (int i = 0; i < N; ++i) acc += std::pow(std::abs((x[i] - center[i]) / semi[i]), p);
    return acc;
  };
  s.phi = [=](const Vec<N>& x) { return scale * (std::pow(sum(x), 1.0 / p) - 1.0); };
  s.grad = [=](const Vec<N>& x) {
    const double total = sum(x);
    Vec<N> g;
    if (!(total > 0.0)) return g;
    const double outer = scale * std::pow(total, 1.0 / p - 1.0);
    for (int i = 0; i < N; ++i) {
      const double y = (x[i] - center[i]) / semi[i];
      g[i] = outer * std::pow(std::abs(y), p - 1.0) * (y < 0 ? -1.0 : 1.0) / semi[i];
    }
    return g;
  };
  s.box_lo = center - semi;
  s.box_hi = center + semi;
  s.convex = true;
  return s;
}

/// Cassini oval |x - f||x + f| = b^2 with foci at center +- (focus, 0).
inline ImplicitSurface<2> cassini(const Vec<2>& center, double focus, double b) {
  ImplicitSurface<2> s;
  const Vec<2> f{{focus, 0.0}};
  s.phi = [=](const Vec<2>& x) { return (norm(x - center - f) * norm(x - center + f) - b * b) / (2.0 * b); };
  s.grad = [=](const Vec<2>& x) {
    const Vec<2> d1 = x - center - f, d2 = x - center + f;
    const double r1 = std::max(norm(d1), 1e-300), r2 = std::max(norm(d2), 1e-300);
    return ((r2 / r1) * d1 + (r1 / r2) * d2) / (2.0 * b);
  };
  const double half_width = std::sqrt(focus * focus + b * b);
  const double half_height = std::min(b, b * b / (2.0 * focus));
  s.box_lo = center - Vec<2>{{half_width, half_height}};
  s.box_hi = center + Vec<2>{{half_width, half_height}};
  // Waist-free exactly when b >= sqrt(2) focus.
  s.convex = b * b >= 2.0 * focus * focus;
  return s;
}

template <int N>
Domain<N> build_domain(const Json& d) {
  using config::get_or;
  const auto kind = d.at("kind").get<std::string>();
  const Vec<N> c = config::vec_or_zero<N>(d, "center", "domain");
  if (kind == "ball") return Domain<N>::ball(c, get_or(d, "radius", 1.0, "domain"));
  if (kind == "ellipse" || kind == "ellipsoid")
    return Domain<N>::ellipsoid(c, config::vec<N>(d.at("semi_axes"), "domain.semi_axes"));
  if (kind == "annulus")
    return Domain<N>::annulus(c, get_or(d, "r_inner", 1.0, "domain"), get_or(d, "r_outer", 2.0, "domain"));
  const auto family = get_or<std::string>(d, "family", "", "domain");
  if (family == "superellipse")
    return Domain<N>(superellipse<N>(c, config::vec<N>(d.at("semi_axes"), "domain.semi_axes"),
                                     get_or(d, "exponent", 4.0, "domain")));
  if constexpr (N == 2) {
    if (family == "cassini")
      return Domain<2>(cassini(c, get_or(d, "focus", 1.0, "domain"), get_or(d, "b", 1.2, "domain")));
  }
  throw ConfigError("domain kind '" + kind + "' is not available in dimension " + std::to_string(N));
}

template <int N>
InitialLaw<N> build_initial(const Json& i) {
  InitialLaw<N> f0;
  if (i.contains("position") && i.at("position").is_object()) {
    const Json& p = i.at("position");
    if (p.contains("point")) {
      f0.where = InitialLaw<N>::Where::Point;
      f0.point = config::vec<N>(p.at("point"), "initial.position.point");
    } else {
      f0.where = InitialLaw<N>::Where::Ball;
      f0.point = config::vec_or_zero<N>(p.at("ball"), "center", "initial.position.ball");
      f0.ball_radius = p.at("ball").at("radius").get<double>();
    }
  }
  if (i.contains("velocity") && i.at("velocity").is_object()) {
    const Json& v = i.at("velocity");
    if (v.contains("law")) {
      f0.velocity = InitialLaw<N>::Velocity::Law;
      f0.law = build_law(v.at("law"), N);
    } else {
      f0.velocity = InitialLaw<N>::Velocity::Point;
      f0.v0 = config::vec<N>(v.at("point"), "initial.velocity.point");
    }
  }
  return f0;
}

template <int N>
Model<N> build_model(const Scenario& s) {
  return Model<N>(build_domain<N>(s.domain), build_law(s.wall_law, N), s.alpha, s.alpha0);
}

inline CouplingMode resolve_mode(const Scenario& s) {
  switch (s.mode) {
    case ModeChoice::Convex: return CouplingMode::Convex;
    case ModeChoice::Patch: return CouplingMode::Patch;
    case ModeChoice::Auto: break;
  }
  const auto kind = s.domain_kind();
  return (kind == "ball" || kind == "ellipse" || kind == "ellipsoid") ? CouplingMode::Convex : CouplingMode::Patch;
}

inline GammaOptions gamma_options(const Scenario& s) {
  GammaOptions g;
  g.mode = resolve_mode(s);
  g.speed_threshold = s.speed_threshold;
  g.lambda.residual_budget = s.residual_budget;
  return g;
}

template <int N>
PatchPair<N> patches_for(const Scenario& s, const Model<N>& m) {
  if (resolve_mode(s) == CouplingMode::Convex) {
    if (!m.domain.is_convex()) throw ConfigError("convex mode requested for a non-convex domain");
    PatchPair<N> p;
    p.whole_boundary = true;
    return p;
  }
  return find_patches(m.domain, s.patch_search);
}

// ------------------------------------------------------------------ reports

namespace report {

template <int N>
Json vec(const Vec<N>& v) {
  Json a = Json::array();
  for (int i = 0; i < N; ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Json patches(const PatchPair<N>& p) {
  Json j{{"whole_boundary", p.whole_boundary}};
  if (p.whole_boundary) {
    j["emitting"] = nullptr;
    j["receiving"] = nullptr;
    j["d0"] = nullptr;
    j["verified_pairs"] = 0;
    return j;
  }
  j["emitting"] = {{"center", vec<N>(p.emitting.center)}, {"radius", p.emitting.radius}, {"samples", p.emitting_samples}};
  j["receiving"] = {{"center", vec<N>(p.receiving.center)}, {"radius", p.receiving.radius}, {"samples", p.receiving_samples}};
  j["d0"] = p.d0;
  j["verified_pairs"] = p.verified_pairs;
  return j;
}

inline std::string mode_name(CouplingMode m) { return m == CouplingMode::Convex ? "convex" : "patch"; }

inline Json fit(const RateFit& f) {
  return {{"t_lo", f.t_lo}, {"t_hi", f.t_hi},       {"slope", f.slope}, {"intercept", f.intercept},
          {"slope_stderr", f.slope_stderr}, {"r2", f.r2}, {"points", f.points}};
}

inline std::string number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace report

/// Artifacts of `couple`.
struct CoupleResult {
  SurvivalCurve curve;
  std::optional<RateFit> fit;
  Json summary;
  Json diagnostics;

  std::string survival_csv() const {
    std::ostringstream os;
    os << "t,survival,ci_lo,ci_hi\n";
    for (std::size_t i = 0; i < curve.t.size(); ++i)
      os << report::number(curve.t[i]) << ',' << report::number(curve.survival[i]) << ','
         << report::number(curve.ci_lo[i]) << ',' << report::number(curve.ci_hi[i]) << '\n';
    return os.str();
  }
};

/// Speed law of the initial velocity part, for the moment gate.
template <int N>
SpeedLaw initial_speed_law(const InitialLaw<N>& f0, const VelocityLaw& wall) {
  switch (f0.velocity) {
    case InitialLaw<N>::Velocity::Law: return SpeedLaw::of(*f0.law);
    case InitialLaw<N>::Velocity::Point: return SpeedLaw::point_mass(norm(f0.v0));
    case InitialLaw<N>::Velocity::Equilibrium: break;
  }
  return SpeedLaw::of(wall);
}

/// Simulates the pair ensemble and assembles survival curve, rate fit,
/// fidelity tests, maximal-coupling statistics and collision diagnostics.
/// Outputs depend on (config, seed) only, not on `threads`.
template <int N>
CoupleResult run_scenario(const Scenario& s, unsigned threads) {
  const Model<N> model = build_model<N>(s);
  const InitialLaw<N> f0 = build_initial<N>(s.initial);
  const GammaOptions opt = gamma_options(s);
  const PatchPair<N> patches = patches_for(s, model);

  const auto records = run_pairs(model, patches, opt, f0, s.n_pairs, s.t_max, s.seed, threads);
  CoupleResult out;
  out.curve = survival_curve(merge_samples(records), log_grid(s.grid_t_lo, s.t_max, s.grid_per_decade), s.t_max);

  const auto [w_lo, w_hi] = s.window();
  Json fit_json = nullptr, fit_error = nullptr;
  try {
    out.fit = fit_tail_slope(out.curve, w_lo, w_hi);
    fit_json = report::fit(*out.fit);
  } catch (const DegenerateWindow& e) {
    fit_error = e.what();
  }

  CouplingAudit audit;
  std::uint64_t merged = 0, p_coll = 0, s_coll = 0;
  double time_sum = 0.0;
  for (const auto& r : records) {
    audit += r.audit;
    merged += !r.merge.censored;
    p_coll += r.primary_collisions;
    s_coll += r.stationary_collisions;
    time_sum += r.merge.time;
  }
  const std::uint64_t n = records.size();

  Json lambda{{"attempts", audit.lambda_attempts}, {"successes", audit.lambda_successes}};
  if (audit.lambda_attempts > 0) {
    const auto ci = wilson(audit.lambda_successes, audit.lambda_attempts);
    lambda["success_rate"] = static_cast<double>(audit.lambda_successes) / audit.lambda_attempts;
    lambda["ci_lo"] = ci.lo;
    lambda["ci_hi"] = ci.hi;
  } else {
    lambda["success_rate"] = nullptr;
    lambda["ci_lo"] = nullptr;
    lambda["ci_hi"] = nullptr;
  }

  Json fidelity = nullptr;
  if (s.fidelity.pairs > 0) {
    const auto f = fidelity_check(model, patches, opt, f0, s.fidelity.pairs, s.fidelity.t, s.seed, threads);
    fidelity = {{"t", s.fidelity.t},
                {"pairs", s.fidelity.pairs},
                {"primary_speed_p", f.primary_speed_p},
                {"primary_radius_p", f.primary_radius_p},
                {"stationary_speed_p", f.stationary_speed_p},
                {"stationary_radius_p", f.stationary_radius_p},
                {"min_p", f.min_p()}};
  }

  out.summary = {{"schema_version", 1},
                 {"dimension", N},
                 {"domain", s.domain_name()},
                 {"mode", report::mode_name(opt.mode)},
                 {"seed", s.seed},
                 {"n_pairs", n},
                 {"t_max", s.t_max},
                 {"merged", merged},
                 {"censored", n - merged},
                 {"censor_fraction", out.curve.censor_fraction},
                 {"restricted_mean_merge_time", time_sum / n},
                 {"fit_window", {w_lo, w_hi}},
                 {"fit", fit_json},
                 {"fit_error", fit_error},
                 {"fidelity", fidelity},
                 {"lambda", lambda}};

  Json moment;
  try {
    const auto m = moment_C0(RateFunction::power(1.0), initial_speed_law(f0, model.wall), model.wall,
                             model.domain.diameter());
    moment = {{"rate", "power"}, {"exponent", 1.0}, {"initial", m.initial}, {"equilibrium", m.equilibrium},
              {"reemission", m.reemission}, {"c0", m.c0()}, {"error", nullptr}};
  } catch (const Error& e) {
    moment = {{"rate", "power"}, {"exponent", 1.0}, {"initial", nullptr}, {"equilibrium", nullptr},
              {"reemission", nullptr}, {"c0", nullptr}, {"error", e.what()}};
  }
  std::uint64_t steps = 0;
  for (auto r : audit.rows) steps += r;
  out.diagnostics = {
      {"table_rows", audit.rows},
      {"joint_events", steps},
      {"shared_installs", audit.shared_installs},
      {"collisions",
       {{"primary_total", p_coll},
        {"stationary_total", s_coll},
        {"simulated_time", time_sum},
        {"primary_rate", time_sum > 0 ? p_coll / time_sum : 0.0},
        {"stationary_rate", time_sum > 0 ? s_coll / time_sum : 0.0}}},
      {"domain_diameter", model.domain.diameter()},
      {"patches", report::patches(patches)},
      {"moment_gate", moment}};
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

inline void write_couple(const CoupleResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "survival.csv", r.survival_csv());
  write_text(dir / "summary.json", r.summary.dump(2) + "\n");
  write_text(dir / "diagnostics.json", r.diagnostics.dump(2) + "\n");
}

/// `simulate`: stationarity of mu_infinity, and the TV distance between the
/// single-chain law from f0 and the equilibrium ensemble at each time.
template <int N>
Json run_simulate(const Scenario& s, unsigned threads) {
  const Model<N> model = build_model<N>(s);
  const InitialLaw<N> f0 = build_initial<N>(s.initial);
  const auto& cfg = s.simulate;
  Json rows = Json::array();
  for (const auto& r : stationarity_check(model, cfg.particles, cfg.times, s.seed, threads, cfg.cells))
    rows.push_back({{"t", r.t}, {"position_chi2_p", r.chi2_p}, {"speed_ks_p", r.speed_ks_p}});

  auto snapshots = [&](const InitialLaw<N>& law, std::uint64_t block) {
    return parallel_map<std::vector<PhasePoint<N>>>(cfg.particles, threads, [&](std::size_t i) {
      CounterRng rng(s.seed, block + i);
      auto p = law.sample(model, rng);
      std::vector<PhasePoint<N>> out;
      for (double t : cfg.times) {
        const auto [x, v] = state_at(model, p, t, rng);
        out.push_back({x, v});
      }
      return out;
    });
  };
  const auto from_f0 = snapshots(f0, kReferenceBlock);
  const auto from_eq = snapshots(InitialLaw<N>::equilibrium(), 2 * kReferenceBlock);
  Json tv = Json::array();
  for (std::size_t k = 0; k < cfg.times.size(); ++k) {
    std::vector<PhasePoint<N>> a, b;
    for (std::size_t i = 0; i < cfg.particles; ++i) {
      a.push_back(from_f0[i][k]);
      b.push_back(from_eq[i][k]);
    }
    const auto r = tv_sensitivity(model.domain, a, b);
    tv.push_back({{"t", cfg.times[k]}, {"coarse", r.coarse}, {"medium", r.medium}, {"fine", r.fine}});
  }
  return {{"particles", cfg.particles}, {"seed", s.seed}, {"stationarity", rows}, {"tv_to_equilibrium", tv}};
}

/// `patches`: the patch search result for the configured domain.
template <int N>
Json run_patches(const Scenario& s) {
  const Model<N> model = build_model<N>(s);
  Json j = report::patches(find_patches(model.domain, s.patch_search));
  j["convex"] = model.domain.is_convex();
  j["diameter"] = model.domain.diameter();
  j["mode"] = report::mode_name(resolve_mode(s));
  return j;
}

/// Outcome of one `validate` check.
struct CheckResult {
  std::string name;
  bool passed = false;
  bool skipped = false;
  Json detail;
};

namespace detail {

// Default Lambda configuration: an outer-wall emitter and a stationary
// particle heading for the boundary from the middle of the domain.
template <int N>
std::optional<std::array<Vec<N>, 3>> lambda_geometry(const Scenario& s, const Model<N>& m) {
  const Json& g = s.validate.lambda_geometry;
  if (!g.is_null())
    return std::array<Vec<N>, 3>{config::vec<N>(g.at("x0"), "x0"), config::vec<N>(g.at("x_tilde"), "x_tilde"),
                                 config::vec<N>(g.at("v_tilde"), "v_tilde")};
  Vec<N> e1, e2;
  e1[0] = 1.0;
  e2[1] = 1.0;
  if (const auto* b = std::get_if<Ball<N>>(&m.domain.shape()))
    return std::array<Vec<N>, 3>{b->center + b->radius * e1, b->center, -1.0 * e1};
  if (const auto* a = std::get_if<Annulus<N>>(&m.domain.shape()))
    return std::array<Vec<N>, 3>{a->center + a->r_outer * e1, a->center + 0.5 * (a->r_inner + a->r_outer) * e2, e1};
  return std::nullopt;
}

inline bool has_closed_form(const Scenario& s) {
  const auto k = s.domain_kind();
  return s.dimension == 2 && (k == "ball" || k == "annulus");
}

}  // namespace detail

/// `validate`: the invariant and property suite on the configured model.
template <int N>
std::vector<CheckResult> run_validate(const Scenario& s, unsigned threads) {
  const Model<N> model = build_model<N>(s);
  const InitialLaw<N> f0 = build_initial<N>(s.initial);
  const GammaOptions opt = gamma_options(s);
  const PatchPair<N> patches = patches_for(s, model);
  const auto& v = s.validate;
  std::vector<CheckResult> out;

  {
    CheckResult c;
    c.name = "stationarity";
    Json rows = Json::array();
    c.passed = true;
    for (const auto& r : stationarity_check(model, v.stationarity_particles, v.times, s.seed, threads, v.cells)) {
      rows.push_back({{"t", r.t}, {"position_chi2_p", r.chi2_p}, {"speed_ks_p", r.speed_ks_p}});
      c.passed = c.passed && r.chi2_p > v.p_min && r.speed_ks_p > v.p_min;
    }
    c.detail = rows;
    out.push_back(c);
  }

  const auto geometry = detail::lambda_geometry(s, model);
  if constexpr (N == 2) {
    if (detail::has_closed_form(s) && geometry) {
      const auto x0 = model.domain.boundary_point((*geometry)[0]);
      const auto h = hitting_density_check(model, x0, v.hitting_samples, v.tau_bins, v.angle_bins, s.seed + 1, threads);
      out.push_back({"hitting_density", h.chi2_p > v.p_min && std::abs(h.oracle_mass - 1.0) < 1e-6, false,
                     {{"chi2_p", h.chi2_p}, {"oracle_mass", h.oracle_mass}, {"cells", h.cells}}});
      const auto l = lambda_check(model, x0, (*geometry)[1], (*geometry)[2], v.lambda_attempts, s.seed + 2, threads);
      out.push_back({"maximal_coupling",
                     l.ks_r_p > v.p_min && l.ks_r_tilde_p > v.p_min && l.within_3sigma(), false,
                     {{"attempts", l.attempts},
                      {"success_rate", l.success_rate},
                      {"overlap", l.overlap},
                      {"sigma", l.sigma},
                      {"ks_r_p", l.ks_r_p},
                      {"ks_r_tilde_p", l.ks_r_tilde_p}}});
    }
  }
  if (out.size() == 1) {
    out.push_back({"hitting_density", true, true, {{"reason", "closed-form oracle needs a planar disk or annulus"}}});
    out.push_back({"maximal_coupling", true, true, {{"reason", "closed-form oracle needs a planar disk or annulus"}}});
  }

  {
    const auto f = fidelity_check(model, patches, opt, f0, v.fidelity_pairs, v.fidelity_t, s.seed + 3, threads);
    out.push_back({"marginal_fidelity", f.min_p() > v.p_min, false,
                   {{"t", v.fidelity_t},
                    {"primary_speed_p", f.primary_speed_p},
                    {"primary_radius_p", f.primary_radius_p},
                    {"stationary_speed_p", f.stationary_speed_p},
                    {"stationary_radius_p", f.stationary_radius_p}}});
  }
  {
    const auto p = merge_permanence_check(model, patches, opt, f0, v.merged_pairs, v.extra_events,
                                          v.permanence_t_max, s.seed + 4, threads);
    out.push_back({"merge_permanence", p.merged == v.merged_pairs && p.divergences == 0, false,
                   {{"merged", p.merged}, {"divergences", p.divergences}, {"events_checked", p.events_checked}}});
  }
  {
    // Specular reflection and the angle chart are involutive / inverse pairs.
    const auto pts = model.domain.boundary_samples(std::max<std::size_t>(v.involution_samples / 16, 16));
    double worst_reflect = 0.0, worst_chart = 0.0;
    CounterRng rng(s.seed + 5, 0);
    for (std::size_t i = 0; i < v.involution_samples; ++i) {
      const auto& at = pts[i % pts.size()];
      const Vec<N> w = model.wall.template sample_velocity<N>(rng);
      worst_reflect = std::max(worst_reflect, norm(specular_reflect(at, specular_reflect(at, w)) - w) / norm(w));
      const auto th = sample_angles<N>(rng);
      const auto back = vartheta_inverse(at, vartheta(at, th));
      for (std::size_t k = 0; k < th.size(); ++k) worst_chart = std::max(worst_chart, std::abs(back[k] - th[k]));
    }
    out.push_back({"involutions", worst_reflect < 1e-12 && worst_chart < 1e-9, false,
                   {{"samples", v.involution_samples},
                    {"specular_max_error", worst_reflect},
                    {"chart_max_error", worst_chart}}});
  }
  return out;
}

inline Json to_json(const std::vector<CheckResult>& checks) {
  Json arr = Json::array();
  bool all = true;
  for (const auto& c : checks) {
    arr.push_back({{"name", c.name}, {"passed", c.passed}, {"skipped", c.skipped}, {"detail", c.detail}});
    all = all && c.passed;
  }
  return {{"passed", all}, {"checks", arr}};
}

}  // namespace knudsen
