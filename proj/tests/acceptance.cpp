// Acceptance suite: one PASS/FAIL line per criterion. Seeds are fixed as
// 1000 + criterion number; thresholds and sample sizes are pinned below.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "knudsen/experiments.hpp"
#include "knudsen/scenario.hpp"

using namespace knudsen;

namespace {

constexpr double kPMin = 1e-3;

// criterion 1
constexpr std::size_t kStationarityParticles = 100000;
// criterion 2
constexpr std::size_t kHittingSamples = 1000000;
constexpr int kHittingBins = 30;
// criterion 3
constexpr std::size_t kLambdaAttempts = 100000;
// criteria 4 and 5
constexpr std::size_t kFidelityPairs = 10000;
constexpr double kFidelityTime = 5.0;
constexpr std::size_t kMergedPairs = 10000;
constexpr int kExtraEvents = 100;
// criteria 6, 7, 9
constexpr std::size_t kRatePairs = 1000000;
constexpr double kRateTMax = 200.0;
constexpr double kBoundedLo = -2.6, kBoundedHi = -1.5;
constexpr double kHeavyLo = -1.45, kHeavyHi = -0.65, kHeavyGap = 0.4;
constexpr double kSpecularLo = -2.8, kSpecularHi = -1.3;
// criterion 8
constexpr std::size_t kAnnulusPairs = 100000;
constexpr double kAnnulusTMax = 500.0;
constexpr double kAnnulusCensorMax = 0.20;
// criterion 10
constexpr double kMomentFinite[] = {0.5, 1.0, 1.9};
constexpr double kMomentDivergent = 2.0;

std::uint64_t seed_of(int criterion) { return 1000 + static_cast<std::uint64_t>(criterion); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

Json disk_config(int criterion) {
  return {{"dimension", 2},
          {"domain", {{"kind", "ball"}, {"center", {0, 0}}, {"radius", 1}}},
          {"wall_law", {{"kind", "maxwellian"}, {"theta", 1}}},
          {"alpha", 1.0},
          {"alpha0", 1.0},
          {"initial", {{"position", "uniform"}, {"velocity", "equilibrium"}}},
          {"n_pairs", kRatePairs},
          {"t_max", kRateTMax},
          {"grid", {{"t_lo", 0.1}, {"per_decade", 40}}},
          {"seed", seed_of(criterion)},
          {"mode", "auto"},
          {"speed_threshold", 1.0},
          {"fit_window", {10, 100}}};
}

Json annulus_config(int criterion) {
  Json j = disk_config(criterion);
  j["domain"] = {{"kind", "annulus"}, {"center", {0, 0}}, {"r_inner", 1}, {"r_outer", 2}};
  j["mode"] = "patch";
  j["n_pairs"] = kAnnulusPairs;
  j["t_max"] = kAnnulusTMax;
  j["fit_window"] = {10, 250};
  return j;
}

Json specular_config(int criterion) {
  Json j = disk_config(criterion);
  j["alpha"] = 0.5;
  j["alpha0"] = 0.5;
  return j;
}

struct Setup {
  Scenario scenario;
  Model<2> model;
  InitialLaw<2> f0;
  GammaOptions opt;
  PatchPair<2> patches;
};

Setup setup(const Json& j) {
  auto s = parse_scenario(j);
  auto m = build_model<2>(s);
  auto f0 = build_initial<2>(s.initial);
  auto opt = gamma_options(s);
  auto patches = patches_for(s, m);
  return {std::move(s), std::move(m), std::move(f0), opt, std::move(patches)};
}

Outcome stationarity(const Model<2>& m, std::uint64_t seed, unsigned threads) {
  Outcome o{true, ""};
  for (const auto& r : stationarity_check(m, kStationarityParticles, {1.0, 5.0, 10.0}, seed, threads, 10)) {
    o.pass = o.pass && r.chi2_p > kPMin && r.speed_ks_p > kPMin;
    o.detail += "t=" + fmt("%g", r.t) + " chi2_p=" + fmt("%.4g", r.chi2_p) + " ks_p=" + fmt("%.4g", r.speed_ks_p) + "; ";
  }
  return o;
}

Outcome hitting(const Model<2>& m, const Vec<2>& x0, std::uint64_t seed, unsigned threads) {
  const auto h = hitting_density_check(m, m.domain.boundary_point(x0), kHittingSamples, kHittingBins, kHittingBins,
                                       seed, threads);
  return {h.chi2_p > kPMin && std::abs(h.oracle_mass - 1.0) < 1e-6,
          "chi2_p=" + fmt("%.4g", h.chi2_p) + " oracle_mass=" + fmt("%.9f", h.oracle_mass) +
              " cells=" + std::to_string(h.cells)};
}

Outcome lambda(const Model<2>& m, const Vec<2>& x0, const Vec<2>& xt, const Vec<2>& vt, std::uint64_t seed,
               unsigned threads) {
  const auto l = lambda_check(m, m.domain.boundary_point(x0), xt, vt, kLambdaAttempts, seed, threads);
  return {l.ks_r_p > kPMin && l.ks_r_tilde_p > kPMin && l.within_3sigma(),
          "success=" + fmt("%.5f", l.success_rate) + " overlap=" + fmt("%.5f", l.overlap) + " sigma=" +
              fmt("%.5f", l.sigma) + " ks_r_p=" + fmt("%.4g", l.ks_r_p) + " ks_r_tilde_p=" + fmt("%.4g", l.ks_r_tilde_p)};
}

Outcome fidelity(const Setup& s, std::uint64_t seed, unsigned threads) {
  const auto f = fidelity_check(s.model, s.patches, s.opt, s.f0, kFidelityPairs, kFidelityTime, seed, threads);
  return {f.min_p() > kPMin, "primary speed_p=" + fmt("%.4g", f.primary_speed_p) + " radius_p=" +
                                 fmt("%.4g", f.primary_radius_p) + "; stationary speed_p=" +
                                 fmt("%.4g", f.stationary_speed_p) + " radius_p=" + fmt("%.4g", f.stationary_radius_p)};
}

Outcome permanence(const Setup& s, std::uint64_t seed, unsigned threads) {
  const auto p = merge_permanence_check(s.model, s.patches, s.opt, s.f0, kMergedPairs, kExtraEvents,
                                        s.scenario.t_max, seed, threads);
  return {p.merged == kMergedPairs && p.divergences == 0 &&
              p.events_checked == kMergedPairs * static_cast<std::size_t>(kExtraEvents),
          "merged=" + std::to_string(p.merged) + " events=" + std::to_string(p.events_checked) +
              " divergences=" + std::to_string(p.divergences)};
}

struct RateRun {
  std::optional<double> slope;
  double stderr_ = 0.0;
  double censor = 0.0;
  std::string detail;
};

RateRun rate(const Json& j, unsigned threads) {
  const auto s = parse_scenario(j);
  const auto r = run_scenario<2>(s, threads);
  RateRun out;
  out.censor = r.curve.censor_fraction;
  out.detail = "pairs=" + std::to_string(s.n_pairs) + " censor=" + fmt("%.5f", out.censor);
  if (r.fit) {
    out.slope = r.fit->slope;
    out.stderr_ = r.fit->slope_stderr;
    out.detail += " slope=" + fmt("%.4f", r.fit->slope) + " stderr=" + fmt("%.4f", r.fit->slope_stderr) +
                  " r2=" + fmt("%.4f", r.fit->r2) + " window=[" + fmt("%g", r.fit->t_lo) + "," +
                  fmt("%g", r.fit->t_hi) + "]";
  } else {
    out.detail += " fit failed: " + r.summary.at("fit_error").get<std::string>();
  }
  return out;
}

bool within(const std::optional<double>& x, double lo, double hi) { return x && *x >= lo && *x <= hi; }

Outcome combine(const std::vector<std::pair<std::string, Outcome>>& parts) {
  Outcome o{true, ""};
  for (const auto& [name, part] : parts) {
    o.pass = o.pass && part.pass;
    o.detail += "[" + name + (part.pass ? " ok: " : " FAIL: ") + part.detail + "] ";
  }
  return o;
}

}  // namespace

int main() {
  const unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  std::optional<double> bounded_slope;

  struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "stationarity", 120,
       [&] { return stationarity(setup(disk_config(1)).model, seed_of(1), threads); }},
      {2, "hitting_density", 120,
       [&] { return hitting(setup(disk_config(2)).model, {1.0, 0.0}, seed_of(2), threads); }},
      {3, "maximal_coupling", 180,
       [&] { return lambda(setup(disk_config(3)).model, {1.0, 0.0}, {0.0, 0.0}, {-1.0, 0.0}, seed_of(3), threads); }},
      {4, "marginal_fidelity", 180, [&] { return fidelity(setup(disk_config(4)), seed_of(4), threads); }},
      {5, "merge_permanence", 120, [&] { return permanence(setup(disk_config(5)), seed_of(5), threads); }},
      {6, "rate_bounded", 1800,
       [&] {
         const auto r = rate(disk_config(6), threads);
         bounded_slope = r.slope;
         return Outcome{within(r.slope, kBoundedLo, kBoundedHi),
                        r.detail + " band=[" + fmt("%g", kBoundedLo) + "," + fmt("%g", kBoundedHi) + "]"};
       }},
      {7, "rate_heavy", 1800,
       [&] {
         Json j = disk_config(7);
         j["initial"]["velocity"] = {{"law", {{"kind", "truncated_power"}, {"alpha", 1}}}};
         const auto r = rate(j, threads);
         const bool gap = r.slope && bounded_slope && *r.slope - *bounded_slope >= kHeavyGap;
         std::string d = r.detail + " band=[" + fmt("%g", kHeavyLo) + "," + fmt("%g", kHeavyHi) + "]";
         if (bounded_slope) d += " gap_to_bounded=" + fmt("%.4f", r.slope ? *r.slope - *bounded_slope : 0.0);
         return Outcome{within(r.slope, kHeavyLo, kHeavyHi) && gap, d};
       }},
      {8, "annulus_patch_mode", 1200,
       [&] {
         const Json j = annulus_config(8);
         const auto s = setup(j);
         const auto r = rate(j, threads);
         const Outcome run{r.censor < kAnnulusCensorMax,
                           r.detail + " (slope reported, not gated) d0=" + fmt("%.4f", s.patches.d0)};
         return combine({{"pairs", run},
                         {"stationarity", stationarity(s.model, seed_of(8) + 1, threads)},
                         {"hitting_density", hitting(s.model, {2.0, 0.0}, seed_of(8) + 2, threads)},
                         {"maximal_coupling",
                          lambda(s.model, {2.0, 0.0}, {0.0, 1.5}, {1.0, 0.0}, seed_of(8) + 3, threads)},
                         {"fidelity", fidelity(s, seed_of(8) + 4, threads)},
                         {"permanence", permanence(s, seed_of(8) + 5, threads)}});
       }},
      {9, "specular_component", 1800,
       [&] {
         const auto s = setup(specular_config(9));
         const auto r = rate(specular_config(9), threads);
         const Outcome slope{within(r.slope, kSpecularLo, kSpecularHi),
                             r.detail + " band=[" + fmt("%g", kSpecularLo) + "," + fmt("%g", kSpecularHi) + "]"};
         return combine({{"fidelity", fidelity(s, seed_of(9) + 1, threads)},
                         {"permanence", permanence(s, seed_of(9) + 2, threads)},
                         {"rate", slope}});
       }},
      {10, "moment_gate", 60,
       [&] {
         const auto m = VelocityLaw::maxwellian(2, 1.0);
         Outcome o{true, ""};
         for (double d : kMomentFinite) {
           try {
             const double c0 = moment_C0(RateFunction::power(d), SpeedLaw::of(m), m, 2.0).c0();
             o.pass = o.pass && std::isfinite(c0);
             o.detail += "d=" + fmt("%g", d) + " C0=" + fmt("%.6g", c0) + "; ";
           } catch (const Error& e) {
             o.pass = false;
             o.detail += "d=" + fmt("%g", d) + " unexpected " + e.what() + "; ";
           }
         }
         try {
           moment_C0(RateFunction::power(kMomentDivergent), SpeedLaw::of(m), m, 2.0);
           o.pass = false;
           o.detail += "d=" + fmt("%g", kMomentDivergent) + " returned finite";
         } catch (const MomentDiverges&) {
           o.detail += "d=" + fmt("%g", kMomentDivergent) + " MomentDiverges";
         }
         return o;
       }},
  };

  int failures = 0;
  std::printf("acceptance: %u thread(s)\n", threads);
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = elapsed < c.budget_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s C%d %s (%.1fs of %.0fs%s): %s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), elapsed,
                c.budget_s, in_time ? "" : ", over budget", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
