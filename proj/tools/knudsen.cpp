// knudsen: command-line driver for the coupled free-transport simulations.
//
//   knudsen couple   --config disk.json --out runs/disk --threads 8
//   knudsen simulate --config disk.json
//   knudsen validate --config annulus.json
//   knudsen patches  --config annulus.json

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "knudsen/scenario.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> pairs;
  std::string out = ".";
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

knudsen::Scenario load(const Flags& f) {
  auto s = knudsen::load_scenario(f.config);
  if (f.seed) s.seed = *f.seed;
  if (f.pairs) {
    if (*f.pairs < 1) throw knudsen::ConfigError("--pairs must be at least 1");
    s.n_pairs = *f.pairs;
  }
  return s;
}

template <class F>
auto by_dimension(const knudsen::Scenario& s, F&& f) {
  return s.dimension == 2 ? f(std::integral_constant<int, 2>{}) : f(std::integral_constant<int, 3>{});
}

void emit(const knudsen::Json& j, const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  knudsen::write_text(dir / name, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
}

int couple(const Flags& f) {
  const auto s = load(f);
  const auto r = by_dimension(s, [&](auto n) { return knudsen::run_scenario<decltype(n)::value>(s, f.threads); });
  knudsen::write_couple(r, f.out);
  std::cout << r.summary.dump(2) << "\n";
  return 0;
}

int simulate(const Flags& f) {
  const auto s = load(f);
  emit(by_dimension(s, [&](auto n) { return knudsen::run_simulate<decltype(n)::value>(s, f.threads); }), f.out,
       "simulate.json");
  return 0;
}

int validate(const Flags& f) {
  const auto s = load(f);
  const auto checks =
      by_dimension(s, [&](auto n) { return knudsen::run_validate<decltype(n)::value>(s, f.threads); });
  const auto j = knudsen::to_json(checks);
  std::filesystem::create_directories(f.out);
  knudsen::write_text(std::filesystem::path(f.out) / "validate.json", j.dump(2) + "\n");
  for (const auto& c : checks)
    std::cout << (c.skipped ? "SKIP " : c.passed ? "PASS " : "FAIL ") << c.name << " " << c.detail.dump() << "\n";
  return j.at("passed").get<bool>() ? 0 : 1;
}

int patches(const Flags& f) {
  const auto s = load(f);
  emit(by_dimension(s, [&](auto n) { return knudsen::run_patches<decltype(n)::value>(s); }), f.out, "patches.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled free-transport simulations of a Knudsen gas with Maxwell boundary conditions"};
  app.require_subcommand(1);
  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON scenario file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "seed (overrides the config)");
    sub->add_option("--pairs", flags.pairs, "number of coupled pairs (overrides n_pairs)");
    sub->add_option("--out", flags.out, "output directory")->capture_default_str();
    sub->add_option("--threads", flags.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  };
  auto* c = app.add_subcommand("couple", "pair ensemble: survival curve, rate fit, diagnostics");
  auto* s = app.add_subcommand("simulate", "single-chain ensembles and stationarity tests");
  auto* v = app.add_subcommand("validate", "invariant and property suite");
  auto* p = app.add_subcommand("patches", "boundary patch search");
  for (auto* sub : {c, s, v, p}) add_common(sub);

  CLI11_PARSE(app, argc, argv);
  try {
    if (c->parsed()) return couple(flags);
    if (s->parsed()) return simulate(flags);
    if (v->parsed()) return validate(flags);
    return patches(flags);
  } catch (const knudsen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
