#include "procrisk/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace procrisk;

  CLI::App app{"Risk measures for processes on finite filtrations"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string scenario;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::string format = "report";
  double tolerance = 0;
  int steps = 0;
  auto* o_scenario = app.add_option("--scenario", scenario, "scenario file (JSON)");
  auto* o_seed = app.add_option("--seed", seed, "override the scenario seed");
  app.add_option("--workers", workers, "worker threads")->check(CLI::Range(1u, 256u));
  app.add_option("--format", format, "report|csv")->check(CLI::IsMember({"report", "csv"}));
  auto* o_tol = app.add_option("--tolerance", tolerance, "float comparison tolerance")->check(CLI::PositiveNumber);
  auto* o_steps = app.add_option("--steps", steps, "override the tree depth")->check(CLI::Range(0, 24));

  std::string command;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& full, const std::string& help) {
    parent->add_subcommand(name, help)->callback([&command, full] { command = full; });
  };
  leaf(&app, "decompose", "decompose", "multiplicative decomposition of the scenario measure");
  auto* risk = app.add_subcommand("risk", "risk measures")->require_subcommand(1);
  leaf(risk, "eval", "risk eval", "evaluate rho on every scenario process");
  leaf(risk, "dual", "risk dual", "primal value against the dual representation");
  leaf(risk, "axioms", "risk axioms", "axiom and cash-subadditivity checks");
  leaf(risk, "penalty", "risk penalty", "minimal penalty of each control");
  auto* bsde = app.add_subcommand("bsde", "path-dependent BSDEs")->require_subcommand(1);
  leaf(bsde, "solve", "bsde solve", "solve and verify");
  leaf(bsde, "dual", "bsde dual", "primal/dual gap");
  leaf(bsde, "negative-example", "bsde negative-example", "cash-invariance witness search for the classical form");
  leaf(&app, "suite", "suite", "full acceptance run");

  CLI11_PARSE(app, argc, argv);

  RunOptions opt;
  if (*o_scenario) opt.scenario_path = scenario;
  if (*o_seed) opt.overrides.seed = seed;
  if (*o_tol) opt.overrides.tolerance = tolerance;
  if (*o_steps) opt.overrides.steps = steps;
  opt.overrides.workers = workers;
  opt.format = format == "csv" ? Format::csv : Format::report;
  return dispatch(command, opt, std::cout, std::cerr);
}
