#pragma once

#include "procrisk/scenario.hpp"

#include <string>
#include <vector>

namespace procrisk {

enum class Format { report, csv };

enum ExitCode : int { kPass = 0, kCheckFailed = 1, kSchemaViolation = 2, kResourceGuard = 3 };

struct Check {
  std::string name;
  bool passed = true;
  std::string value;   // lossless text ("num/den" or round-trip decimal)
  bool exact = false;  // value compared exactly rather than within `tolerance`
  double tolerance = 0.0;
  std::string witness;
};

/// Machine-readable outcome of one command. Rendering is deterministic: no
/// clocks, no addresses, insertion-ordered keys.
struct Report {
  std::string command;
  std::string scenario;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  std::vector<Check> checks;
  nlohmann::ordered_json values = nlohmann::ordered_json::object();

  Check& add(std::string name, bool passed, std::string value = {}, bool exact = false, double tolerance = 0.0,
             std::string witness = {});
  bool passed() const;
  std::string render(Format format) const;
};

struct RunOptions {
  std::optional<std::string> scenario_path;
  ScenarioOverrides overrides;
  Format format = Format::report;
};

Report run_decompose(const Scenario& s);
Report run_risk_eval(const Scenario& s);
Report run_risk_dual(const Scenario& s);
Report run_risk_axioms(const Scenario& s);
Report run_risk_penalty(const Scenario& s);
Report run_bsde_solve(const Scenario& s);
Report run_bsde_dual(const Scenario& s);
Report run_bsde_negative_example(const Scenario& s);
Report run_suite(std::uint64_t seed, unsigned workers);

/// Loads the scenario (when the command needs one), runs, prints the
/// rendering to `out` and the error text to `err`; returns the exit code.
int dispatch(const std::string& command, const RunOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace procrisk
