#include "procrisk/commands.hpp"

#include "procrisk/acceptance.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace procrisk {

using nlohmann::ordered_json;

namespace {

template <typename Scalar>
ordered_json node_array(const AdaptedProcess<Scalar>& x) {
  ordered_json out = ordered_json::array();
  for (NodeId n = 0; n < x.size(); ++n) {
    if constexpr (is_exact_v<Scalar>) {
      out.push_back(to_text(x[n]));
    } else {
      out.push_back(x[n]);
    }
  }
  return out;
}

ordered_json stop_nodes(const StoppingTime& tau) {
  ordered_json out = ordered_json::array();
  for (NodeId n = 0; n < tau.stop.size(); ++n) {
    if (tau.stops_at(n)) out.push_back(n);
  }
  return out;
}

template <typename Scalar>
std::string text(const Scalar& v) {
  return to_text(v);
}

std::uint64_t require_seed(const Scenario& s, const char* command) {
  if (!s.seed) throw SchemaError(std::string(command) + ": sampling needs a seed (scenario \"seed\" or --seed)");
  return *s.seed;
}

const RiskHandle& require_risk(const Scenario& s, const char* command) {
  if (!s.risk) throw SchemaError(std::string(command) + ": scenario has no \"risk\" section");
  return *s.risk;
}

const BrownianTree& require_brownian(const Scenario& s, const char* command) {
  if (!s.brownian) throw SchemaError(std::string(command) + ": needs a tree of kind \"brownian\"");
  if (!s.driver) throw SchemaError(std::string(command) + ": scenario has no \"driver\" section");
  return *s.brownian;
}

Report start(const char* command, const Scenario& s, unsigned workers = 1) {
  Report r;
  r.command = command;
  r.scenario = s.name;
  r.seed = s.seed;
  r.workers = workers;
  return r;
}

std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string flat(const ordered_json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) out += (out.empty() ? "" : " ") + flat(e);
    return out;
  }
  if (v.is_number_float()) return to_text(v.get<double>());
  return v.dump();
}

template <typename Scalar>
void decompose_into(Report& r, const FiltrationTree& tree, const AdaptedProcess<Scalar>& a, DecompositionMode mode) {
  const std::string tag = mode == DecompositionMode::optional ? "optional" : "predictable";
  const auto d = mode == DecompositionMode::optional ? decompose_optional(tree, a) : decompose_predictable(tree, a);
  const auto back = recompose(tree, d);
  r.add(tag + ".round-trip", back.values == a.values, {}, true, 0.0, "recomposed measure differs from input");
  const auto rep = verify_decomposition(tree, d, a);
  std::string why;
  for (const auto& w : rep.witnesses) why += (why.empty() ? "" : "; ") + w;
  r.add(tag + ".verify", rep.all(), {}, true, 0.0, why);
  ordered_json v;
  v["mass"] = text(d.mass);
  v["L"] = node_array(d.L);
  v["D"] = node_array(d.D);
  v["tau"] = stop_nodes(d.tau);
  r.values[tag] = v;
}

template <typename Scalar>
DualSet<Scalar> derived_dual_set(const Scenario& s, const RiskMeasureHandle<Scalar>& rm) {
  if (rm.representation) return *rm.representation;
  const auto& tree = *s.tree;
  if constexpr (is_exact_v<Scalar>) {
    const std::string kind = s.risk_spec.value("kind", std::string());
    if (kind == "worst-case") return extreme_point_set<Scalar>(tree);
    if (kind == "terminal") {
      AdaptedProcess<Scalar> a(tree.node_count());
      for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) a[n] = 1;
      a.pre_time_zero = Scalar(0);
      return make_dual_set<Scalar>(tree, ControlForm::Z1, {OptionalMeasure<Scalar>{a}}, {Scalar(0)});
    }
  }
  throw SchemaError("risk dual: the risk measure carries no finite dual set");
}

template <typename Scalar>
void penalty_into(Report& r, const FiltrationTree& tree, const RiskMeasureHandle<Scalar>& rm,
                  const DualControl<Scalar>& control, const std::optional<Scalar>& declared, const std::string& name) {
  const auto bound = minimal_penalty(tree, rm, control);
  const std::string value = bound.infinite ? "inf" : (bound.exact ? bound.exact_text : to_text(bound.value));
  ordered_json v;
  v["minimal"] = value;
  v["exact"] = bound.exact;
  v["declared"] = declared ? text(*declared) : std::string("inf");
  r.values["penalties"][name] = v;
  if (!declared) {
    r.add(name + ".minimal<=declared", true, value, bound.exact);
    return;
  }
  const double slack = bound.exact ? 0.0 : 1e-9;
  bool ok = !bound.infinite;
  if (ok) {
    if constexpr (is_exact_v<Scalar>) {
      ok = bound.exact ? parse_rational(bound.exact_text) <= *declared : bound.value <= to_double(*declared) + slack;
    } else {
      ok = bound.value <= *declared + std::max(slack, 1e-9);
    }
  }
  r.add(name + ".minimal<=declared", ok, value, bound.exact, slack, "minimal penalty " + value + " exceeds declared " + text(*declared));
}

}  // namespace

Check& Report::add(std::string name, bool passed, std::string value, bool exact, double tolerance, std::string witness) {
  if (passed) witness.clear();
  else if (witness.empty()) witness = value.empty() ? "check failed" : "value " + value;
  checks.push_back(Check{std::move(name), passed, std::move(value), exact, tolerance, std::move(witness)});
  return checks.back();
}

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::string Report::render(Format format) const {
  if (format == Format::csv) {
    std::ostringstream os;
    os << "check,passed,value,exact,tolerance,witness\n";
    for (const auto& c : checks) {
      os << csv_field(c.name) << ',' << (c.passed ? "true" : "false") << ',' << csv_field(c.value) << ','
         << (c.exact ? "true" : "false") << ',' << (c.exact ? "" : to_text(c.tolerance)) << ',' << csv_field(c.witness) << '\n';
    }
    for (const auto& [key, v] : values.items()) {
      if (v.is_object()) {
        for (const auto& [sub, w] : v.items()) os << csv_field("value." + key + "." + sub) << ",," << csv_field(flat(w)) << ",,,\n";
      } else {
        os << csv_field("value." + key) << ",," << csv_field(flat(v)) << ",,,\n";
      }
    }
    return os.str();
  }
  ordered_json doc;
  doc["schema"] = "procrisk-report";
  doc["version"] = 1;
  doc["command"] = command;
  doc["scenario"] = scenario;
  doc["seed"] = seed ? ordered_json(*seed) : ordered_json(nullptr);
  doc["workers"] = workers;
  doc["passed"] = passed();
  doc["checks"] = ordered_json::array();
  for (const auto& c : checks) {
    ordered_json j;
    j["name"] = c.name;
    j["passed"] = c.passed;
    j["value"] = c.value;
    j["exact"] = c.exact;
    j["tolerance"] = c.exact ? ordered_json(nullptr) : ordered_json(c.tolerance);
    j["witness"] = c.passed ? ordered_json(nullptr) : ordered_json(c.witness);
    doc["checks"].push_back(j);
  }
  doc["values"] = values;
  return doc.dump(2) + "\n";
}

Report run_decompose(const Scenario& s) {
  if (!s.measure) throw SchemaError("decompose: scenario has no \"measure\" section");
  Report r = start("decompose", s);
  const auto& tree = *s.tree;
  r.values["measure"] = node_array(*s.measure);
  decompose_into(r, tree, *s.measure, DecompositionMode::optional);
  if (is_predictable(tree, *s.measure)) decompose_into(r, tree, *s.measure, DecompositionMode::predictable);
  return r;
}

Report run_risk_eval(const Scenario& s) {
  Report r = start("risk eval", s);
  const auto& rm = require_risk(s, "risk eval");
  if (s.processes.empty()) throw SchemaError("risk eval: scenario has no processes");
  std::visit(
      [&](const auto& h) {
        using Scalar = typename decltype(h.evaluate)::result_type;
        r.values["risk"] = h.name;
        for (const auto& [name, x] : s.processes) {
          const Scalar v = h.evaluate(convert_process<Scalar>(x));
          r.values["rho"][name] = text(v);
          if constexpr (is_exact_v<Scalar>) {
            r.add("rho(" + name + ")", true, text(v), true);
          } else {
            r.add("rho(" + name + ")", std::isfinite(v), text(v), false, s.tolerance, "non-finite value");
          }
        }
      },
      rm);
  return r;
}

Report run_risk_dual(const Scenario& s) {
  Report r = start("risk dual", s);
  const auto& rm = require_risk(s, "risk dual");
  if (s.processes.empty()) throw SchemaError("risk dual: scenario has no processes");
  const auto& tree = *s.tree;
  std::visit(
      [&](const auto& h) {
        using Scalar = typename decltype(h.evaluate)::result_type;
        const auto set = derived_dual_set(s, h);
        r.values["risk"] = h.name;
        r.values["controls"] = set.controls.size();
        for (const auto& [name, proc] : s.processes) {
          const auto x = convert_process<Scalar>(proc);
          const Scalar primal = h.evaluate(x);
          const auto dual = robust_evaluate(tree, x, set);
          ordered_json v;
          v["primal"] = text(primal);
          v["dual"] = text(dual.value);
          v["argmax"] = dual.argmax;
          r.values["processes"][name] = v;
          if constexpr (is_exact_v<Scalar>) {
            r.add(name + ".primal=dual", primal == dual.value, text(dual.value), true, 0.0,
                  "primal " + text(primal) + " vs dual " + text(dual.value));
          } else {
            const double gap = std::abs(primal - dual.value);
            r.add(name + ".primal=dual", gap <= s.tolerance, to_text(gap), false, s.tolerance,
                  "primal " + text(primal) + " vs dual " + text(dual.value));
          }
        }
      },
      rm);
  return r;
}

Report run_risk_axioms(const Scenario& s) {
  Report r = start("risk axioms", s);
  const auto& rm = require_risk(s, "risk axioms");
  const auto& tree = *s.tree;
  const std::uint64_t seed = require_seed(s, "risk axioms");
  std::visit(
      [&](const auto& h) {
        using Scalar = typename decltype(h.evaluate)::result_type;
        const double tol = is_exact_v<Scalar> ? 0.0 : s.tolerance;
        SampleConfig cfg{seed, 20, 5, tol};
        r.values["risk"] = h.name;
        for (const auto& v : axiom_check(tree, h, cfg).verdicts) {
          r.add(v.name, v.passed, std::to_string(v.checked) + " samples", tol == 0.0, tol, v.witness);
        }
        const auto sub = cash_subadditivity_check(tree, h, cfg);
        r.add(sub.inequality.name, sub.inequality.passed, std::to_string(sub.inequality.checked) + " samples", tol == 0.0,
              tol, sub.inequality.witness);
        r.values["cash-additive-on-samples"] = !sub.strict_witness_found;
        if (sub.strict_witness_found) r.values["strict-subadditivity"] = sub.strict_witness;
        if constexpr (!is_exact_v<Scalar>) {
          if (s.brownian && h.conditional_evaluate) {
            for (const auto& v : conditional_axiom_check(*s.brownian, h, cfg).verdicts) {
              r.add(v.name, v.passed, std::to_string(v.checked) + " samples", false, tol, v.witness);
            }
          }
        }
      },
      rm);
  return r;
}

Report run_risk_penalty(const Scenario& s) {
  Report r = start("risk penalty", s);
  const auto& rm = require_risk(s, "risk penalty");
  const auto& tree = *s.tree;
  std::visit(
      [&](const auto& h) {
        using Scalar = typename decltype(h.evaluate)::result_type;
        r.values["risk"] = h.name;
        r.values["penalties"] = ordered_json::object();
        if (h.representation) {
          const auto& set = *h.representation;
          for (std::size_t i = 0; i < set.controls.size(); ++i) {
            penalty_into(r, tree, h, set.controls[i], set.penalty[i], "control" + std::to_string(i));
          }
        }
        if (s.measure) {
          penalty_into<Scalar>(r, tree, h, OptionalMeasure<Scalar>{convert_process<Scalar>(*s.measure)}, std::nullopt,
                               "measure");
        }
      },
      rm);
  if (r.checks.empty()) throw SchemaError("risk penalty: nothing to evaluate (no dual set and no \"measure\")");
  return r;
}

Report run_bsde_solve(const Scenario& s) {
  Report r = start("bsde solve", s);
  const auto& bt = require_brownian(s, "bsde solve");
  const auto& g = *s.driver;
  const auto x = convert_process<double>(s.process());
  const auto sol = s.reflected ? solve_rbsde(bt, x, g) : solve_bsde(bt, x, g);
  const auto chk = check_solution(bt, x, g, sol);
  const double tol = s.tolerance;
  r.add("identity-residual", chk.identity_residual <= tol, to_text(chk.identity_residual), false, tol);
  r.add("bound", chk.bound_excess <= tol, to_text(chk.bound_excess), false, tol, "max(|Y| - ||X||) = " + to_text(chk.bound_excess));
  if (sol.reflected) {
    r.add("obstacle", chk.obstacle_ok, {}, false, tol, "Y below -X");
    r.add("complementarity", chk.complementarity <= tol, to_text(chk.complementarity), false, tol);
    r.add("k-nondecreasing", chk.k_monotone, {}, false, tol, "K decreases along a path");
  }
  const auto flags = check_driver(g, bt.tree);
  ordered_json f;
  for (const auto* v : {&flags.h1, &flags.h2, &flags.h3, &flags.h4}) f[v->name] = v->passed;
  r.values["driver"] = g.family;
  r.values["driver-flags"] = f;
  r.values["reflected"] = sol.reflected;
  r.values["Y0"] = sol.Y[0];
  r.values["Z0"] = sol.Z[0];
  r.values["max-iterations"] = sol.max_iterations;
  r.values["newton-used"] = sol.newton_used;
  r.values["bmo"] = bmo_diagnostic(bt, sol);
  return r;
}

Report run_bsde_dual(const Scenario& s) {
  Report r = start("bsde dual", s);
  const auto& bt = require_brownian(s, "bsde dual");
  const auto& g = *s.driver;
  const auto x = convert_process<double>(s.process());
  const auto sol = s.reflected ? solve_rbsde(bt, x, g) : solve_bsde(bt, x, g);
  auto oc = optimal_control(bt, x, sol, g);
  double attained;
  if (sol.reflected) {
    oc.control.tau = epsilon_optimal_tau(bt, x, sol, 1e-6);
    attained = dual_evaluate_reflected(bt, x, g, oc.control);
  } else {
    attained = dual_evaluate_er(bt, x, g, oc.control);
  }
  const double gap = std::abs(attained - sol.Y[0]);
  r.add("control-identity", oc.max_gap <= 1e-6, to_text(oc.max_gap), false, 1e-6);
  r.add("strong-duality", gap <= 1e-6, to_text(gap), false, 1e-6,
        "primal " + to_text(sol.Y[0]) + " vs dual " + to_text(attained));
  const double mu_max = std::min(std::max(1.0, g.lipschitz), 0.9 / bt.sqrt_dt());
  double worst = -kInfinity;
  int swept = 0;
  for (int i = 0; i <= 4; ++i) {
    const double beta = g.beta_bound * i / 4;
    for (int j = -6; j <= 6; ++j, ++swept) {
      const auto c = constant_control(bt.tree, beta, mu_max * j / 6);
      const double v = sol.reflected ? dual_reflected_sup_tau(bt, x, g, c) : dual_evaluate_er(bt, x, g, c);
      worst = std::max(worst, v - sol.Y[0]);
    }
  }
  r.add("weak-duality", worst <= s.tolerance, to_text(worst), false, s.tolerance,
        "a constant control exceeds the primal value by " + to_text(worst));
  r.values["Y0"] = sol.Y[0];
  r.values["dual-at-optimizer"] = attained;
  r.values["gap"] = gap;
  r.values["swept-controls"] = swept;
  r.values["beta0"] = oc.control.beta[0];
  r.values["mu0"] = oc.control.mu[0];
  return r;
}

Report run_bsde_negative_example(const Scenario& s) {
  Report r = start("bsde negative-example", s);
  const auto& bt = require_brownian(s, "bsde negative-example");
  const auto rep = negative_example_check(bt, *s.driver, s.seed.value_or(7));
  r.add("classical-violation-found", rep.witness_found, to_text(rep.classical_violation), false, 1e-9,
        "inconclusive: no violating (X, t, m) found by the search");
  r.add("shifted-form-invariance", rep.shifted_violation <= s.tolerance, to_text(rep.shifted_violation), false, s.tolerance);
  r.values["classical-violation"] = rep.classical_violation;
  r.values["shifted-violation"] = rep.shifted_violation;
  if (rep.witness_found) {
    r.values["level"] = rep.level;
    r.values["m"] = rep.m;
    r.values["x"] = node_array(rep.x);
  }
  return r;
}

Report run_suite(std::uint64_t seed, unsigned workers) {
  Report r;
  r.command = "suite";
  r.scenario = "acceptance";
  r.seed = seed;
  r.workers = workers;
  for (const auto& c : run_acceptance(seed, workers)) {
    r.add(std::to_string(c.id) + " " + c.title, c.passed, c.detail, false, 0.0, c.detail);
  }
  return r;
}

int dispatch(const std::string& command, const RunOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    Report report;
    if (command == "suite") {
      report = run_suite(opt.overrides.seed.value_or(1), opt.overrides.workers);
    } else {
      if (!opt.scenario_path) throw SchemaError(command + ": --scenario is required");
      const Scenario s = load_scenario(*opt.scenario_path, opt.overrides);
      if (command == "decompose") report = run_decompose(s);
      else if (command == "risk eval") report = run_risk_eval(s);
      else if (command == "risk dual") report = run_risk_dual(s);
      else if (command == "risk axioms") report = run_risk_axioms(s);
      else if (command == "risk penalty") report = run_risk_penalty(s);
      else if (command == "bsde solve") report = run_bsde_solve(s);
      else if (command == "bsde dual") report = run_bsde_dual(s);
      else if (command == "bsde negative-example") report = run_bsde_negative_example(s);
      else throw SchemaError("unknown command \"" + command + "\"");
      report.workers = opt.overrides.workers;
    }
    out << report.render(opt.format);
    return report.passed() ? kPass : kCheckFailed;
  } catch (const CombinatorialExplosion& e) {
    err << "resource guard: " << e.what() << '\n';
    return kResourceGuard;
  } catch (const SolverGuard& e) {
    err << "resource guard: " << e.what() << '\n';
    return kResourceGuard;
  } catch (const ConvergenceError& e) {
    err << "resource guard: " << e.what() << '\n';
    return kResourceGuard;
  } catch (const nlohmann::json::exception& e) {
    err << "schema violation: " << e.what() << '\n';
    return kSchemaViolation;
  } catch (const SchemaError& e) {
    err << "schema violation: " << e.what() << '\n';
    return kSchemaViolation;
  } catch (const std::invalid_argument& e) {
    err << "schema violation: " << e.what() << '\n';
    return kSchemaViolation;
  } catch (const std::logic_error& e) {
    err << "schema violation: " << e.what() << '\n';
    return kSchemaViolation;
  }
}

}  // namespace procrisk
