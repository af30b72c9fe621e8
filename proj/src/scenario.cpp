#include "procrisk/scenario.hpp"

#include <fstream>
#include <sstream>

namespace procrisk {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw SchemaError(where + ": missing \"" + key + "\"");
  return obj.at(key);
}

std::string text_field(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw SchemaError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

double number_field(const json& obj, const char* key, const std::string& where, std::optional<double> fallback = {}) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw SchemaError(where + ": missing \"" + key + "\"");
  }
  const auto& v = obj.at(key);
  if (!v.is_number()) throw SchemaError(where + "." + key + ": expected a number");
  return v.get<double>();
}

int int_field(const json& obj, const char* key, const std::string& where, std::optional<int> fallback = {}) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw SchemaError(where + ": missing \"" + key + "\"");
  }
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw SchemaError(where + "." + key + ": expected an integer");
  return v.get<int>();
}

std::uint64_t need_seed(const Scenario& s, const std::string& where) {
  if (!s.seed) throw SchemaError(where + ": randomized generator needs a seed");
  return *s.seed;
}

AdaptedProcess<Rational> node_values(const json& v, const FiltrationTree& tree, const std::string& where) {
  if (!v.is_array() || v.size() != tree.node_count()) {
    throw SchemaError(where + ": expected " + std::to_string(tree.node_count()) + " node values");
  }
  AdaptedProcess<Rational> x(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) x[n] = json_rational(v[n], where + "[" + std::to_string(n) + "]");
  return x;
}

AdaptedProcess<Rational> by_level(const json& v, const FiltrationTree& tree, const std::string& where) {
  if (!v.is_array() || v.size() != static_cast<std::size_t>(tree.steps() + 1)) {
    throw SchemaError(where + ": expected " + std::to_string(tree.steps() + 1) + " level values");
  }
  AdaptedProcess<Rational> x(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) x[n] = json_rational(v[tree.level(n)], where);
  return x;
}

void parse_tree(Scenario& s, const json& spec, const ScenarioOverrides& over) {
  const std::string where = "tree";
  const std::string kind = text_field(spec, "kind", where);
  const int steps = over.steps.value_or(int_field(spec, "steps", where, 2));
  const double horizon = number_field(spec, "horizon", where, 1.0);
  if (steps < 0 || steps > 24) throw SchemaError("tree.steps: out of range [0, 24]");
  if (kind == "brownian") {
    auto bt = std::make_shared<BrownianTree>(build_brownian_tree(steps, horizon, spec.value("lattice", false)));
    s.brownian = bt;
    s.tree = std::shared_ptr<const FiltrationTree>(bt, &bt->tree);
  } else if (kind == "uniform") {
    s.tree = std::make_shared<FiltrationTree>(FiltrationTree::uniform(steps, int_field(spec, "branching", where, 2), horizon));
  } else if (kind == "lattice") {
    s.tree = std::make_shared<FiltrationTree>(
        FiltrationTree::binomial_lattice(steps, json_rational(spec.value("p_up", json("1/2")), "tree.p_up"), horizon));
  } else if (kind == "explicit") {
    const auto& probs = require(spec, "probabilities", where);
    if (!probs.is_array()) throw SchemaError("tree.probabilities: expected an array per node");
    s.tree = std::make_shared<FiltrationTree>(FiltrationTree::grow(steps, [&](NodeId n, int) {
      if (n >= probs.size() || !probs[n].is_array()) {
        throw SchemaError("tree.probabilities: no entry for node " + std::to_string(n));
      }
      std::vector<Rational> out;
      for (const auto& p : probs[n]) out.push_back(json_rational(p, "tree.probabilities"));
      return out;
    }));
  } else if (kind == "random") {
    Rng rng = Rng::stream(need_seed(s, where), 1);
    s.tree = std::make_shared<FiltrationTree>(random_tree(rng, int_field(spec, "max_depth", where, 4),
                                                          int_field(spec, "max_branching", where, 3),
                                                          int_field(spec, "min_depth", where, 1)));
  } else {
    throw SchemaError("tree.kind: unknown \"" + kind + "\"");
  }
}

AdaptedProcess<Rational> parse_process(Scenario& s, const json& spec, const std::string& where, std::uint64_t tag) {
  const auto& tree = *s.tree;
  const std::string kind = text_field(spec, "kind", where);
  if (kind == "constant") return constant_process(tree, json_rational(require(spec, "value", where), where));
  if (kind == "payment") {
    const int from = int_field(spec, "from", where);
    if (from < 0 || from > tree.steps()) throw SchemaError(where + ".from: out of range");
    return single_payment(tree, json_rational(require(spec, "m", where), where), from);
  }
  if (kind == "nodes") return node_values(require(spec, "values", where), tree, where);
  if (kind == "levels") return by_level(require(spec, "values", where), tree, where);
  if (kind == "random") {
    Rng rng = Rng::stream(need_seed(s, where), tag);
    return random_process(rng, tree, int_field(spec, "range", where, 5));
  }
  if (!s.brownian) throw SchemaError(where + ": \"" + kind + "\" needs a brownian tree");
  if (kind == "hump") {
    const auto x = hump_process(*s.brownian, number_field(spec, "height", where, 1.0));
    AdaptedProcess<Rational> out(tree.node_count());
    for (NodeId n = 0; n < tree.node_count(); ++n) out[n] = Rational(x[n]);
    return out;
  }
  if (kind == "terminal") {
    const std::string f = text_field(spec, "function", where);
    const double strike = number_field(spec, "strike", where, 0.0);
    AdaptedProcess<Rational> out(tree.node_count());
    for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) {
      const double w = s.brownian->W[static_cast<Eigen::Index>(n)];
      double v = 0;
      if (f == "sign") v = w > 0 ? 1.0 : (w < 0 ? -1.0 : 0.0);
      else if (f == "identity") v = w;
      else if (f == "square") v = w * w;
      else if (f == "call") v = std::max(w - strike, 0.0);
      else if (f == "constant") v = strike;
      else throw SchemaError(where + ".function: unknown \"" + f + "\"");
      out[n] = Rational(v);
    }
    return out;
  }
  throw SchemaError(where + ".kind: unknown \"" + kind + "\"");
}

AdaptedProcess<Rational> parse_measure(Scenario& s, const json& spec) {
  const auto& tree = *s.tree;
  const std::string where = "measure";
  const std::string kind = text_field(spec, "kind", where);
  AdaptedProcess<Rational> a;
  if (kind == "levels") {
    a = by_level(require(spec, "values", where), tree, where);
  } else if (kind == "nodes") {
    a = node_values(require(spec, "values", where), tree, where);
  } else if (kind == "terminal") {
    a = AdaptedProcess<Rational>(tree.node_count());
    for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) a[n] = 1;
  } else if (kind == "random-z1") {
    Rng rng = Rng::stream(need_seed(s, where), 2);
    a = random_z1_measure(rng, tree, number_field(spec, "zero_prob", where, 0.5));
  } else if (kind == "random-predictable") {
    Rng rng = Rng::stream(need_seed(s, where), 3);
    a = random_predictable_measure(rng, tree, number_field(spec, "zero_prob", where, 0.5));
  } else {
    throw SchemaError("measure.kind: unknown \"" + kind + "\"");
  }
  a.pre_time_zero = Rational(0);
  if (auto e = measure_defect(tree, a); !e.empty()) throw SchemaError("measure: " + e);
  return a;
}

Driver parse_driver(const json& spec) {
  const std::string where = "driver";
  const std::string family = text_field(spec, "family", where);
  if (family == "zero") return zero_driver();
  if (family == "linear") return linear_driver(number_field(spec, "beta", where, 0.0), number_field(spec, "theta", where, 0.0));
  if (family == "quadratic") {
    const double gamma = number_field(spec, "gamma", where);
    if (gamma <= 0) throw SchemaError("driver.gamma: must be positive");
    return quadratic_driver(gamma, number_field(spec, "beta", where, 0.0));
  }
  throw SchemaError("driver.family: unknown \"" + family + "\"");
}

ControlForm parse_form(const json& spec, const std::string& where) {
  const std::string f = spec.value("form", std::string("Z1"));
  if (f == "Z1") return ControlForm::Z1;
  if (f == "Z1d") return ControlForm::Z1d;
  if (f == "S1") return ControlForm::S1;
  throw SchemaError(where + ".form: unknown \"" + f + "\"");
}

RiskHandle parse_risk(Scenario& s, const json& spec, unsigned workers) {
  const auto& tree = *s.tree;
  const std::string where = "risk";
  const std::string kind = text_field(spec, "kind", where);
  if (kind == "terminal") return terminal_expectation<Rational>(tree);
  if (kind == "worst-case") return worst_case<Rational>(tree);
  if (kind == "extreme-points") {
    if (tree.recombining()) throw SchemaError("risk: extreme points need a non-recombining tree");
    return robust_risk_measure(tree, extreme_point_set<Rational>(tree), "extreme-points", workers);
  }
  if (kind == "discounted") {
    return linear_risk_measure(tree, discounted_measure(tree, number_field(spec, "beta", where)), "discounted");
  }
  if (kind == "bsde") {
    if (!s.brownian || !s.driver) throw SchemaError("risk: \"bsde\" needs a brownian tree and a driver");
    return risk_measure_from_bsde(*s.brownian, *s.driver, s.reflected);
  }
  const ControlForm form = parse_form(spec, where);
  if (kind == "random") {
    Rng rng = Rng::stream(need_seed(s, where), 4);
    try {
      return robust_risk_measure(tree, random_dual_set(rng, tree, form, int_field(spec, "count", where, 4),
                                                       spec.value("zero_penalty", false)),
                                 "random-controls", workers);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(std::string("risk: ") + e.what());
    }
  }
  if (kind == "controls") {
    const auto& list = require(spec, "controls", where);
    if (!list.is_array() || list.empty()) throw SchemaError("risk.controls: expected a non-empty array");
    std::vector<DualControl<Rational>> controls;
    std::vector<std::optional<Rational>> penalty;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& c = list[i];
      const std::string w = "risk.controls[" + std::to_string(i) + "]";
      if (c.contains("measure")) {
        auto a = node_values(c.at("measure"), tree, w + ".measure");
        a.pre_time_zero = Rational(0);
        controls.push_back(OptionalMeasure<Rational>{a});
      } else if (c.contains("L") && c.contains("D2")) {
        S1Control<Rational> ctl{node_values(c.at("L"), tree, w + ".L"), node_values(c.at("D"), tree, w + ".D"),
                                node_values(c.at("L2"), tree, w + ".L2"), node_values(c.at("D2"), tree, w + ".D2")};
        controls.push_back(std::move(ctl));
      } else if (c.contains("L")) {
        controls.push_back(ModelDiscount<Rational>{node_values(c.at("L"), tree, w + ".L"), node_values(c.at("D"), tree, w + ".D")});
      } else if (c.contains("pr")) {
        auto pr = node_values(c.at("pr"), tree, w + ".pr");
        auto op = node_values(c.at("op"), tree, w + ".op");
        pr.pre_time_zero = op.pre_time_zero = Rational(0);
        controls.push_back(PairedMeasure<Rational>{pr, op});
      } else {
        throw SchemaError(w + ": expected measure, L/D, L/D/L2/D2 or pr/op");
      }
      const json gamma = c.value("penalty", json(0));
      penalty.push_back(gamma.is_null() ? std::nullopt : std::optional<Rational>(json_rational(gamma, w + ".penalty")));
    }
    try {
      return robust_risk_measure(tree, make_dual_set(tree, form, std::move(controls), std::move(penalty)), "controls", workers);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(std::string("risk: ") + e.what());
    }
  }
  throw SchemaError("risk.kind: unknown \"" + kind + "\"");
}

}  // namespace

const AdaptedProcess<Rational>& Scenario::process(const std::string& key) const {
  auto it = processes.find(key);
  if (it == processes.end()) throw SchemaError("processes: no process named \"" + key + "\"");
  return it->second;
}

Rational json_rational(const json& v, const std::string& where) {
  try {
    if (v.is_number_integer()) return Rational(v.get<long long>());
    if (v.is_number_float()) return Rational(v.get<double>());
    if (v.is_string()) return parse_rational(v.get<std::string>());
  } catch (const std::exception& e) {
    throw SchemaError(where + ": " + e.what());
  }
  throw SchemaError(where + ": expected a rational (\"num/den\" or a number)");
}

json rational_json(const Rational& q) { return to_text(q); }

Scenario parse_scenario(const json& doc, const ScenarioOverrides& over) {
  if (!doc.is_object()) throw SchemaError("scenario: expected a JSON object");
  if (doc.value("schema", std::string()) != "procrisk-scenario") throw SchemaError("scenario: schema must be \"procrisk-scenario\"");
  if (int_field(doc, "version", "scenario") != kScenarioVersion) {
    throw SchemaError("scenario: unsupported version (expected " + std::to_string(kScenarioVersion) + ")");
  }
  Scenario s;
  s.name = doc.value("name", std::string("unnamed"));
  if (doc.contains("seed")) {
    const auto& v = doc["seed"];
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw SchemaError("scenario.seed: expected a non-negative integer");
    s.seed = doc["seed"].get<std::uint64_t>();
  }
  if (over.seed) s.seed = over.seed;
  s.tolerance = over.tolerance.value_or(number_field(doc, "tolerance", "scenario", 1e-9));
  s.reflected = doc.value("reflected", false);
  parse_tree(s, require(doc, "tree", "scenario"), over);
  if (doc.contains("processes")) {
    const auto& procs = doc["processes"];
    if (!procs.is_object()) throw SchemaError("processes: expected an object");
    std::uint64_t tag = 10;
    for (const auto& [key, spec] : procs.items()) s.processes[key] = parse_process(s, spec, "processes." + key, tag++);
  }
  if (doc.contains("measure")) s.measure = parse_measure(s, doc["measure"]);
  if (doc.contains("driver")) s.driver = parse_driver(doc["driver"]);
  if (doc.contains("risk")) {
    s.risk_spec = doc["risk"];
    s.risk = parse_risk(s, doc["risk"], over.workers);
  }
  return s;
}

Scenario load_scenario(const std::string& path, const ScenarioOverrides& over) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open scenario file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("scenario: ") + e.what());
  }
  return parse_scenario(doc, over);
}

}  // namespace procrisk
