#pragma once

#include "procrisk/bsde.hpp"

#include <json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>

namespace procrisk {

inline constexpr int kScenarioVersion = 1;

/// Malformed or inconsistent scenario input.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using RiskHandle = std::variant<RiskMeasureHandle<Rational>, RiskMeasureHandle<double>>;

struct Scenario {
  std::string name;
  std::optional<std::uint64_t> seed;
  double tolerance = 1e-9;
  bool reflected = false;
  std::shared_ptr<const FiltrationTree> tree;
  std::shared_ptr<const BrownianTree> brownian;  // set for "brownian" trees; tree then points into it
  std::map<std::string, AdaptedProcess<Rational>> processes;
  std::optional<AdaptedProcess<Rational>> measure;
  std::optional<Driver> driver;
  std::optional<RiskHandle> risk;
  nlohmann::ordered_json risk_spec;

  const AdaptedProcess<Rational>& process(const std::string& name = "x") const;
};

struct ScenarioOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<double> tolerance;
  unsigned workers = 1;
};

Scenario parse_scenario(const nlohmann::json& doc, const ScenarioOverrides& over = {});
Scenario load_scenario(const std::string& path, const ScenarioOverrides& over = {});

Rational json_rational(const nlohmann::json& v, const std::string& where);
nlohmann::json rational_json(const Rational& q);

}  // namespace procrisk
