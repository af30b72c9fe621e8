#pragma once

#include "procrisk/decomposition.hpp"
#include "procrisk/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <thread>
#include <variant>

namespace procrisk {

template <typename Scalar>
using Functional = std::function<Scalar(const AdaptedProcess<Scalar>&)>;

template <typename Scalar>
struct DualSet;

/// ρ: R∞ → R, optionally with a conditional version ρ_t returning one value
/// per level-t node, and optionally carrying the finite dual set it came from.
template <typename Scalar>
struct RiskMeasureHandle {
  std::string name;
  Functional<Scalar> evaluate;
  std::function<LevelSlice<Scalar>(int, const AdaptedProcess<Scalar>&)> conditional_evaluate;
  std::shared_ptr<const DualSet<Scalar>> representation;
};

template <typename Scalar>
AdaptedProcess<Scalar> convert_process(const AdaptedProcess<Rational>& x) {
  AdaptedProcess<Scalar> out(x.size());
  for (NodeId n = 0; n < x.size(); ++n) out[n] = from_rational<Scalar>(x[n]);
  out.predictable = x.predictable;
  if (x.pre_time_zero) out.pre_time_zero = from_rational<Scalar>(*x.pre_time_zero);
  return out;
}

/// Z₁ control given directly as a measure.
template <typename Scalar>
struct OptionalMeasure {
  AdaptedProcess<Scalar> a;
};

/// Z₁ control given as a model/discount pair; the measure is −∫L dD.
template <typename Scalar>
struct ModelDiscount {
  AdaptedProcess<Scalar> L;
  AdaptedProcess<Scalar> D;
};

/// S¹₊ element (L, D, L′, D′): D predictable with D_0 = 1.
template <typename Scalar>
struct S1Control {
  AdaptedProcess<Scalar> L;
  AdaptedProcess<Scalar> D;
  AdaptedProcess<Scalar> L2;
  AdaptedProcess<Scalar> D2;
};

template <typename Scalar>
using DualControl = std::variant<OptionalMeasure<Scalar>, ModelDiscount<Scalar>, PairedMeasure<Scalar>, S1Control<Scalar>>;

enum class ControlForm { Z1, Z1d, S1 };

inline const char* form_name(ControlForm f) {
  switch (f) {
    case ControlForm::Z1: return "Z1";
    case ControlForm::Z1d: return "Z1d";
    case ControlForm::S1: return "S1";
  }
  return "?";
}

namespace detail {

template <typename Scalar>
std::string martingale_defect(const FiltrationTree& tree, const AdaptedProcess<Scalar>& L, const char* name) {
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    if (L[n] < Scalar(0)) return std::string(name) + " negative at node " + std::to_string(n);
    if (!tree.is_leaf(n) && one_step_expectation(tree, L, n) != L[n]) {
      return std::string(name) + " is not a martingale at node " + std::to_string(n);
    }
  }
  return {};
}

template <typename Scalar>
std::string discount_defect(const FiltrationTree& tree, const AdaptedProcess<Scalar>& L, const AdaptedProcess<Scalar>& D,
                            const char* name) {
  if (D.pre_time_zero.value_or(Scalar(1)) != Scalar(1)) return std::string(name) + "_{0-} must be 1";
  if (D[0] > Scalar(1) || D[0] < Scalar(0)) return std::string(name) + "_0 outside [0,1]";
  for (NodeId n = 1; n < tree.node_count(); ++n) {
    if (D[n] > D[tree.parent(n)] || D[n] < Scalar(0)) return std::string(name) + " increases at node " + std::to_string(n);
  }
  for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) {
    if (D[n] > Scalar(0) && L[n] != Scalar(0)) return std::string(name) + "_T > 0 where the model is alive";
  }
  return {};
}

}  // namespace detail

/// Paired measure (a^pr, a^op) represented by a control; Z₁ controls have a^pr = 0.
template <typename Scalar>
PairedMeasure<Scalar> to_paired(const FiltrationTree& tree, const DualControl<Scalar>& control) {
  const AdaptedProcess<Scalar> zero(tree.node_count());
  return std::visit(
      [&](const auto& c) -> PairedMeasure<Scalar> {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, OptionalMeasure<Scalar>>) {
          return {zero, c.a};
        } else if constexpr (std::is_same_v<T, ModelDiscount<Scalar>>) {
          return {zero, recompose(tree, c.L, c.D, DecompositionMode::optional)};
        } else if constexpr (std::is_same_v<T, PairedMeasure<Scalar>>) {
          return c;
        } else {
          AdaptedProcess<Scalar> L = c.L;
          L.pre_time_zero = L[0];
          return {recompose(tree, L, c.D, DecompositionMode::predictable),
                  recompose(tree, c.L2, c.D2, DecompositionMode::optional)};
        }
      },
      control);
}

/// Membership of a control in its declared set; empty when valid.
template <typename Scalar>
std::string control_defect(const FiltrationTree& tree, const DualControl<Scalar>& control, ControlForm form) {
  std::string defect = std::visit(
      [&](const auto& c) -> std::string {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, OptionalMeasure<Scalar>>) {
          if (form == ControlForm::S1) return "S1 form needs (L, D, L', D') controls";
          return measure_defect(tree, c.a);
        } else if constexpr (std::is_same_v<T, ModelDiscount<Scalar>>) {
          if (form == ControlForm::S1) return "S1 form needs (L, D, L', D') controls";
          if (auto e = detail::martingale_defect(tree, c.L, "L"); !e.empty()) return e;
          return detail::discount_defect(tree, c.L, c.D, "D");
        } else if constexpr (std::is_same_v<T, PairedMeasure<Scalar>>) {
          if (form != ControlForm::Z1d) return "paired controls need the Z1d form";
          if (c.a_pr[0] != Scalar(0)) return "a_pr must vanish at 0";
          if (!is_predictable(tree, c.a_pr)) return "a_pr is not predictable";
          if (auto e = measure_defect(tree, c.a_pr); !e.empty()) return "a_pr: " + e;
          return measure_defect(tree, c.a_op);
        } else {
          if (form != ControlForm::S1) return "(L, D, L', D') controls need the S1 form";
          if (c.L[0] + c.L2[0] != Scalar(1)) return "L_0 + L'_0 must be 1";
          if (auto e = detail::martingale_defect(tree, c.L, "L"); !e.empty()) return e;
          if (auto e = detail::martingale_defect(tree, c.L2, "L'"); !e.empty()) return e;
          if (c.D[0] != Scalar(1)) return "D_0 must be 1";
          if (!is_predictable(tree, c.D)) return "D is not predictable";
          if (auto e = detail::discount_defect(tree, c.L, c.D, "D"); !e.empty()) return e;
          return detail::discount_defect(tree, c.L2, c.D2, "D'");
        }
      },
      control);
  if (!defect.empty()) return defect;
  const auto pm = to_paired(tree, control);
  if (total_mass(tree, pm.a_pr) + total_mass(tree, pm.a_op) != Scalar(1)) return "control does not have unit mass";
  return {};
}

/// Finite control set with penalties; std::nullopt is +∞.
template <typename Scalar>
struct DualSet {
  ControlForm form = ControlForm::Z1;
  std::vector<DualControl<Scalar>> controls;
  std::vector<std::optional<Scalar>> penalty;
  std::vector<PairedMeasure<Scalar>> paired;
};

template <typename Scalar>
DualSet<Scalar> make_dual_set(const FiltrationTree& tree, ControlForm form, std::vector<DualControl<Scalar>> controls,
                              std::vector<std::optional<Scalar>> penalty) {
  if (controls.empty()) throw std::invalid_argument("dual set: empty control set");
  if (penalty.size() != controls.size()) throw std::invalid_argument("dual set: one penalty per control");
  DualSet<Scalar> set{form, std::move(controls), std::move(penalty), {}};
  for (std::size_t i = 0; i < set.controls.size(); ++i) {
    if (auto e = control_defect(tree, set.controls[i], form); !e.empty()) {
      throw std::invalid_argument("dual set: control " + std::to_string(i) + ": " + e);
    }
    if (set.penalty[i] && *set.penalty[i] < Scalar(0)) throw std::invalid_argument("dual set: negative penalty");
    set.paired.push_back(to_paired(tree, set.controls[i]));
  }
  return set;
}

/// inf γ over the set is 0.
template <typename Scalar>
bool penalty_normalized(const DualSet<Scalar>& set) {
  std::optional<Scalar> best;
  for (const auto& g : set.penalty) {
    if (g && (!best || *g < *best)) best = g;
  }
  return best && *best == Scalar(0);
}

template <typename Scalar>
struct RobustValue {
  Scalar value;
  std::size_t argmax = 0;
};

/// max over finite-penalty controls of a(−X) − γ(a). Ties resolve to the
/// smallest control index, so the result does not depend on `workers`.
template <typename Scalar>
RobustValue<Scalar> robust_evaluate(const FiltrationTree& tree, const AdaptedProcess<Scalar>& x, const DualSet<Scalar>& set,
                                    unsigned workers = 1) {
  const std::size_t n = set.paired.size();
  if (n == 0) throw std::invalid_argument("robust_evaluate: empty control set");
  AdaptedProcess<Scalar> neg(Vector<Scalar>(-x.values));
  std::vector<std::optional<Scalar>> values(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (!set.penalty[i]) continue;
      values[i] = paired_linear_form(tree, set.paired[i], neg) - *set.penalty[i];
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t b = 0; b < n; b += chunk) pool.emplace_back(work, b, std::min(n, b + chunk));
    for (auto& t : pool) t.join();
  }
  std::optional<RobustValue<Scalar>> best;
  for (std::size_t i = 0; i < n; ++i) {
    if (values[i] && (!best || *values[i] > best->value)) best = RobustValue<Scalar>{*values[i], i};
  }
  if (!best) throw std::invalid_argument("robust_evaluate: every control has infinite penalty");
  return *best;
}

template <typename Scalar>
RiskMeasureHandle<Scalar> robust_risk_measure(const FiltrationTree& tree, DualSet<Scalar> set, std::string name = "robust",
                                              unsigned workers = 1) {
  auto shared = std::make_shared<const DualSet<Scalar>>(std::move(set));
  RiskMeasureHandle<Scalar> rm;
  rm.name = std::move(name);
  rm.representation = shared;
  rm.evaluate = [&tree, shared, workers](const AdaptedProcess<Scalar>& x) {
    return robust_evaluate(tree, x, *shared, workers).value;
  };
  return rm;
}

/// ρ(X) = E[−X_T].
template <typename Scalar>
RiskMeasureHandle<Scalar> terminal_expectation(const FiltrationTree& tree) {
  RiskMeasureHandle<Scalar> rm;
  rm.name = "terminal-expectation";
  rm.evaluate = [&tree](const AdaptedProcess<Scalar>& x) { return -expectation_at_level(tree, x, tree.steps()); };
  rm.conditional_evaluate = [&tree](int level, const AdaptedProcess<Scalar>& x) {
    return LevelSlice<Scalar>(-conditional_expectation(tree, level_slice(tree, x, tree.steps()), level));
  };
  return rm;
}

/// ρ(X) = max over nodes of −X.
template <typename Scalar>
RiskMeasureHandle<Scalar> worst_case(const FiltrationTree&) {
  RiskMeasureHandle<Scalar> rm;
  rm.name = "worst-case";
  rm.evaluate = [](const AdaptedProcess<Scalar>& x) { return Scalar(-x.values.minCoeff()); };
  return rm;
}

/// Unit mass at node n: Δa_n = 1/P(n), zero elsewhere.
template <typename Scalar>
AdaptedProcess<Scalar> node_mass(const FiltrationTree& tree, NodeId node) {
  AdaptedProcess<Scalar> a(tree.node_count());
  const Scalar w = from_rational<Scalar>(Rational(1) / tree.probability(node));
  std::vector<char> inside(tree.node_count(), 0);
  for (NodeId n = node; n < tree.node_count(); ++n) {
    if (n == node || (tree.level(n) > tree.level(node) && inside[tree.parent(n)])) {
      inside[n] = 1;
      a[n] = w;
    }
  }
  a.pre_time_zero = Scalar(0);
  return a;
}

/// a = 1_{[τ,T]}: unit mass on the graph of τ under P.
template <typename Scalar>
AdaptedProcess<Scalar> stopping_time_measure(const FiltrationTree& tree, const StoppingTime& tau) {
  AdaptedProcess<Scalar> a(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    if (tau.stops_at(n) || (n > 0 && a[tree.parent(n)] == Scalar(1))) a[n] = Scalar(1);
  }
  a.pre_time_zero = Scalar(0);
  return a;
}

/// Dual set of node-concentrated measures with γ ≡ 0: the extreme points of Z₁.
template <typename Scalar>
DualSet<Scalar> extreme_point_set(const FiltrationTree& tree) {
  std::vector<DualControl<Scalar>> controls;
  for (NodeId n = 0; n < tree.node_count(); ++n) controls.push_back(OptionalMeasure<Scalar>{node_mass<Scalar>(tree, n)});
  std::vector<std::optional<Scalar>> penalty(controls.size(), Scalar(0));
  return make_dual_set(tree, ControlForm::Z1, std::move(controls), std::move(penalty));
}

/// Δa_k = e^{−βt_k} − e^{−βt_{k+1}} for k < N and Δa_N = e^{−βT} on every path.
inline AdaptedProcess<double> discounted_measure(const FiltrationTree& tree, double beta) {
  AdaptedProcess<double> a(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    const int k = tree.level(n);
    a[n] = k < tree.steps() ? 1.0 - std::exp(-beta * tree.time(k + 1)) : 1.0;
  }
  a.pre_time_zero = 0.0;
  return a;
}

/// Linear ρ(X) = a(−X) for a single measure.
template <typename Scalar>
RiskMeasureHandle<Scalar> linear_risk_measure(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a, std::string name) {
  std::vector<DualControl<Scalar>> controls{OptionalMeasure<Scalar>{a}};
  if constexpr (is_exact_v<Scalar>) {
    return robust_risk_measure(tree, make_dual_set(tree, ControlForm::Z1, std::move(controls), {Scalar(0)}), std::move(name));
  } else {
    // Floating masses are not exactly one, so membership is not enforced here.
    auto set = std::make_shared<DualSet<Scalar>>();
    set->form = ControlForm::Z1;
    set->controls = std::move(controls);
    set->penalty = {Scalar(0)};
    set->paired = {PairedMeasure<Scalar>{AdaptedProcess<Scalar>(tree.node_count()), a}};
    RiskMeasureHandle<Scalar> rm;
    rm.name = std::move(name);
    rm.representation = set;
    rm.evaluate = [&tree, set](const AdaptedProcess<Scalar>& x) { return robust_evaluate(tree, x, *set).value; };
    return rm;
  }
}

// ---------------------------------------------------------------- axioms

struct Verdict {
  std::string name;
  bool passed = true;
  std::size_t checked = 0;
  std::string witness;
};

struct AxiomReport {
  std::vector<Verdict> verdicts;
  bool all() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
  }
  std::size_t violations() const {
    return static_cast<std::size_t>(std::count_if(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return !v.passed; }));
  }
};

struct SampleConfig {
  std::uint64_t seed = 1;
  int samples = 20;
  int range = 5;
  double tolerance = 0.0;  // 0 means exact comparison
};

namespace detail {

template <typename Scalar>
bool within(const Scalar& a, const Scalar& b, double tol) {
  if constexpr (is_exact_v<Scalar>) {
    return tol == 0.0 ? a == b : nearly_equal(a, b, tol);
  } else {
    return std::abs(a - b) <= std::max(tol, 1e-12) * std::max(1.0, std::max(std::abs(a), std::abs(b)));
  }
}

template <typename Scalar>
bool at_most(const Scalar& a, const Scalar& b, double tol) {
  if constexpr (is_exact_v<Scalar>) {
    return tol == 0.0 ? a <= b : to_double(Scalar(a - b)) <= tol;
  } else {
    return a - b <= std::max(tol, 1e-12) * std::max(1.0, std::max(std::abs(a), std::abs(b)));
  }
}

inline void record(Verdict& v, bool ok, const std::string& witness) {
  ++v.checked;
  if (!ok && v.passed) {
    v.passed = false;
    v.witness = witness;
  }
}

}  // namespace detail

/// Cash invariance, inverse monotonicity, convexity and normalization on
/// random rational samples.
template <typename Scalar>
AxiomReport axiom_check(const FiltrationTree& tree, const RiskMeasureHandle<Scalar>& rm, const SampleConfig& cfg) {
  Rng rng(cfg.seed);
  Verdict cash{"cash-invariance"}, mono{"monotonicity"}, convex{"convexity"}, norm{"normalization"};
  const Scalar zero_value = rm.evaluate(AdaptedProcess<Scalar>(tree.node_count()));
  detail::record(norm, detail::within(zero_value, Scalar(0), cfg.tolerance), "rho(0) = " + to_text(zero_value));
  for (int s = 0; s < cfg.samples; ++s) {
    const auto x = convert_process<Scalar>(random_process(rng, tree, cfg.range));
    const auto y = convert_process<Scalar>(random_process(rng, tree, cfg.range));
    const Scalar rx = rm.evaluate(x);
    const Scalar ry = rm.evaluate(y);

    const Scalar m = from_rational<Scalar>(rng.rational(-cfg.range, cfg.range, 6));
    AdaptedProcess<Scalar> shifted(Vector<Scalar>(x.values.array() + m));
    const Scalar rs = rm.evaluate(shifted);
    detail::record(cash, detail::within(rs, Scalar(rx - m), cfg.tolerance),
                   "sample " + std::to_string(s) + ": rho(X+m) - (rho(X)-m) = " + to_text(Scalar(rs - (rx - m))));

    AdaptedProcess<Scalar> above = x;
    for (NodeId n = 0; n < tree.node_count(); ++n) {
      if (rng.coin()) above[n] += from_rational<Scalar>(rng.rational(0, 2, 3));
    }
    const Scalar ra = rm.evaluate(above);
    detail::record(mono, detail::at_most(ra, rx, cfg.tolerance),
                   "sample " + std::to_string(s) + ": rho(Y) - rho(X) = " + to_text(Scalar(ra - rx)) + " for Y >= X");

    const Scalar lambda = from_rational<Scalar>(Rational(rng.uniform_int(0, 8), 8));
    AdaptedProcess<Scalar> mix(Vector<Scalar>(lambda * x.values + (Scalar(1) - lambda) * y.values));
    const Scalar rmix = rm.evaluate(mix);
    const Scalar bound = lambda * rx + (Scalar(1) - lambda) * ry;
    detail::record(convex, detail::at_most(rmix, bound, cfg.tolerance),
                   "sample " + std::to_string(s) + ": convexity excess " + to_text(Scalar(rmix - bound)));
  }
  return AxiomReport{{cash, mono, convex, norm}};
}

struct SubadditivityReport {
  Verdict inequality{"cash-subadditivity"};
  Verdict declared_additive{"declared-cash-additivity"};
  bool strict_witness_found = false;
  std::string strict_witness;
  double max_gap = 0.0;
};

/// ρ(X + m·1_{[t,T]}) ≥ ρ(X) − m for m ≥ 0 (≤ for m ≤ 0) at random t ≥ 1.
/// When `additive_until` is set, equality is also required for t ≤ it.
template <typename Scalar>
SubadditivityReport cash_subadditivity_check(const FiltrationTree& tree, const RiskMeasureHandle<Scalar>& rm,
                                             const SampleConfig& cfg, std::optional<int> additive_until = std::nullopt) {
  SubadditivityReport r;
  Rng rng(cfg.seed ^ 0x5bd1e995ULL);
  if (tree.steps() == 0) return r;
  for (int s = 0; s < cfg.samples; ++s) {
    const auto x = convert_process<Scalar>(random_process(rng, tree, cfg.range));
    const int t = rng.uniform_int(1, tree.steps());
    const Scalar m = from_rational<Scalar>(rng.rational(-cfg.range, cfg.range, 6));
    const Scalar rx = rm.evaluate(x);
    const Scalar rs = rm.evaluate(add_payment(tree, x, t, m));
    const Scalar gap = rs - (rx - m);
    const std::string where = "t=" + std::to_string(t) + " m=" + to_text(m);
    const bool ok = m >= Scalar(0) ? detail::at_most(Scalar(-gap), Scalar(0), cfg.tolerance)
                                   : detail::at_most(gap, Scalar(0), cfg.tolerance);
    detail::record(r.inequality, ok, where + ": gap " + to_text(gap));
    r.max_gap = std::max(r.max_gap, std::abs(to_double(gap)));
    if (!detail::within(gap, Scalar(0), cfg.tolerance) && !r.strict_witness_found) {
      r.strict_witness_found = true;
      r.strict_witness = where + ": rho(X+m1) - (rho(X)-m) = " + to_text(gap);
    }
    if (additive_until && t <= *additive_until) {
      detail::record(r.declared_additive, detail::within(gap, Scalar(0), cfg.tolerance), where + ": gap " + to_text(gap));
    }
  }
  return r;
}

// ---------------------------------------------------------------- acceptance sets

template <typename Scalar>
struct AcceptanceSet {
  std::function<bool(const AdaptedProcess<Scalar>&)> contains;
};

template <typename Scalar>
AcceptanceSet<Scalar> acceptance_set(const RiskMeasureHandle<Scalar>& rm) {
  return {[rm](const AdaptedProcess<Scalar>& x) { return rm.evaluate(x) <= Scalar(0); }};
}

class BracketError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// inf{m : X + m·1_{[0,T]} ∈ A} by bisection to `tol`.
template <typename Scalar>
double capital_requirement(const AcceptanceSet<Scalar>& acc, const AdaptedProcess<Scalar>& x, double tol = 1e-12) {
  auto member = [&](double m) {
    AdaptedProcess<Scalar> shifted(Vector<Scalar>(x.values.array() + from_double<Scalar>(m)));
    return acc.contains(shifted);
  };
  double lo = -1.0, hi = 1.0;
  int expand = 0;
  while (!member(hi)) {
    lo = hi;
    hi *= 2.0;
    if (++expand > 200) throw BracketError("capital_requirement: no acceptable shift found");
  }
  expand = 0;
  while (member(lo)) {
    hi = lo;
    lo = lo < 0 ? lo * 2.0 : -1.0;
    if (++expand > 200) throw BracketError("capital_requirement: every shift is acceptable");
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (member(mid) ? hi : lo) = mid;
  }
  if (!member(hi) || member(lo)) throw BracketError("capital_requirement: membership is not monotone in cash");
  return hi;
}

// ---------------------------------------------------------------- minimal penalty

struct PenaltyBound {
  bool infinite = false;
  bool exact = false;
  double value = 0.0;
  std::string exact_text;  // lossless value when exact and finite
};

namespace detail {

/// Coefficients of the functional X ↦ a(X) on node values.
template <typename Scalar>
Vector<Scalar> functional_coefficients(const FiltrationTree& tree, const PairedMeasure<Scalar>& a) {
  const auto dpr = increments(tree, a.a_pr);
  const auto dop = increments(tree, a.a_op);
  Vector<Scalar> c(static_cast<Eigen::Index>(tree.node_count()));
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    Scalar v = from_rational<Scalar>(tree.probability(n)) * dop[n];
    for (NodeId k : tree.children(n)) v += from_rational<Scalar>(tree.probability(k)) * dpr[k];
    c[static_cast<Eigen::Index>(n)] = v;
  }
  return c;
}

template <typename Scalar>
bool is_zero(const Scalar& v) {
  if constexpr (is_exact_v<Scalar>) return v == 0;
  else return std::abs(v) < 1e-12;
}

/// Unique solution of A·λ = b when A has full column rank and the system is consistent.
template <typename Scalar>
std::optional<std::vector<Scalar>> solve_full_rank(std::vector<std::vector<Scalar>> rows) {
  if (rows.empty()) return std::nullopt;
  const std::size_t cols = rows.front().size() - 1;
  std::size_t r = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    std::size_t pivot = r;
    while (pivot < rows.size() && is_zero(rows[pivot][c])) ++pivot;
    if (pivot == rows.size()) return std::nullopt;
    std::swap(rows[r], rows[pivot]);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i == r || is_zero(rows[i][c])) continue;
      const Scalar f = rows[i][c] / rows[r][c];
      for (std::size_t j = c; j <= cols; ++j) rows[i][j] -= f * rows[r][j];
    }
    ++r;
  }
  for (std::size_t i = r; i < rows.size(); ++i) {
    if (!is_zero(rows[i][cols])) return std::nullopt;
  }
  std::vector<Scalar> out(cols);
  for (std::size_t c = 0; c < cols; ++c) out[c] = rows[c][cols] / rows[c][c];
  return out;
}

}  // namespace detail

/// α(a) = sup_X (a(−X) − ρ(X)) for ρ given by a finite dual set:
/// α(a) = min{Σλ_iγ_i : Σλ_i a_i = a, Σλ_i = 1, λ ≥ 0}, solved over the
/// vertices of the feasible polytope. Infeasible means +∞.
template <typename Scalar>
PenaltyBound minimal_penalty_exact(const FiltrationTree& tree, const DualSet<Scalar>& set, const PairedMeasure<Scalar>& a,
                                   std::size_t max_controls = 18) {
  std::vector<std::size_t> finite;
  for (std::size_t i = 0; i < set.penalty.size(); ++i) {
    if (set.penalty[i]) finite.push_back(i);
  }
  if (finite.size() > max_controls) throw std::invalid_argument("minimal_penalty: too many controls for vertex enumeration");
  std::vector<Vector<Scalar>> cols;
  for (std::size_t i : finite) cols.push_back(detail::functional_coefficients(tree, set.paired[i]));
  const auto target = detail::functional_coefficients(tree, a);
  const std::size_t rows = tree.node_count() + 1;

  std::optional<Scalar> best;
  const std::size_t k = finite.size();
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << k); ++mask) {
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask >> i & 1) support.push_back(i);
    }
    if (support.size() > rows) continue;
    std::vector<std::vector<Scalar>> sys(rows, std::vector<Scalar>(support.size() + 1));
    for (std::size_t r = 0; r + 1 < rows; ++r) {
      for (std::size_t j = 0; j < support.size(); ++j) sys[r][j] = cols[support[j]][static_cast<Eigen::Index>(r)];
      sys[r][support.size()] = target[static_cast<Eigen::Index>(r)];
    }
    for (std::size_t j = 0; j < support.size(); ++j) sys[rows - 1][j] = Scalar(1);
    sys[rows - 1][support.size()] = Scalar(1);
    auto lambda = detail::solve_full_rank(std::move(sys));
    if (!lambda) continue;
    bool nonneg = true;
    Scalar cost(0);
    for (std::size_t j = 0; j < support.size(); ++j) {
      if ((*lambda)[j] < Scalar(0)) nonneg = false;
      cost += (*lambda)[j] * *set.penalty[finite[support[j]]];
    }
    if (nonneg && (!best || cost < *best)) best = cost;
  }
  PenaltyBound out;
  out.exact = true;
  if (!best) {
    out.infinite = true;
    out.value = std::numeric_limits<double>::infinity();
  } else {
    out.value = to_double(*best);
    out.exact_text = to_text(*best);
  }
  return out;
}

struct PenaltySearch {
  double bound = 1e6;  // search box ||X|| <= bound
  double cap = 1e3;    // values above cap are reported as +∞
  int random_samples = 200;
  int refinements = 40;
  std::uint64_t seed = 7;
};

/// Lower bound for sup_{||X||<=B} (a(−X) − ρ(X)) by structured candidates,
/// random sampling and coordinate refinement.
template <typename Scalar>
PenaltyBound minimal_penalty_search(const FiltrationTree& tree, const RiskMeasureHandle<Scalar>& rm,
                                    const PairedMeasure<Scalar>& a, const PenaltySearch& cfg) {
  const auto coef = detail::functional_coefficients(tree, a);
  const std::size_t n = tree.node_count();
  auto objective = [&](const Vector<double>& x) {
    AdaptedProcess<Scalar> proc(n);
    for (NodeId i = 0; i < n; ++i) proc[i] = from_double<Scalar>(x[static_cast<Eigen::Index>(i)]);
    Scalar lin(0);
    for (NodeId i = 0; i < n; ++i) lin -= coef[static_cast<Eigen::Index>(i)] * proc[i];
    return to_double(Scalar(lin - rm.evaluate(proc)));
  };
  Rng rng(cfg.seed);
  std::vector<Vector<double>> starts;
  starts.push_back(Vector<double>::Zero(static_cast<Eigen::Index>(n)));
  for (double sign : {-1.0, 1.0}) {
    starts.push_back(Vector<double>::Constant(static_cast<Eigen::Index>(n), sign * cfg.bound));
    for (NodeId i = 0; i < n; ++i) {
      Vector<double> e = Vector<double>::Zero(static_cast<Eigen::Index>(n));
      e[static_cast<Eigen::Index>(i)] = sign * cfg.bound;
      starts.push_back(e);
    }
  }
  for (int s = 0; s < cfg.random_samples; ++s) {
    Vector<double> x(static_cast<Eigen::Index>(n));
    for (auto& v : x) v = rng.uniform(-cfg.bound, cfg.bound);
    starts.push_back(x);
  }
  double best = -std::numeric_limits<double>::infinity();
  Vector<double> arg;
  for (const auto& x : starts) {
    const double v = objective(x);
    if (v > best) {
      best = v;
      arg = x;
    }
  }
  double step = cfg.bound / 2;
  for (int r = 0; r < cfg.refinements && best <= cfg.cap; ++r, step /= 2) {
    for (NodeId i = 0; i < n; ++i) {
      for (double dir : {-1.0, 1.0}) {
        Vector<double> y = arg;
        auto& v = y[static_cast<Eigen::Index>(i)];
        v = std::clamp(v + dir * step, -cfg.bound, cfg.bound);
        const double val = objective(y);
        if (val > best) {
          best = val;
          arg = y;
        }
      }
    }
  }
  PenaltyBound out;
  if (best > cfg.cap) {
    out.infinite = true;
    out.value = std::numeric_limits<double>::infinity();
  } else {
    out.value = best;
  }
  return out;
}

template <typename Scalar>
PenaltyBound minimal_penalty(const FiltrationTree& tree, const RiskMeasureHandle<Scalar>& rm, const DualControl<Scalar>& a,
                             const PenaltySearch& cfg = {}) {
  const auto pm = to_paired(tree, a);
  if (rm.representation) return minimal_penalty_exact(tree, *rm.representation, pm);
  return minimal_penalty_search(tree, rm, pm, cfg);
}

// ---------------------------------------------------------------- cash additivity

template <typename Scalar>
struct ControlFactors {
  AdaptedProcess<Scalar> L, D, L2, D2;
};

/// (L, D, L′, D′) behind a control: measures are split through the
/// predictable and optional decompositions.
template <typename Scalar>
ControlFactors<Scalar> control_factors(const FiltrationTree& tree, const DualControl<Scalar>& control) {
  const AdaptedProcess<Scalar> zero(tree.node_count());
  const AdaptedProcess<Scalar> one(tree.node_count(), Scalar(1));
  auto optional_part = [&](const AdaptedProcess<Scalar>& a) -> std::pair<AdaptedProcess<Scalar>, AdaptedProcess<Scalar>> {
    if (total_mass(tree, a) == Scalar(0)) return {zero, one};
    auto d = decompose_optional(tree, a, false);
    return {d.L, d.D};
  };
  return std::visit(
      [&](const auto& c) -> ControlFactors<Scalar> {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, OptionalMeasure<Scalar>>) {
          auto [L2, D2] = optional_part(c.a);
          return {zero, one, L2, D2};
        } else if constexpr (std::is_same_v<T, ModelDiscount<Scalar>>) {
          return {zero, one, c.L, c.D};
        } else if constexpr (std::is_same_v<T, PairedMeasure<Scalar>>) {
          ControlFactors<Scalar> f{zero, one, zero, one};
          if (total_mass(tree, c.a_pr) != Scalar(0)) {
            auto d = decompose_predictable(tree, c.a_pr, false);
            f.L = d.L;
            f.D = d.D;
          }
          std::tie(f.L2, f.D2) = optional_part(c.a_op);
          return f;
        } else {
          return {c.L, c.D, c.L2, c.D2};
        }
      },
      control);
}

struct CashAdditivityVerdict {
  bool structural = false;
  bool behavioral = false;
  std::string witness;
  bool agree() const { return structural == behavioral; }
};

/// Structural test for every finite-penalty control: D′_{s-1} = 1 on
/// {L′_s > 0} for the optional part, and D_s = 1 on {L_s > 0} for the
/// predictable part (its jump at s is paid on X_{s-1}, before the payment).
template <typename Scalar>
std::pair<bool, std::string> structural_cash_additive(const FiltrationTree& tree, const DualSet<Scalar>& set, int s) {
  if (s < 1 || s > tree.steps()) throw std::out_of_range("cash additivity: time index must be in [1, N]");
  for (std::size_t i = 0; i < set.controls.size(); ++i) {
    if (!set.penalty[i]) continue;
    const auto f = control_factors(tree, set.controls[i]);
    for (NodeId n = tree.level_begin(s); n < tree.level_end(s); ++n) {
      const NodeId p = tree.parent(n);
      if (f.L[n] > Scalar(0) && f.D[n] != Scalar(1)) {
        return {false, "control " + std::to_string(i) + ": D_s = " + to_text(f.D[n]) + " at node " + std::to_string(n)};
      }
      if (f.L2[n] > Scalar(0) && f.D2[p] != Scalar(1)) {
        return {false, "control " + std::to_string(i) + ": D'_{s-} = " + to_text(f.D2[p]) + " at node " + std::to_string(n)};
      }
    }
  }
  return {true, {}};
}

/// Direct probe: ρ(X + m·1_{[s,T]}) = ρ(X) − m over a ladder of m and a few X.
template <typename Scalar>
std::pair<bool, std::string> probe_cash_additive(const FiltrationTree& tree, const RiskMeasureHandle<Scalar>& rm, int s,
                                                 std::uint64_t seed, double tol = 0.0) {
  Rng rng(seed);
  std::vector<AdaptedProcess<Scalar>> xs{AdaptedProcess<Scalar>(tree.node_count())};
  for (int i = 0; i < 3; ++i) xs.push_back(convert_process<Scalar>(random_process(rng, tree, 3)));
  const Rational ladder[] = {Rational(1), Rational(-1), Rational(10), Rational(-10), Rational(1000),
                             Rational(1000000), Rational(1000000000000LL)};
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const Scalar rx = rm.evaluate(xs[j]);
    for (const auto& mq : ladder) {
      const Scalar m = from_rational<Scalar>(mq);
      const auto shifted = add_payment(tree, xs[j], s, m);
      const Scalar gap = rm.evaluate(shifted) - (rx - m);
      const bool ok = is_exact_v<Scalar> && tol == 0.0
                          ? gap == Scalar(0)
                          : std::abs(to_double(gap)) <= std::max(tol, 1e-9) * std::max(1.0, std::abs(to_double(m)));
      if (!ok) return {false, "X#" + std::to_string(j) + " m=" + to_text(m) + ": gap " + to_text(gap)};
    }
  }
  return {true, {}};
}

template <typename Scalar>
CashAdditivityVerdict cash_additivity_characterization(const FiltrationTree& tree, const RiskMeasureHandle<Scalar>& rm,
                                                       int s, std::uint64_t seed = 11, double tol = 0.0) {
  if (!rm.representation) throw std::invalid_argument("cash_additivity_characterization: needs a finite dual set");
  CashAdditivityVerdict v;
  auto [structural, why] = structural_cash_additive(tree, *rm.representation, s);
  auto [behavioral, probe] = probe_cash_additive(tree, rm, s, seed, tol);
  v.structural = structural;
  v.behavioral = behavioral;
  v.witness = !why.empty() ? why : probe;
  if (!probe.empty() && !why.empty()) v.witness += "; probe " + probe;
  return v;
}

}  // namespace procrisk

namespace procrisk {

/// Random finite control set of the given form. One control has penalty 0;
/// the others get random penalties in [0, 2] (or 0 everywhere when
/// `zero_penalty`), and about a fifth of them +∞.
inline DualSet<Rational> random_dual_set(Rng& rng, const FiltrationTree& tree, ControlForm form, int count,
                                         bool zero_penalty) {
  if (form == ControlForm::S1 && tree.steps() == 0) throw std::invalid_argument("random_dual_set: S1 needs at least one step");
  std::vector<DualControl<Rational>> controls;
  std::vector<std::optional<Rational>> penalty;
  for (int i = 0; i < count; ++i) {
    switch (form) {
      case ControlForm::Z1:
        if (rng.coin(0.3)) {
          auto d = decompose_optional(tree, random_z1_measure(rng, tree));
          controls.push_back(ModelDiscount<Rational>{d.L, d.D});
        } else {
          controls.push_back(OptionalMeasure<Rational>{random_z1_measure(rng, tree)});
        }
        break;
      case ControlForm::Z1d: {
        const Rational w(rng.uniform_int(0, 4), 4);
        auto pr = random_predictable_measure(rng, tree, 0.5, false);
        auto op = random_z1_measure(rng, tree);
        pr.values *= w;
        op.values *= Rational(1) - w;
        controls.push_back(PairedMeasure<Rational>{pr, op});
        break;
      }
      case ControlForm::S1: {
        const Rational w(rng.uniform_int(0, 4), 4);
        S1Control<Rational> c;
        c.L = w == 0 ? AdaptedProcess<Rational>(tree.node_count()) : random_martingale(rng, tree, w);
        c.L2 = w == 1 ? AdaptedProcess<Rational>(tree.node_count()) : random_martingale(rng, tree, Rational(1) - w);
        c.D = random_discount(rng, tree, true, true);
        c.D2 = random_discount(rng, tree);
        for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) c.D[n] = c.D2[n] = 0;
        controls.push_back(std::move(c));
        break;
      }
    }
    if (i == 0 || zero_penalty) {
      penalty.emplace_back(Rational(0));
    } else if (rng.coin(0.2)) {
      penalty.emplace_back(std::nullopt);
    } else {
      penalty.emplace_back(rng.rational(0, 2, 5));
    }
  }
  return make_dual_set(tree, form, std::move(controls), std::move(penalty));
}

}  // namespace procrisk
