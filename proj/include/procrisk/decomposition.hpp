#pragma once

#include "procrisk/filtration.hpp"

#include <optional>
#include <string>
#include <vector>

namespace procrisk {

/// Δx at every node, with Δx_0 = x_0 − x_{0-} (x_{0-} = pre_time_zero or 0).
template <typename Scalar>
AdaptedProcess<Scalar> increments(const FiltrationTree& tree, const AdaptedProcess<Scalar>& x) {
  AdaptedProcess<Scalar> dx(tree.node_count());
  dx[0] = x[0] - x.pre_time_zero.value_or(Scalar(0));
  for (NodeId n = 1; n < tree.node_count(); ++n) dx[n] = x[n] - x[tree.parent(n)];
  return dx;
}

/// E[Y] for a level-k slice weighted by node probabilities.
template <typename Scalar>
Scalar expectation_at_level(const FiltrationTree& tree, const AdaptedProcess<Scalar>& x, int k) {
  Scalar acc(0);
  for (NodeId n = tree.level_begin(k); n < tree.level_end(k); ++n) acc += from_rational<Scalar>(tree.probability(n)) * x[n];
  return acc;
}

/// E[a_T].
template <typename Scalar>
Scalar total_mass(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a) {
  return expectation_at_level(tree, a, tree.steps());
}

/// Empty string when a is non-decreasing with a_{0-} = 0 and a_0 >= 0;
/// otherwise a description of the first offending node.
template <typename Scalar>
std::string measure_defect(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a) {
  if (a.size() != tree.node_count()) return "process is not total on the tree";
  if (a.pre_time_zero && *a.pre_time_zero != Scalar(0)) return "a_{0-} must be 0";
  if (a[0] < Scalar(0)) return "negative increment at node 0";
  for (NodeId n = 1; n < tree.node_count(); ++n) {
    if (a[n] < a[tree.parent(n)]) return "negative increment at node " + std::to_string(n);
  }
  return {};
}

template <typename Scalar>
bool is_z1(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a) {
  return measure_defect(tree, a).empty() && total_mass(tree, a) == Scalar(1);
}

/// E[Σ_k X_k Δa_k], including the jump a_0 at time 0.
template <typename Scalar>
Scalar linear_form(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a, const AdaptedProcess<Scalar>& x) {
  const auto da = increments(tree, a);
  Scalar acc(0);
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    if (da[n] != Scalar(0)) acc += from_rational<Scalar>(tree.probability(n)) * x[n] * da[n];
  }
  return acc;
}

/// a = (a^pr, a^op): a^pr predictable with a^pr_0 = 0, a^op adapted.
template <typename Scalar>
struct PairedMeasure {
  AdaptedProcess<Scalar> a_pr;
  AdaptedProcess<Scalar> a_op;
};

/// E[Σ_{k>=1} X_{k-1} Δa^pr_k + Σ_{k>=0} X_k Δa^op_k].
template <typename Scalar>
Scalar paired_linear_form(const FiltrationTree& tree, const PairedMeasure<Scalar>& a, const AdaptedProcess<Scalar>& x) {
  const auto dpr = increments(tree, a.a_pr);
  const auto dop = increments(tree, a.a_op);
  Scalar acc = dop[0] * x[0];
  for (NodeId n = 1; n < tree.node_count(); ++n) {
    const Scalar w = x[tree.parent(n)] * dpr[n] + x[n] * dop[n];
    if (w != Scalar(0)) acc += from_rational<Scalar>(tree.probability(n)) * w;
  }
  return acc;
}

/// Same value through E[Σ X_k Δ(a^pr + a^op)_k − Σ_{k>=1} ^p(ΔX)_k Δa^pr_k].
template <typename Scalar>
Scalar paired_linear_form_projected(const FiltrationTree& tree, const PairedMeasure<Scalar>& a,
                                    const AdaptedProcess<Scalar>& x) {
  const auto dpr = increments(tree, a.a_pr);
  const auto dop = increments(tree, a.a_op);
  const auto pdx = predictable_projection(tree, increments(tree, x));
  Scalar acc(0);
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    Scalar w = x[n] * (dpr[n] + dop[n]);
    if (n > 0) w -= pdx[n] * dpr[n];
    if (w != Scalar(0)) acc += from_rational<Scalar>(tree.probability(n)) * w;
  }
  return acc;
}

/// First node on each path where U vanishes.
template <typename Scalar>
StoppingTime first_zero(const FiltrationTree& tree, const AdaptedProcess<Scalar>& u) {
  StoppingTime tau;
  tau.stop.assign(tree.node_count(), 0);
  std::vector<char> done(tree.node_count(), 0);
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    const bool before = n > 0 && done[tree.parent(n)];
    if (before) {
      done[n] = 1;
    } else if (u[n] == Scalar(0) || tree.is_leaf(n)) {
      tau.stop[n] = 1;
      done[n] = 1;
    }
  }
  return tau;
}

template <typename Scalar>
struct Potential {
  AdaptedProcess<Scalar> M;  // E[a_T | F_k]
  AdaptedProcess<Scalar> U;  // M − a
  StoppingTime tau;
};

template <typename Scalar>
Potential<Scalar> potential(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a) {
  if (auto defect = measure_defect(tree, a); !defect.empty()) throw std::invalid_argument("potential: " + defect);
  Potential<Scalar> p;
  p.M = closing_martingale(tree, RandomVariable<Scalar>(level_slice(tree, a, tree.steps())));
  p.U = AdaptedProcess<Scalar>(p.M.values - a.values);
  p.tau = first_zero(tree, p.U);
  return p;
}

enum class DecompositionMode { optional, predictable };

template <typename Scalar>
struct Decomposition {
  DecompositionMode mode = DecompositionMode::optional;
  Scalar mass;
  AdaptedProcess<Scalar> L;
  AdaptedProcess<Scalar> D;
  AdaptedProcess<Scalar> M;
  AdaptedProcess<Scalar> U;
  StoppingTime tau;
};

namespace detail {

template <typename Scalar>
Potential<Scalar> checked_potential(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a, bool require_z1,
                                    const char* who, Scalar& mass) {
  if (tree.recombining()) throw std::logic_error(std::string(who) + ": requires a non-recombining tree");
  auto pot = potential(tree, a);
  mass = pot.M[0];
  if (require_z1 && mass != Scalar(1)) {
    throw std::invalid_argument(std::string(who) + ": E[a_T] = " + to_text(mass) + " is not 1 (pass require_z1 = false)");
  }
  if (!(mass > Scalar(0))) throw std::invalid_argument(std::string(who) + ": total mass must be positive");
  return pot;
}

}  // namespace detail

/// Multiplicative decomposition U = L·D with L a non-negative martingale
/// (L_0 = E[a_T]) and D non-increasing (D_{0-} = 1):
///   D_k = D_{k-1} U_k / (U_k + Δa_k)   where U_k + Δa_k > 0, else frozen,
///   L_k = L_{k-1} (U_k + Δa_k) / U_{k-1}   where U_{k-1} > 0, else frozen.
template <typename Scalar>
Decomposition<Scalar> decompose_optional(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a,
                                         bool require_z1 = true) {
  Decomposition<Scalar> d;
  auto pot = detail::checked_potential(tree, a, require_z1, "decompose_optional", d.mass);
  const auto& U = pot.U;
  const auto da = increments(tree, a);
  d.L = AdaptedProcess<Scalar>(tree.node_count());
  d.D = AdaptedProcess<Scalar>(tree.node_count());
  d.L[0] = d.mass;
  d.D[0] = U[0] / d.mass;
  for (NodeId n = 1; n < tree.node_count(); ++n) {
    const NodeId p = tree.parent(n);
    const Scalar pre = U[n] + da[n];
    d.L[n] = U[p] > Scalar(0) ? Scalar(d.L[p] * pre / U[p]) : d.L[p];
    d.D[n] = pre > Scalar(0) ? Scalar(d.D[p] * U[n] / pre) : d.D[p];
  }
  d.L.pre_time_zero = d.mass;
  d.D.pre_time_zero = Scalar(1);
  d.M = std::move(pot.M);
  d.U = std::move(pot.U);
  d.tau = std::move(pot.tau);
  return d;
}

/// Same decomposition through the additive form: L_k = (U_k + Δa_k)/D_{k-1}
/// and D_k = D_{k-1} − Δa_k/L_k, each frozen where its divisor vanishes.
template <typename Scalar>
Decomposition<Scalar> decompose_optional_additive(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a,
                                                  bool require_z1 = true) {
  Decomposition<Scalar> d;
  auto pot = detail::checked_potential(tree, a, require_z1, "decompose_optional_additive", d.mass);
  const auto da = increments(tree, a);
  d.L = AdaptedProcess<Scalar>(tree.node_count());
  d.D = AdaptedProcess<Scalar>(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    const Scalar d_before = n == 0 ? Scalar(1) : d.D[tree.parent(n)];
    const Scalar l_before = n == 0 ? d.mass : d.L[tree.parent(n)];
    d.L[n] = d_before > Scalar(0) ? Scalar((pot.U[n] + da[n]) / d_before) : l_before;
    d.D[n] = d.L[n] > Scalar(0) ? Scalar(d_before - da[n] / d.L[n]) : d_before;
  }
  d.L.pre_time_zero = d.mass;
  d.D.pre_time_zero = Scalar(1);
  d.M = std::move(pot.M);
  d.U = std::move(pot.U);
  d.tau = std::move(pot.tau);
  return d;
}

/// Predictable D for a predictable a, with ^pU_k = U_{k-1} − Δa_k:
///   D_k = D_{k-1} ^pU_k / U_{k-1},  L_k = L_{k-1} U_k / ^pU_k,
/// and U_{0-} = E[a_T], so D_0 = 1 − a_0/E[a_T].
template <typename Scalar>
Decomposition<Scalar> decompose_predictable(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a,
                                            bool require_z1 = true) {
  if (!is_predictable(tree, a)) throw std::invalid_argument("decompose_predictable: input is not predictable");
  Decomposition<Scalar> d;
  d.mode = DecompositionMode::predictable;
  auto pot = detail::checked_potential(tree, a, require_z1, "decompose_predictable", d.mass);
  const auto& U = pot.U;
  const auto da = increments(tree, a);
  d.L = AdaptedProcess<Scalar>(tree.node_count());
  d.D = AdaptedProcess<Scalar>(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    const Scalar u_before = n == 0 ? d.mass : U[tree.parent(n)];
    const Scalar d_before = n == 0 ? Scalar(1) : d.D[tree.parent(n)];
    const Scalar l_before = n == 0 ? d.mass : d.L[tree.parent(n)];
    const Scalar pu = u_before - da[n];
    d.D[n] = u_before > Scalar(0) ? Scalar(d_before * pu / u_before) : d_before;
    d.L[n] = pu > Scalar(0) ? Scalar(l_before * U[n] / pu) : l_before;
  }
  d.L.pre_time_zero = d.mass;
  d.D.pre_time_zero = Scalar(1);
  d.D.predictable = true;
  d.M = std::move(pot.M);
  d.U = std::move(pot.U);
  d.tau = std::move(pot.tau);
  return d;
}

/// a_k = −Σ_{j<=k} L_j ΔD_j (optional) or −Σ_{j<=k} L_{j-1} ΔD_j (predictable),
/// with D_{0-} = 1 and L_{0-} taken from L.pre_time_zero (default L_0).
template <typename Scalar>
AdaptedProcess<Scalar> recompose(const FiltrationTree& tree, const AdaptedProcess<Scalar>& L,
                                 const AdaptedProcess<Scalar>& D, DecompositionMode mode) {
  AdaptedProcess<Scalar> a(tree.node_count());
  const Scalar d_minus = D.pre_time_zero.value_or(Scalar(1));
  const Scalar l_minus = L.pre_time_zero.value_or(L[0]);
  a[0] = -(mode == DecompositionMode::optional ? L[0] : l_minus) * (D[0] - d_minus);
  for (NodeId n = 1; n < tree.node_count(); ++n) {
    const NodeId p = tree.parent(n);
    const Scalar& weight = mode == DecompositionMode::optional ? L[n] : L[p];
    a[n] = a[p] - weight * (D[n] - D[p]);
  }
  a.pre_time_zero = Scalar(0);
  return a;
}

template <typename Scalar>
AdaptedProcess<Scalar> recompose(const FiltrationTree& tree, const Decomposition<Scalar>& d) {
  return recompose(tree, d.L, d.D, d.mode);
}

struct DecompositionReport {
  bool martingale = false;        // 1) L >= 0 and E[L_{k+1}|F_k] = L_k
  bool discount = false;          // 2) D non-increasing, D_{0-} = 1, {D_T > 0} ⊆ {L_T = 0}
  bool class_d = false;           // 3) sup over stopping times of E|L_τ D_τ| finite
  bool recomposition = false;     // 4) / 4')
  bool support = false;           // 5) / 5')
  bool multiplicative = false;    // U = L·D
  bool unique_before_tau = false; // agreement with the additive construction on [0, τ)
  bool unique_everywhere = false;
  std::vector<std::string> witnesses;

  bool conditions_1_to_4() const { return martingale && discount && class_d && recomposition; }
  bool all() const {
    return conditions_1_to_4() && support && multiplicative && unique_before_tau && unique_everywhere;
  }
};

/// Largest E[|L_τ D_τ|] over stopping times, by backward induction.
template <typename Scalar>
Scalar class_d_bound(const FiltrationTree& tree, const AdaptedProcess<Scalar>& L, const AdaptedProcess<Scalar>& D) {
  AdaptedProcess<Scalar> v(tree.node_count());
  for (NodeId n = tree.node_count(); n-- > 0;) {
    const Scalar here = abs_value<Scalar>(L[n] * D[n]);
    if (tree.is_leaf(n)) {
      v[n] = here;
    } else {
      const Scalar cont = one_step_expectation(tree, v, n);
      v[n] = cont > here ? cont : here;
    }
  }
  return v[0];
}

template <typename Scalar>
DecompositionReport verify_decomposition(const FiltrationTree& tree, const Decomposition<Scalar>& d,
                                         const AdaptedProcess<Scalar>& a) {
  DecompositionReport r;
  const bool pred = d.mode == DecompositionMode::predictable;
  const auto& L = d.L;
  const auto& D = d.D;
  auto fail = [&](bool& flag, const std::string& what) {
    if (flag) r.witnesses.push_back(what);
    flag = false;
  };

  r.martingale = true;
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    if (L[n] < Scalar(0)) { fail(r.martingale, "L negative at node " + std::to_string(n)); break; }
    if (!tree.is_leaf(n) && one_step_expectation(tree, L, n) != L[n]) {
      fail(r.martingale, "L martingale step broken at node " + std::to_string(n));
      break;
    }
  }

  r.discount = D.pre_time_zero.value_or(Scalar(1)) == Scalar(1) && D[0] <= Scalar(1) && D[0] >= Scalar(0);
  if (!r.discount) r.witnesses.push_back("D_0 outside [0, D_{0-}] or D_{0-} != 1");
  for (NodeId n = 1; n < tree.node_count() && r.discount; ++n) {
    if (D[n] > D[tree.parent(n)] || D[n] < Scalar(0)) fail(r.discount, "D increases at node " + std::to_string(n));
  }
  for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count() && r.discount; ++n) {
    if (D[n] > Scalar(0) && L[n] != Scalar(0)) fail(r.discount, "D_T > 0 and L_T > 0 at leaf " + std::to_string(n));
  }
  if (pred && r.discount && !is_predictable(tree, D)) fail(r.discount, "D is not predictable");

  const Scalar bound = class_d_bound(tree, L, D);
  r.class_d = std::isfinite(to_double(bound));

  const auto back = recompose(tree, d);
  r.recomposition = back.values == a.values;
  if (!r.recomposition) {
    for (NodeId n = 0; n < tree.node_count(); ++n) {
      if (back[n] != a[n]) { r.witnesses.push_back("recomposition differs at node " + std::to_string(n)); break; }
    }
  }

  r.support = true;
  for (NodeId n = 0; n < tree.node_count() && r.support; ++n) {
    const Scalar l_before = n == 0 ? d.mass : L[tree.parent(n)];
    const Scalar d_before = n == 0 ? Scalar(1) : D[tree.parent(n)];
    if (n > 0) {
      const Scalar& d_gate = pred ? D[n] : d_before;
      if (d_gate == Scalar(0) && L[n] != l_before) fail(r.support, "L moves after D hit 0 at node " + std::to_string(n));
    }
    const Scalar& l_gate = pred ? l_before : L[n];
    if (l_gate == Scalar(0) && D[n] != d_before) fail(r.support, "D moves after L hit 0 at node " + std::to_string(n));
  }

  r.multiplicative = true;
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    if (d.U[n] != L[n] * D[n]) { fail(r.multiplicative, "U != L*D at node " + std::to_string(n)); break; }
  }

  if (pred) {
    // Predictable and optional constructions agree only without common jumps;
    // uniqueness is checked against a rerun of the same recursion.
    const auto again = decompose_predictable(tree, a, false);
    r.unique_everywhere = again.L.values == L.values && again.D.values == D.values;
    r.unique_before_tau = r.unique_everywhere;
  } else {
    const auto other = decompose_optional_additive(tree, a, false);
    r.unique_before_tau = true;
    r.unique_everywhere = true;
    for (NodeId n = 0; n < tree.node_count(); ++n) {
      const bool same = other.L[n] == L[n] && other.D[n] == D[n];
      if (!same) r.unique_everywhere = false;
      if (!same && d.U[n] > Scalar(0)) r.unique_before_tau = false;
    }
  }
  if (!r.unique_before_tau) r.witnesses.push_back("second construction differs before tau");
  else if (!r.unique_everywhere) r.witnesses.push_back("second construction differs after tau");
  return r;
}

/// Σ ΔM·Δa over each path, as a leaf slice.
template <typename Scalar>
RandomVariable<Scalar> pathwise_bracket(const FiltrationTree& tree, const AdaptedProcess<Scalar>& a) {
  const auto M = closing_martingale(tree, RandomVariable<Scalar>(level_slice(tree, a, tree.steps())));
  const auto dm = increments(tree, M);
  const auto da = increments(tree, a);
  AdaptedProcess<Scalar> acc(tree.node_count());
  for (NodeId n = 1; n < tree.node_count(); ++n) acc[n] = acc[tree.parent(n)] + dm[n] * da[n];
  return level_slice(tree, acc, tree.steps());
}

/// Q with dQ/dP = L_T / L_0, kept as conditional edge probabilities on the
/// original tree (edges leaving the support of L carry probability 0, so Q is
/// not itself a full-support FiltrationTree).
template <typename Scalar>
struct TiltedMeasure {
  Scalar start;
  std::vector<Scalar> edge;  // Q(child | parent), indexed by child node
  std::vector<Scalar> node;  // Q(node)
};

template <typename Scalar>
TiltedMeasure<Scalar> associate_measure(const FiltrationTree& tree, const AdaptedProcess<Scalar>& L) {
  for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) {
    if (L[n] < Scalar(0)) throw std::invalid_argument("associate_measure: L_T negative at node " + std::to_string(n));
  }
  if (!(L[0] > Scalar(0))) throw std::invalid_argument("associate_measure: L_0 must be positive");
  for (NodeId n = 0; n < tree.level_begin(tree.steps()); ++n) {
    if (one_step_expectation(tree, L, n) != L[n]) throw std::invalid_argument("associate_measure: L is not a martingale");
  }
  TiltedMeasure<Scalar> q;
  q.start = L[0];
  q.edge.assign(tree.node_count(), Scalar(0));
  q.node.assign(tree.node_count(), Scalar(0));
  q.edge[0] = Scalar(1);
  q.node[0] = Scalar(1);
  for (NodeId n = 1; n < tree.node_count(); ++n) {
    const NodeId p = tree.parent(n);
    const Scalar pr = from_rational<Scalar>(tree.edge_probability(n));
    q.edge[n] = L[p] > Scalar(0) ? Scalar(pr * L[n] / L[p]) : pr;
    q.node[n] = q.node[p] * q.edge[n];
  }
  return q;
}

/// E[Σ X L ΔD] under P.
template <typename Scalar>
Scalar weighted_discount_form(const FiltrationTree& tree, const AdaptedProcess<Scalar>& x,
                              const AdaptedProcess<Scalar>& L, const AdaptedProcess<Scalar>& D) {
  const auto dd = increments(tree, D);
  Scalar acc = x[0] * L[0] * (D[0] - D.pre_time_zero.value_or(Scalar(1)));
  for (NodeId n = 1; n < tree.node_count(); ++n) acc += from_rational<Scalar>(tree.probability(n)) * x[n] * L[n] * dd[n];
  return acc;
}

/// L_0 · E_Q[Σ X ΔD].
template <typename Scalar>
Scalar tilted_discount_form(const FiltrationTree& tree, const TiltedMeasure<Scalar>& q, const AdaptedProcess<Scalar>& x,
                            const AdaptedProcess<Scalar>& D) {
  Scalar acc = x[0] * (D[0] - D.pre_time_zero.value_or(Scalar(1)));
  for (NodeId n = 1; n < tree.node_count(); ++n) {
    if (q.node[n] != Scalar(0)) acc += q.node[n] * x[n] * (D[n] - D[tree.parent(n)]);
  }
  return q.start * acc;
}

}  // namespace procrisk
