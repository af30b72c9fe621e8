#include "procrisk/bsde.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>

namespace procrisk {

namespace {

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

double expectation(const FiltrationTree& tree, const AdaptedProcess<double>& v, NodeId n) {
  double acc = 0;
  auto kids = tree.children(n);
  auto probs = tree.child_probabilities(n);
  for (std::size_t j = 0; j < kids.size(); ++j) acc += to_double(probs[j]) * v[kids[j]];
  return acc;
}

double z_component(const BrownianTree& bt, const AdaptedProcess<double>& v, NodeId n) {
  double acc = 0;
  auto kids = bt.tree.children(n);
  auto probs = bt.tree.child_probabilities(n);
  for (std::size_t j = 0; j < kids.size(); ++j) {
    acc += to_double(probs[j]) * v[kids[j]] * BrownianTree::increment_sign(j);
  }
  return acc / bt.sqrt_dt();
}

void guard(const BrownianTree& bt, const Driver& g) {
  if (g.lipschitz * bt.dt() > 0.5) {
    throw SolverGuard("contraction guard: dt * C_Lip = " + to_text(g.lipschitz * bt.dt()) + " > 1/2");
  }
}

/// y = c + g(t, y + shift, z)·Δt.
double implicit_step(const Driver& g, double t, double c, double shift, double z, double dt, const SolverOptions& opt,
                     int& iterations, bool& newton) {
  double y = c;
  for (int i = 1; i <= opt.max_iterations; ++i) {
    const double next = c + g.eval(t, y + shift, z) * dt;
    iterations = std::max(iterations, i);
    if (std::abs(next - y) <= opt.tolerance * std::max(1.0, std::abs(next))) return next;
    y = next;
  }
  newton = true;
  y = c;
  for (int i = 0; i < 60; ++i) {
    const double h = 1e-7 * std::max(1.0, std::abs(y));
    const double f = y - c - g.eval(t, y + shift, z) * dt;
    const double fp = 1.0 - (g.eval(t, y + h + shift, z) - g.eval(t, y - h + shift, z)) / (2 * h) * dt;
    if (fp == 0.0 || !std::isfinite(fp)) break;
    const double next = y - f / fp;
    if (std::abs(next - y) <= opt.tolerance * std::max(1.0, std::abs(next))) return next;
    y = next;
  }
  throw ConvergenceError("implicit step did not converge at t = " + to_text(t));
}

BsdeSolution backward(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                      const SolverOptions& opt, bool reflected) {
  const auto& tree = bt.tree;
  if (x.size() != tree.node_count()) throw std::invalid_argument("solver: process size does not match tree");
  guard(bt, g);
  const std::size_t nodes = tree.node_count();
  BsdeSolution sol;
  sol.reflected = reflected;
  sol.Y = AdaptedProcess<double>(nodes);
  sol.Z = AdaptedProcess<double>(nodes);
  sol.candidate = AdaptedProcess<double>(nodes);
  const double dt = bt.dt();
  for (NodeId n = tree.level_begin(tree.steps()); n < nodes; ++n) {
    sol.Y[n] = -x[n];
    sol.candidate[n] = -x[n];
  }
  for (int k = tree.steps() - 1; k >= 0; --k) {
    const double t = tree.time(k);
    for (NodeId n = tree.level_begin(k); n < tree.level_end(k); ++n) {
      const double c = expectation(tree, sol.Y, n);
      const double z = z_component(bt, sol.Y, n);
      const double y = implicit_step(g, t, c, opt.classical ? 0.0 : x[n], z, dt, opt, sol.max_iterations,
                                     sol.newton_used);
      sol.Z[n] = z;
      sol.candidate[n] = y;
      sol.Y[n] = reflected ? std::max(y, -x[n]) : y;
    }
  }
  if (!tree.recombining()) {
    sol.K = AdaptedProcess<double>(nodes);
    for (NodeId n = 1; n < nodes; ++n) {
      const NodeId p = tree.parent(n);
      sol.K[n] = sol.K[p] + (sol.Y[p] - sol.candidate[p]);
    }
  }
  return sol;
}

}  // namespace

BrownianTree build_brownian_tree(int steps, double horizon, bool lattice, int dims) {
  if (dims != 1) throw std::invalid_argument("build_brownian_tree: only d = 1 is supported");
  if (steps < 1) throw std::invalid_argument("build_brownian_tree: need at least one step");
  BrownianTree bt{lattice ? FiltrationTree::binomial_lattice(steps, Rational(1, 2), horizon)
                          : FiltrationTree::uniform(steps, 2, horizon),
                  {}};
  bt.W = Vector<double>::Zero(static_cast<Eigen::Index>(bt.tree.node_count()));
  const double h = bt.sqrt_dt();
  for (NodeId n = 0; n < bt.tree.node_count(); ++n) {
    auto kids = bt.tree.children(n);
    for (std::size_t j = 0; j < kids.size(); ++j) bt.W[kids[j]] = bt.W[n] + BrownianTree::increment_sign(j) * h;
  }
  return bt;
}

Driver zero_driver() {
  Driver g;
  g.family = "zero";
  g.eval = [](double, double, double) { return 0.0; };
  g.conjugate = [](double, double b, double mu) { return b == 0.0 && mu == 0.0 ? 0.0 : kInfinity; };
  g.maximizer = [](double, double, double) { return std::pair{0.0, 0.0}; };
  return g;
}

Driver linear_driver(double beta, double theta) {
  Driver g;
  g.family = "linear";
  g.eval = [=](double, double y, double z) { return theta * std::abs(z) - beta * y; };
  g.lipschitz = std::max(beta, theta);
  g.beta_bound = beta;
  g.conjugate = [=](double, double b, double mu) {
    return b == beta && std::abs(mu) <= theta ? 0.0 : kInfinity;
  };
  g.maximizer = [=](double, double, double z) { return std::pair{beta, -theta * sign(z)}; };
  g.parameters = {{"beta", beta}, {"theta", theta}};
  return g;
}

Driver quadratic_driver(double gamma, double beta) {
  if (gamma <= 0) throw std::invalid_argument("quadratic_driver: gamma must be positive");
  Driver g;
  g.family = "quadratic";
  g.eval = [=](double, double y, double z) { return 0.5 * gamma * z * z - beta * y; };
  g.lipschitz = beta;
  g.growth = std::max(0.5 * gamma, beta);
  g.beta_bound = beta;
  g.quadratic = true;
  g.conjugate = [=](double, double b, double mu) { return b == beta ? mu * mu / (2 * gamma) : kInfinity; };
  g.maximizer = [=](double, double, double z) { return std::pair{beta, -gamma * z}; };
  g.parameters = {{"gamma", gamma}, {"beta", beta}};
  return g;
}

Driver custom_driver(std::function<double(double, double, double)> eval, double lipschitz, double beta_bound) {
  Driver g;
  g.eval = std::move(eval);
  g.lipschitz = lipschitz;
  g.beta_bound = beta_bound;
  return g;
}

DriverFlags check_driver(const Driver& g, const FiltrationTree& tree, std::uint64_t seed, int samples) {
  DriverFlags f;
  Rng rng(seed);
  const double eps = 1e-12;
  for (int k = 0; k <= tree.steps(); ++k) {
    const double v = g.eval(tree.time(k), 0.0, 0.0);
    detail::record(f.h4, std::abs(v) <= eps, "g(" + to_text(tree.time(k)) + ",0,0) = " + to_text(v));
  }
  for (int s = 0; s < samples; ++s) {
    const double t = tree.time(rng.uniform_int(0, tree.steps()));
    const double y1 = rng.uniform(-5, 5), y2 = rng.uniform(-5, 5);
    const double z1 = rng.uniform(-5, 5), z2 = rng.uniform(-5, 5);
    const double lo = std::min(y1, y2), hi = std::max(y1, y2);
    const double glo = g.eval(t, lo, z1), ghi = g.eval(t, hi, z1);
    detail::record(f.h3, ghi <= glo + eps, "g not non-increasing in y at t=" + to_text(t));
    const double g1 = g.eval(t, y1, z1), g2 = g.eval(t, y2, z2);
    const double gm = g.eval(t, 0.5 * (y1 + y2), 0.5 * (z1 + z2));
    detail::record(f.h2, gm <= 0.5 * (g1 + g2) + eps * (1 + std::abs(g1) + std::abs(g2)),
                   "midpoint convexity excess " + to_text(gm - 0.5 * (g1 + g2)));
    if (g.quadratic) {
      const double bound = g.growth * (1 + std::abs(y1) + z1 * z1);
      detail::record(f.h1, std::abs(g1) <= bound + eps, "growth exceeded at y=" + to_text(y1) + " z=" + to_text(z1));
    } else {
      const double d = std::abs(y1 - y2) + std::abs(z1 - z2);
      detail::record(f.h1, std::abs(g1 - g2) <= g.lipschitz * d + eps * (1 + d),
                     "difference quotient " + to_text(std::abs(g1 - g2) / d) + " > " + to_text(g.lipschitz));
    }
  }
  return f;
}

BsdeSolution solve_bsde(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                        const SolverOptions& opt) {
  return backward(bt, x, g, opt, false);
}

BsdeSolution solve_rbsde(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                         const SolverOptions& opt) {
  return backward(bt, x, g, opt, true);
}

SolutionCheck check_solution(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                             const BsdeSolution& sol) {
  const auto& tree = bt.tree;
  SolutionCheck c;
  const double bound = sup_norm(x);
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    c.bound_excess = std::max(c.bound_excess, std::abs(sol.Y[n]) - bound);
    if (sol.Y[n] < -x[n]) c.obstacle_ok = c.obstacle_ok && !sol.reflected;
    if (tree.is_leaf(n)) continue;
    const double y = sol.candidate[n];
    const double r = y - expectation(tree, sol.Y, n) - g.eval(tree.time(tree.level(n)), y + x[n], sol.Z[n]) * bt.dt();
    c.identity_residual = std::max(c.identity_residual, std::abs(r));
    const double push = sol.Y[n] - sol.candidate[n];
    if (push < 0) c.k_monotone = false;
    c.complementarity = std::max(c.complementarity, std::abs((sol.Y[n] + x[n]) * push));
  }
  c.bound_excess = std::max(c.bound_excess, 0.0);
  return c;
}

double conjugate_grid(const Driver& g, double t, double beta, double mu, const ConjugateGrid& grid) {
  const double radius = grid.radius > 0 ? grid.radius : 10.0 * (1.0 + g.lipschitz + g.growth + g.beta_bound);
  const int half = std::max(1, grid.points / 2);
  auto sup_on = [&](double r) {
    double best = -kInfinity;
    for (int i = -half; i <= half; ++i) {
      const double y = r * i / half;
      for (int j = -half; j <= half; ++j) {
        const double z = r * j / half;
        best = std::max(best, -beta * y - mu * z - g.eval(t, y, z));
      }
    }
    return best;
  };
  const double inner = sup_on(radius);
  const double outer = sup_on(2 * radius);
  if (inner > grid.cap || outer > inner + 1e-9 * (1 + std::abs(inner))) return kInfinity;
  return inner;
}

double conjugate(const Driver& g, double t, double beta, double mu) {
  return g.conjugate ? g.conjugate(t, beta, mu) : conjugate_grid(g, t, beta, mu);
}

DualControlBSDE constant_control(const FiltrationTree& tree, double beta, double mu) {
  return {AdaptedProcess<double>(tree.node_count(), beta), AdaptedProcess<double>(tree.node_count(), mu), {}};
}

OptimalControl optimal_control(const BrownianTree& bt, const AdaptedProcess<double>& x, const BsdeSolution& sol,
                               const Driver& g, int beta_points, int mu_points) {
  const auto& tree = bt.tree;
  OptimalControl out{constant_control(tree, 0.0, 0.0), 0.0};
  const double mu_range = std::max(1.0, g.lipschitz);
  const ConjugateGrid coarse{0.0, 101, 1e6};
  for (int k = 0; k < tree.steps(); ++k) {
    const double t = tree.time(k);
    std::vector<std::array<double, 3>> table;  // β, μ, g*
    if (!g.maximizer) {
      for (int i = 0; i < beta_points; ++i) {
        const double b = beta_points == 1 ? 0.0 : g.beta_bound * i / (beta_points - 1);
        for (int j = 0; j < mu_points; ++j) {
          const double m = mu_points == 1 ? 0.0 : mu_range * (2.0 * j / (mu_points - 1) - 1.0);
          const double gs = g.conjugate ? g.conjugate(t, b, m) : conjugate_grid(g, t, b, m, coarse);
          if (std::isfinite(gs)) table.push_back({b, m, gs});
        }
      }
    }
    for (NodeId n = tree.level_begin(k); n < tree.level_end(k); ++n) {
      const double u = sol.Y[n] + x[n];
      const double z = sol.Z[n];
      double b = 0, m = 0, value = -kInfinity;
      if (g.maximizer) {
        std::tie(b, m) = g.maximizer(t, u, z);
        value = -b * u - m * z - conjugate(g, t, b, m);
      } else {
        for (const auto& [tb, tm, gs] : table) {
          const double v = -tb * u - tm * z - gs;
          if (v > value) {
            value = v;
            b = tb;
            m = tm;
          }
        }
      }
      out.control.beta[n] = b;
      out.control.mu[n] = m;
      out.max_gap = std::max(out.max_gap, std::abs(g.eval(t, u, z) - value));
    }
  }
  return out;
}

namespace {

template <typename Stop>
AdaptedProcess<double> dual_backward(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                                     const DualControlBSDE& c, Stop&& stop) {
  const auto& tree = bt.tree;
  const double dt = bt.dt(), h = bt.sqrt_dt();
  AdaptedProcess<double> v(tree.node_count());
  for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) v[n] = -x[n];
  for (int k = tree.steps() - 1; k >= 0; --k) {
    const double t = tree.time(k);
    for (NodeId n = tree.level_begin(k); n < tree.level_end(k); ++n) {
      const double b = c.beta[n], mu = c.mu[n];
      if (std::abs(mu) * h >= 1.0) {
        throw SolverGuard("tilt leaves (0,1): |mu| sqrt(dt) = " + to_text(std::abs(mu) * h));
      }
      double eq = 0;
      auto kids = tree.children(n);
      auto probs = tree.child_probabilities(n);
      for (std::size_t j = 0; j < kids.size(); ++j) {
        eq += to_double(probs[j]) * (1.0 - mu * BrownianTree::increment_sign(j) * h) * v[kids[j]];
      }
      const double gs = conjugate(g, t, b, mu);
      const double cont = std::isfinite(gs) ? (eq - (b * x[n] + gs) * dt) / (1.0 + b * dt) : -kInfinity;
      v[n] = stop(n, cont);
    }
  }
  return v;
}

}  // namespace

AdaptedProcess<double> dual_values_er(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                                      const DualControlBSDE& c) {
  return dual_backward(bt, x, g, c, [](NodeId, double cont) { return cont; });
}

double dual_evaluate_er(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                        const DualControlBSDE& c, NodeId node) {
  return dual_values_er(bt, x, g, c)[node];
}

double dual_evaluate_reflected(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                               const DualControlBSDE& c, NodeId node) {
  if (!c.tau) return dual_evaluate_er(bt, x, g, c, node);
  const auto& tau = *c.tau;
  return dual_backward(bt, x, g, c, [&](NodeId n, double cont) { return tau.stops_at(n) ? -x[n] : cont; })[node];
}

double dual_reflected_sup_tau(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                              const DualControlBSDE& c) {
  return dual_backward(bt, x, g, c, [&](NodeId n, double cont) { return std::max(-x[n], cont); })[0];
}

StoppingTime epsilon_optimal_tau(const BrownianTree& bt, const AdaptedProcess<double>& x, const BsdeSolution& sol,
                                 double eps) {
  const auto& tree = bt.tree;
  StoppingTime tau;
  tau.stop.assign(tree.node_count(), 0);
  auto hit = [&](NodeId n) { return tree.is_leaf(n) || sol.Y[n] <= -x[n] + eps; };
  if (tree.recombining()) {
    for (NodeId n = 0; n < tree.node_count(); ++n) tau.stop[n] = hit(n);
    return tau;
  }
  std::vector<char> stopped(tree.node_count(), 0);
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    const bool before = n > 0 && stopped[tree.parent(n)];
    if (!before && hit(n)) tau.stop[n] = 1;
    stopped[n] = before || tau.stop[n];
  }
  return tau;
}

RiskMeasureHandle<double> risk_measure_from_bsde(const BrownianTree& bt, const Driver& g, bool reflected) {
  auto solve = [&bt, g, reflected](const AdaptedProcess<double>& x) {
    return reflected ? solve_rbsde(bt, x, g) : solve_bsde(bt, x, g);
  };
  RiskMeasureHandle<double> rm;
  rm.name = std::string(reflected ? "rbsde:" : "bsde:") + g.family;
  rm.evaluate = [solve](const AdaptedProcess<double>& x) { return solve(x).Y[0]; };
  rm.conditional_evaluate = [solve, &bt](int t, const AdaptedProcess<double>& x) {
    return level_slice(bt.tree, solve(x).Y, t);
  };
  return rm;
}

AxiomReport conditional_axiom_check(const BrownianTree& bt, const RiskMeasureHandle<double>& rm,
                                    const SampleConfig& cfg) {
  const auto& tree = bt.tree;
  Rng rng(cfg.seed ^ 0x2545F4914F6CDD1DULL);
  Verdict cash{"conditional-cash-invariance"}, mono{"conditional-monotonicity"}, convex{"conditional-convexity"};
  const double tol = std::max(cfg.tolerance, 1e-9);
  for (int s = 0; s < cfg.samples; ++s) {
    const int t = rng.uniform_int(0, tree.steps());
    const auto x = convert_process<double>(random_process(rng, tree, cfg.range));
    const auto y = convert_process<double>(random_process(rng, tree, cfg.range));
    const NodeId begin = tree.level_begin(t);
    const auto size = static_cast<Eigen::Index>(tree.level_size(t));
    LevelSlice<double> m(size), lambda(size);
    for (Eigen::Index i = 0; i < size; ++i) {
      m[i] = to_double(rng.rational(-cfg.range, cfg.range, 6));
      lambda[i] = rng.uniform_int(0, 8) / 8.0;
    }
    const auto rx = rm.conditional_evaluate(t, x);
    const auto ry = rm.conditional_evaluate(t, y);
    const auto rs = rm.conditional_evaluate(t, add_payment(tree, x, t, m));
    const std::string where = "sample " + std::to_string(s) + " t=" + std::to_string(t);
    const double cash_err = (rs - (rx - m)).cwiseAbs().maxCoeff();
    detail::record(cash, cash_err <= tol, where + ": |rho_t(X+m) - rho_t(X) + m| = " + to_text(cash_err));

    AdaptedProcess<double> above = x, mix = x;
    for (NodeId n = 0; n < tree.node_count(); ++n) {
      if (rng.coin()) above[n] += rng.uniform_int(0, 4) / 2.0;
      if (tree.level(n) >= t) {
        const double l = lambda[static_cast<Eigen::Index>(tree.ancestor(n, t) - begin)];
        mix[n] = l * x[n] + (1 - l) * y[n];
      }
    }
    const double mono_excess = (rm.conditional_evaluate(t, above) - rx).maxCoeff();
    detail::record(mono, mono_excess <= tol, where + ": monotonicity excess " + to_text(mono_excess));
    const LevelSlice<double> bound = lambda.cwiseProduct(rx) + (LevelSlice<double>::Ones(size) - lambda).cwiseProduct(ry);
    const double convex_excess = (rm.conditional_evaluate(t, mix) - bound).maxCoeff();
    detail::record(convex, convex_excess <= tol, where + ": convexity excess " + to_text(convex_excess));
  }
  return AxiomReport{{cash, mono, convex}};
}

double time_consistency_gap(const BrownianTree& bt, const RiskMeasureHandle<double>& rm,
                            const AdaptedProcess<double>& x, int t, int s) {
  const auto& tree = bt.tree;
  if (t < 0 || s < t || s > tree.steps()) throw std::out_of_range("time_consistency_gap: need 0 <= t <= s <= N");
  const auto inner = rm.conditional_evaluate(s, x);
  AdaptedProcess<double> stitched = x;
  const NodeId begin = tree.level_begin(s);
  for (NodeId n = begin; n < tree.node_count(); ++n) {
    stitched[n] = -inner[static_cast<Eigen::Index>(tree.ancestor(n, s) - begin)];
  }
  return (rm.conditional_evaluate(t, x) - rm.conditional_evaluate(t, stitched)).cwiseAbs().maxCoeff();
}

AdaptedProcess<double> hump_process(const BrownianTree& bt, double height) {
  const auto& tree = bt.tree;
  AdaptedProcess<double> x(tree.node_count());
  const double T = tree.horizon();
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    const double t = tree.time(tree.level(n));
    x[n] = -height * (1.0 - std::abs(2.0 * t / T - 1.0));
  }
  return x;
}

NegativeExampleReport negative_example_check(const BrownianTree& bt, const Driver& g, std::uint64_t seed,
                                             int random_candidates, double threshold) {
  const auto& tree = bt.tree;
  std::vector<AdaptedProcess<double>> candidates{hump_process(bt)};
  Rng rng(seed);
  for (int i = 0; i < random_candidates; ++i) candidates.push_back(convert_process<double>(random_process(rng, tree, 2)));
  SolverOptions classical;
  classical.classical = true;
  NegativeExampleReport r;
  r.x = candidates.front();
  for (const auto& x : candidates) {
    const auto base_c = solve_rbsde(bt, x, g, classical).Y;
    const auto base_p = solve_rbsde(bt, x, g).Y;
    for (int t = 0; t < tree.steps(); ++t) {
      for (double m : {-1.0, -0.5, 0.5, 1.0}) {
        const auto shifted = add_payment(tree, x, t, m);
        const auto yc = solve_rbsde(bt, shifted, g, classical).Y;
        const auto yp = solve_rbsde(bt, shifted, g).Y;
        double vc = 0, vp = 0;
        for (NodeId n = tree.level_begin(t); n < tree.level_end(t); ++n) {
          vc = std::max(vc, std::abs(yc[n] - (base_c[n] - m)));
          vp = std::max(vp, std::abs(yp[n] - (base_p[n] - m)));
        }
        r.shifted_violation = std::max(r.shifted_violation, vp);
        if (vc > r.classical_violation) {
          r.classical_violation = vc;
          r.level = t;
          r.m = m;
          r.x = x;
        }
      }
    }
  }
  r.witness_found = r.classical_violation > threshold;
  return r;
}

double bmo_diagnostic(const BrownianTree& bt, const BsdeSolution& sol) {
  const auto& tree = bt.tree;
  AdaptedProcess<double> acc(tree.node_count());
  double best = 0;
  for (NodeId n = tree.node_count(); n-- > 0;) {
    if (!tree.is_leaf(n)) acc[n] = sol.Z[n] * sol.Z[n] * bt.dt() + expectation(tree, acc, n);
    best = std::max(best, acc[n]);
  }
  return best;
}

}  // namespace procrisk
