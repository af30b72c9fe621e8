#pragma once

#include "procrisk/riskcore.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace procrisk {

/// Binary tree (or recombining lattice) with equal probabilities and
/// increments ΔW = +√Δt on child 0, −√Δt on child 1.
struct BrownianTree {
  FiltrationTree tree;
  Vector<double> W;  // W at every node

  double dt() const { return tree.horizon() / tree.steps(); }
  double sqrt_dt() const { return std::sqrt(dt()); }
  static double increment_sign(std::size_t child) { return child == 0 ? 1.0 : -1.0; }
};

/// d = 1 only.
BrownianTree build_brownian_tree(int steps, double horizon = 1.0, bool lattice = false, int dims = 1);

/// Thrown when Δt·C_Lip > 1/2 or a control leaves the admissible range.
class SolverGuard : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// g(t, y, z) with y standing for Y + X. `lipschitz` bounds the y-dependence
/// used by the implicit step (C_Lip under H1; for H1′ drivers the z-growth
/// constant is `growth`). β̄ lies in [0, beta_bound].
struct Driver {
  std::string family = "custom";
  std::function<double(double, double, double)> eval;
  double lipschitz = 0.0;
  double growth = 0.0;
  double beta_bound = 0.0;
  bool quadratic = false;
  /// Closed-form g*(t, β, μ), +∞ off the domain.
  std::function<double(double, double, double)> conjugate;
  /// Closed-form maximizer (β̄, μ̄) for given (t, y, z).
  std::function<std::pair<double, double>(double, double, double)> maximizer;
  std::vector<std::pair<std::string, double>> parameters;
};

Driver zero_driver();
/// θ|z| − βy.
Driver linear_driver(double beta, double theta);
/// (γ/2)z² − βy.
Driver quadratic_driver(double gamma, double beta);
Driver custom_driver(std::function<double(double, double, double)> g, double lipschitz, double beta_bound);

struct DriverFlags {
  Verdict h1{"H1"}, h2{"H2"}, h3{"H3"}, h4{"H4"};
  bool all() const { return h1.passed && h2.passed && h3.passed && h4.passed; }
};

/// Sampled spot checks on the time grid of `tree`.
DriverFlags check_driver(const Driver& g, const FiltrationTree& tree, std::uint64_t seed = 1, int samples = 200);

struct BsdeSolution {
  AdaptedProcess<double> Y, Z, K;
  /// Unreflected candidate ŷ at every node (equals Y without reflection).
  AdaptedProcess<double> candidate;
  bool reflected = false;
  int max_iterations = 0;
  bool newton_used = false;
};

struct SolverOptions {
  double tolerance = 1e-12;
  int max_iterations = 100;
  /// Apply g to Y instead of Y + X (the classical form).
  bool classical = false;
};

BsdeSolution solve_bsde(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                        const SolverOptions& opt = {});
BsdeSolution solve_rbsde(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                         const SolverOptions& opt = {});

struct SolutionCheck {
  double identity_residual = 0.0;
  double bound_excess = 0.0;  // max(|Y| − ‖X‖, 0)
  double complementarity = 0.0;
  bool obstacle_ok = true;
  bool k_monotone = true;
};

SolutionCheck check_solution(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                             const BsdeSolution& sol);

struct ConjugateGrid {
  double radius = 0.0;  // 0: derived from the driver
  int points = 401;
  double cap = 1e6;
};

/// Grid sup over the box [−R, R]²; +∞ when doubling the box raises the sup.
double conjugate_grid(const Driver& g, double t, double beta, double mu, const ConjugateGrid& grid = {});
/// Closed form when available, grid otherwise.
double conjugate(const Driver& g, double t, double beta, double mu);

struct DualControlBSDE {
  AdaptedProcess<double> beta, mu;
  std::optional<StoppingTime> tau;
};

DualControlBSDE constant_control(const FiltrationTree& tree, double beta, double mu);

struct OptimalControl {
  DualControlBSDE control;
  /// max over nodes of g − (−β̄u − μ̄z − g*(β̄, μ̄)).
  double max_gap = 0.0;
};

OptimalControl optimal_control(const BrownianTree& bt, const AdaptedProcess<double>& x, const BsdeSolution& sol,
                               const Driver& g, int beta_points = 11, int mu_points = 21);

/// E_Q[d_{T−}(−X_T) − Σ d_k (β_k X_k + g*_k) Δt] with d_k = Π_{j≤k} 1/(1+β_jΔt)
/// and Q tilting p to p(1 − μ ΔW). Value per node.
AdaptedProcess<double> dual_values_er(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                                      const DualControlBSDE& c);
double dual_evaluate_er(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                        const DualControlBSDE& c, NodeId node = 0);

/// Same functional stopped at τ (paying −X_τ at the stop).
double dual_evaluate_reflected(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                               const DualControlBSDE& c, NodeId node = 0);

/// sup over all τ of the stopped functional for fixed (β, μ), by backward
/// induction under Q.
double dual_reflected_sup_tau(const BrownianTree& bt, const AdaptedProcess<double>& x, const Driver& g,
                              const DualControlBSDE& c);

/// τ^ε = first time Y ≤ −X + ε.
StoppingTime epsilon_optimal_tau(const BrownianTree& bt, const AdaptedProcess<double>& x, const BsdeSolution& sol,
                                 double eps = 1e-6);

/// ρ_t = Y_t. Reflected variant uses solve_rbsde.
RiskMeasureHandle<double> risk_measure_from_bsde(const BrownianTree& bt, const Driver& g, bool reflected);

/// Cash invariance with F_t-measurable m and convexity with F_t-measurable λ
/// on random samples, at random levels t.
AxiomReport conditional_axiom_check(const BrownianTree& bt, const RiskMeasureHandle<double>& rm,
                                    const SampleConfig& cfg);

/// max |ρ_t(X) − ρ_t(X·1_{[t,s)} − ρ_s(X)·1_{[s,T]})| over level-t nodes.
double time_consistency_gap(const BrownianTree& bt, const RiskMeasureHandle<double>& rm,
                            const AdaptedProcess<double>& x, int t, int s);

struct NegativeExampleReport {
  bool witness_found = false;
  int level = 0;
  double m = 0.0;
  double classical_violation = 0.0;
  double shifted_violation = 0.0;
  AdaptedProcess<double> x;
};

/// Hump obstacle −X with X peaking (in absolute value) mid-horizon.
AdaptedProcess<double> hump_process(const BrownianTree& bt, double height = 1.0);

/// Searches (X, t, m) for a conditional cash-invariance violation of the
/// classical reflected form, and measures the shifted form on the same inputs.
NegativeExampleReport negative_example_check(const BrownianTree& bt, const Driver& g, std::uint64_t seed = 7,
                                             int random_candidates = 20, double threshold = 1e-9);

/// max over nodes n of E[Σ_{j ≥ level(n)} Z_j² Δt | F_n].
double bmo_diagnostic(const BrownianTree& bt, const BsdeSolution& sol);

}  // namespace procrisk
