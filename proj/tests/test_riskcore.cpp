#include "doctest.h"
#include "procrisk/riskcore.hpp"
#include "support/oracles.hpp"

#include <cmath>

using namespace procrisk;

namespace {

using Proc = AdaptedProcess<Rational>;

Proc at_terminal(const FiltrationTree& tree) {
  Proc a(tree.node_count());
  for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) a[n] = 1;
  a.pre_time_zero = Rational(0);
  return a;
}

}  // namespace

TEST_CASE("axiom harness") {
  Rng rng(1);
  auto tree = random_tree(rng, 4, 3, 2);
  SampleConfig cfg;
  cfg.samples = 30;

  CHECK(axiom_check(tree, terminal_expectation<Rational>(tree), cfg).all());
  CHECK(axiom_check(tree, worst_case<Rational>(tree), cfg).all());

  auto shifted = terminal_expectation<Rational>(tree);
  auto base = shifted.evaluate;
  shifted.evaluate = [base](const Proc& x) { return Rational(base(x) + 1); };
  auto report = axiom_check(tree, shifted, cfg);
  CHECK_FALSE(report.all());
  CHECK(report.violations() == 1);
  CHECK_FALSE(report.verdicts.back().passed);
  CHECK(report.verdicts.back().name == "normalization");
  CHECK_FALSE(report.verdicts.back().witness.empty());
}

TEST_CASE("cash subadditivity") {
  Rng rng(2);
  auto tree = random_tree(rng, 4, 3, 2);
  SampleConfig cfg;
  cfg.samples = 40;
  CHECK(cash_subadditivity_check(tree, worst_case<Rational>(tree), cfg).inequality.passed);

  auto grid = FiltrationTree::uniform(5, 2, 1.0);
  const double beta = 0.7;
  auto discounted = linear_risk_measure(grid, discounted_measure(grid, beta), "discounted");
  SampleConfig fcfg;
  fcfg.samples = 40;
  fcfg.tolerance = 1e-12;
  auto r = cash_subadditivity_check(grid, discounted, fcfg);
  CHECK(r.inequality.passed);
  CHECK(r.strict_witness_found);

  // Closed-form gap m(1 − e^{−βt}).
  auto x = convert_process<double>(random_process(rng, grid));
  for (int t = 1; t <= grid.steps(); ++t) {
    const double m = 1.5;
    const double gap = discounted.evaluate(add_payment(grid, x, t, m)) -
                       (discounted.evaluate(x) - m);
    CHECK(gap == doctest::Approx(m * (1 - std::exp(-beta * grid.time(t)))).epsilon(1e-12));
  }

  auto undiscounted = linear_risk_measure(grid, discounted_measure(grid, 0.0), "undiscounted");
  auto r0 = cash_subadditivity_check(grid, undiscounted, fcfg, grid.steps());
  CHECK(r0.inequality.passed);
  CHECK(r0.declared_additive.passed);
  CHECK_FALSE(r0.strict_witness_found);
}

TEST_CASE("capital requirement") {
  Rng rng(3);
  auto tree = random_tree(rng, 4, 3, 2);
  auto rm = worst_case<Rational>(tree);
  auto acc = acceptance_set(rm);
  CHECK(capital_requirement(acc, Proc(tree.node_count())) == doctest::Approx(0).epsilon(1e-12));
  CHECK(capital_requirement(acc, Proc(tree.node_count(), Rational(-3, 2))) == doctest::Approx(1.5).epsilon(1e-12));
  for (int i = 0; i < 20; ++i) {
    auto x = random_process(rng, tree);
    CHECK(std::abs(capital_requirement(acc, x) - to_double(rm.evaluate(x))) <= 1e-9);
  }
  AcceptanceSet<Rational> broken{[](const Proc& x) { return x[0] < 0; }};
  CHECK_THROWS_AS(capital_requirement(broken, Proc(tree.node_count())), BracketError);
}

TEST_CASE("acceptance set is convex and solid") {
  Rng rng(4);
  auto tree = random_tree(rng, 3, 3, 2);
  auto set = random_dual_set(rng, tree, ControlForm::Z1, 6, false);
  auto rm = robust_risk_measure(tree, set);
  auto acc = acceptance_set(rm);
  int members = 0;
  for (int i = 0; i < 60; ++i) {
    auto x = random_process(rng, tree);
    auto y = random_process(rng, tree);
    x.values.array() += Rational(rm.evaluate(x));
    y.values.array() += Rational(rm.evaluate(y));
    REQUIRE(acc.contains(x));
    REQUIRE(acc.contains(y));
    const Rational l(rng.uniform_int(0, 6), 6);
    CHECK(acc.contains(Proc(Vector<Rational>(l * x.values + (1 - l) * y.values))));
    auto above = x;
    above[rng.uniform_int(0, static_cast<int>(tree.node_count()) - 1)] += 1;
    CHECK(acc.contains(above));
    ++members;
  }
  CHECK(members == 60);
}

TEST_CASE("robust evaluation") {
  Rng rng(5);
  SUBCASE("extreme points of Z1 give the worst node") {
    for (int trial = 0; trial < 20; ++trial) {
      auto tree = random_tree(rng, 4, 3);
      auto set = extreme_point_set<Rational>(tree);
      auto x = random_process(rng, tree);
      auto value = robust_evaluate(tree, x, set);
      Rational direct = -x[0];
      for (NodeId n = 0; n < tree.node_count(); ++n) direct = std::max<Rational>(direct, -x[n]);
      CHECK(value.value == direct);
      CHECK(-x[value.argmax] == direct);
    }
  }
  SUBCASE("stopping times with leaf densities reach the same maximum") {
    for (int trial = 0; trial < 10; ++trial) {
      auto tree = random_tree(rng, 3, 2);
      auto x = random_process(rng, tree);
      Rational best;
      bool first = true;
      for_each_stopping_time(tree, 0, [&](const StoppingTime& tau) {
        for (NodeId leaf : oracle::leaves(tree)) {
          // density concentrated on one leaf, paying −X at the stop on its path
          const Rational v = -x[tree.path_to(leaf)[tau.level_on_path(tree, leaf)]];
          if (first || v > best) best = v;
          first = false;
        }
      });
      CHECK(robust_evaluate(tree, x, extreme_point_set<Rational>(tree)).value == best);
    }
  }
  SUBCASE("singleton at T is the terminal expectation") {
    auto tree = random_tree(rng, 4, 3);
    auto set = make_dual_set<Rational>(tree, ControlForm::Z1, {OptionalMeasure<Rational>{at_terminal(tree)}}, {Rational(0)});
    auto x = random_process(rng, tree);
    CHECK(robust_evaluate(tree, x, set).value == -expectation_at_level(tree, x, tree.steps()));
  }
  SUBCASE("terminal-only discounting reduces to terminal values") {
    auto tree = random_tree(rng, 4, 3, 2);
    std::vector<DualControl<Rational>> controls;
    std::vector<std::optional<Rational>> penalty;
    std::vector<Proc> densities;
    for (int i = 0; i < 5; ++i) {
      auto L = random_martingale(rng, tree, Rational(1));
      Proc D(tree.node_count(), Rational(1));
      for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) D[n] = 0;
      controls.push_back(ModelDiscount<Rational>{L, D});
      penalty.emplace_back(i == 0 ? Rational(0) : rng.rational(0, 1, 3));
      densities.push_back(L);
    }
    auto set = make_dual_set(tree, ControlForm::Z1, controls, penalty);
    auto x = random_process(rng, tree);
    auto y = x;
    for (NodeId n = 0; n < tree.level_begin(tree.steps()); ++n) y[n] = rng.rational(-9, 9, 2);
    CHECK(robust_evaluate(tree, x, set).value == robust_evaluate(tree, y, set).value);
    Rational direct;
    for (std::size_t i = 0; i < densities.size(); ++i) {
      Rational v(0);
      for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) v -= tree.probability(n) * densities[i][n] * x[n];
      v -= *penalty[i];
      if (i == 0 || v > direct) direct = v;
    }
    CHECK(robust_evaluate(tree, x, set).value == direct);
  }
  SUBCASE("worker count does not change the result") {
    auto tree = random_tree(rng, 5, 3, 3);
    auto set = random_dual_set(rng, tree, ControlForm::S1, 25, false);
    auto x = random_process(rng, tree);
    auto one = robust_evaluate(tree, x, set, 1);
    auto many = robust_evaluate(tree, x, set, 4);
    CHECK(one.value == many.value);
    CHECK(one.argmax == many.argmax);
  }
  SUBCASE("Z1d without predictable part equals Z1") {
    auto tree = random_tree(rng, 4, 3);
    auto z1 = random_dual_set(rng, tree, ControlForm::Z1, 6, false);
    std::vector<DualControl<Rational>> lifted;
    for (const auto& pm : z1.paired) lifted.push_back(PairedMeasure<Rational>{Proc(tree.node_count()), pm.a_op});
    auto z1d = make_dual_set(tree, ControlForm::Z1d, lifted, z1.penalty);
    for (int i = 0; i < 10; ++i) {
      auto x = random_process(rng, tree);
      CHECK(robust_evaluate(tree, x, z1).value == robust_evaluate(tree, x, z1d).value);
    }
  }
  SUBCASE("enlarging the control set never lowers the value") {
    auto tree = random_tree(rng, 4, 3);
    auto big = random_dual_set(rng, tree, ControlForm::Z1d, 8, false);
    auto small = make_dual_set<Rational>(tree, ControlForm::Z1d, {big.controls.begin(), big.controls.begin() + 4},
                               {big.penalty.begin(), big.penalty.begin() + 4});
    for (int i = 0; i < 10; ++i) {
      auto x = random_process(rng, tree);
      CHECK(robust_evaluate(tree, x, small).value <= robust_evaluate(tree, x, big).value);
    }
  }
  SUBCASE("membership errors") {
    auto tree = FiltrationTree::uniform(2, 2);
    Proc half(Vector<Rational>(at_terminal(tree).values / 2));
    CHECK_THROWS_AS(make_dual_set<Rational>(tree, ControlForm::Z1, {OptionalMeasure<Rational>{half}}, {Rational(0)}),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_dual_set<Rational>(tree, ControlForm::Z1, {}, {}), std::invalid_argument);
  }
}

TEST_CASE("robust risk measures satisfy the axioms") {
  Rng rng(6);
  SampleConfig cfg;
  cfg.samples = 4;
  int failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    auto tree = random_tree(rng, 3, 3);
    const auto form = static_cast<ControlForm>(trial % 3);
    auto set = random_dual_set(rng, tree, form, rng.uniform_int(1, 5), rng.coin());
    CHECK(penalty_normalized(set));
    auto rm = robust_risk_measure(tree, set);
    cfg.seed = rng.next();
    failures += !axiom_check(tree, rm, cfg).all();
    failures += !cash_subadditivity_check(tree, rm, cfg).inequality.passed;
  }
  CHECK(failures == 0);
}

TEST_CASE("minimal penalty") {
  Rng rng(7);
  auto tree = random_tree(rng, 3, 3, 2);
  auto terminal = linear_risk_measure(tree, at_terminal(tree), "terminal");

  auto zero = minimal_penalty<Rational>(tree, terminal, OptionalMeasure<Rational>{at_terminal(tree)});
  CHECK(zero.exact);
  CHECK_FALSE(zero.infinite);
  CHECK(zero.exact_text == "0");

  auto early = node_mass<Rational>(tree, 0);
  auto inf = minimal_penalty<Rational>(tree, terminal, OptionalMeasure<Rational>{early});
  CHECK(inf.infinite);

  auto searched_zero = minimal_penalty<Rational>(tree, terminal_expectation<Rational>(tree),
                                                 OptionalMeasure<Rational>{at_terminal(tree)});
  CHECK_FALSE(searched_zero.exact);
  CHECK(searched_zero.value == 0);
  auto searched_inf = minimal_penalty<Rational>(tree, terminal_expectation<Rational>(tree), OptionalMeasure<Rational>{early});
  CHECK(searched_inf.infinite);

  SUBCASE("mixtures of controls are priced by the cheapest combination") {
    auto set = random_dual_set(rng, tree, ControlForm::Z1, 4, false);
    for (std::size_t i = 0; i < set.penalty.size(); ++i) {
      if (!set.penalty[i]) continue;
      auto own = minimal_penalty_exact(tree, set, set.paired[i]);
      CHECK(own.value <= to_double(*set.penalty[i]) + 1e-15);
    }
  }
  SUBCASE("weak duality") {
    for (int trial = 0; trial < 20; ++trial) {
      auto t = random_tree(rng, 3, 2, 2);
      auto set = random_dual_set(rng, t, ControlForm::Z1d, 4, false);
      auto rm = robust_risk_measure(t, set);
      auto probe = random_dual_set(rng, t, ControlForm::Z1d, 3, true);
      for (std::size_t i = 0; i < probe.controls.size(); ++i) {
        auto alpha = minimal_penalty(t, rm, probe.controls[i]);
        auto alpha_search = minimal_penalty_search(t, rm, probe.paired[i], PenaltySearch{});
        CHECK((alpha.infinite || !alpha_search.infinite));
        if (!alpha.infinite && !alpha_search.infinite) CHECK(alpha_search.value <= alpha.value + 1e-9);
        if (alpha.infinite) continue;
        for (int s = 0; s < 5; ++s) {
          auto x = random_process(rng, t);
          const Rational lhs = paired_linear_form(t, probe.paired[i], Proc(Vector<Rational>(-x.values)));
          CHECK(to_double(lhs) - alpha.value <= to_double(rm.evaluate(x)) + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("cash additivity characterization") {
  Rng rng(8);
  SUBCASE("no discounting before T") {
    auto tree = random_tree(rng, 4, 3, 3);
    std::vector<DualControl<Rational>> controls;
    for (int i = 0; i < 4; ++i) {
      Proc D(tree.node_count(), Rational(1));
      for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) D[n] = 0;
      controls.push_back(ModelDiscount<Rational>{random_martingale(rng, tree, Rational(1)), D});
    }
    auto rm = robust_risk_measure(tree, make_dual_set<Rational>(tree, ControlForm::Z1, controls,
                                                                {Rational(0), Rational(1), Rational(1, 3), std::nullopt}));
    for (int s = 1; s <= tree.steps(); ++s) {
      auto v = cash_additivity_characterization(tree, rm, s);
      CHECK(v.structural);
      CHECK(v.behavioral);
    }
  }
  SUBCASE("one early-discounting control breaks additivity") {
    auto tree = FiltrationTree::uniform(3, 2);
    Proc D(tree.node_count(), Rational(1));
    for (NodeId n = tree.level_begin(3); n < tree.node_count(); ++n) D[n] = 0;
    Proc early(tree.node_count(), Rational(1));
    for (NodeId n = 1; n < tree.node_count(); ++n) early[n] = tree.level(n) == 1 ? Rational(1, 2) : Rational(tree.is_leaf(n) ? 0 : 1, 2);
    Proc one(tree.node_count(), Rational(1));
    auto rm = robust_risk_measure(tree, make_dual_set<Rational>(tree, ControlForm::Z1,
                                                                std::vector<DualControl<Rational>>{ModelDiscount<Rational>{one, D}, ModelDiscount<Rational>{one, early}},
                                                                {Rational(0), Rational(1, 2)}));
    auto at1 = cash_additivity_characterization(tree, rm, 1);
    CHECK(at1.structural);
    CHECK(at1.behavioral);
    auto at2 = cash_additivity_characterization(tree, rm, 2);
    CHECK_FALSE(at2.structural);
    CHECK_FALSE(at2.behavioral);
    CHECK_FALSE(at2.witness.empty());
  }
  SUBCASE("additivity at s carries down to every earlier time") {
    for (int trial = 0; trial < 30; ++trial) {
      auto tree = random_tree(rng, 4, 2, 2);
      auto set = random_dual_set(rng, tree, static_cast<ControlForm>(trial % 3), 3, false);
      auto rm = robust_risk_measure(tree, set);
      for (int s = 1; s <= tree.steps(); ++s) {
        auto v = cash_additivity_characterization(tree, rm, s);
        CHECK_MESSAGE(v.agree(), "form ", trial % 3, " s=", s, ": ", v.witness);
        if (v.structural) {
          for (int t = 1; t < s; ++t) CHECK(cash_additivity_characterization(tree, rm, t).structural);
        }
      }
    }
  }
  SUBCASE("discounted family") {
    auto grid = FiltrationTree::uniform(4, 2, 1.0);
    for (double beta : {0.0, 0.5}) {
      auto rm = linear_risk_measure(grid, discounted_measure(grid, beta), "discounted");
      for (int s = 1; s <= grid.steps(); ++s) {
        auto v = cash_additivity_characterization(grid, rm, s, 3, 1e-9);
        CHECK(v.agree());
        CHECK(v.structural == (beta == 0.0));
      }
    }
  }
}
