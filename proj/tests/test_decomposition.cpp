#include "doctest.h"
#include "procrisk/decomposition.hpp"
#include "procrisk/random.hpp"
#include "support/oracles.hpp"

using namespace procrisk;

namespace {

using Proc = AdaptedProcess<Rational>;

// a with the same value on every node of a level.
Proc by_level(const FiltrationTree& tree, std::vector<Rational> levels) {
  Proc a(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) a[n] = levels[tree.level(n)];
  a.pre_time_zero = Rational(0);
  return a;
}

Proc terminal_mass(const FiltrationTree& tree, const RandomVariable<Rational>& at) {
  Proc a(tree.node_count());
  a.values.tail(at.size()) = at;
  return a;
}

// One step, p = 1/2, a_0 = 0, a_T = (0, 2): L vanishes on the first leaf.
struct Killed {
  FiltrationTree tree = FiltrationTree::uniform(1, 2);
  Proc a = terminal_mass(tree, (RandomVariable<Rational>(2) << Rational(0), Rational(2)).finished());
};

}  // namespace

TEST_CASE("linear form") {
  Rng rng(2);
  auto tree = random_tree(rng, 3, 3, 3);
  const Proc one(tree.node_count(), Rational(1));
  CHECK(linear_form(tree, random_z1_measure(rng, tree), one) == 1);

  auto x = random_process(rng, tree);
  auto at_T = terminal_mass(tree, RandomVariable<Rational>::Constant(static_cast<Eigen::Index>(tree.leaf_count()), Rational(1)));
  CHECK(linear_form(tree, at_T, x) == expectation_at_level(tree, x, tree.steps()));

  for (int trial = 0; trial < 40; ++trial) {
    auto t = random_tree(rng, 3, 3, 3);
    auto a = random_z1_measure(rng, t, 0.3);
    auto y = random_process(rng, t);
    CHECK(linear_form(t, a, y) == oracle::path_sum_linear_form(t, a, y));
  }
}

TEST_CASE("paired linear form") {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    auto tree = random_tree(rng, 3, 3, 3);
    auto x = random_process(rng, tree);
    auto a_op = random_z1_measure(rng, tree);
    PairedMeasure<Rational> only_op{Proc(tree.node_count()), a_op};
    CHECK(paired_linear_form(tree, only_op, x) == linear_form(tree, a_op, x));

    auto a_pr = random_predictable_measure(rng, tree, 0.3, false);
    PairedMeasure<Rational> half{Proc(Vector<Rational>(a_pr.values / 2)), Proc(Vector<Rational>(a_op.values / 2))};
    CHECK(paired_linear_form(tree, half, Proc(tree.node_count(), Rational(1))) == 1);

    PairedMeasure<Rational> pair{a_pr, a_op};
    CHECK(paired_linear_form(tree, pair, x) == paired_linear_form_projected(tree, pair, x));
  }
}

TEST_CASE("potential") {
  SUBCASE("unit mass at T") {
    auto tree = FiltrationTree::uniform(3, 2);
    auto pot = potential(tree, by_level(tree, {0, 0, 0, 1}));
    for (NodeId n = 0; n < tree.node_count(); ++n) CHECK(pot.U[n] == (tree.is_leaf(n) ? 0 : 1));
    CHECK(pot.tau == StoppingTime::constant(tree, 3));
  }
  SUBCASE("deterministic (1/4, 1/2, 1)") {
    auto tree = FiltrationTree::uniform(2, 2);
    auto a = by_level(tree, {Rational(1, 4), Rational(1, 2), Rational(1)});
    auto pot = potential(tree, a);
    const RandomVariable<Rational> aT = level_slice(tree, a, 2);
    for (NodeId n = 0; n < tree.node_count(); ++n) {
      const int k = tree.level(n);
      const Rational m = conditional_expectation(tree, aT, k)[n - tree.level_begin(k)];
      CHECK(pot.U[n] == m - a[n]);
      CHECK(pot.U[n] == std::vector<Rational>{Rational(3, 4), Rational(1, 2), Rational(0)}[k]);
    }
    CHECK(pot.tau == StoppingTime::constant(tree, 2));
  }
  SUBCASE("all mass at 0") {
    auto tree = FiltrationTree::uniform(2, 3);
    auto pot = potential(tree, by_level(tree, {1, 1, 1}));
    CHECK(pot.U.values.isZero());
    CHECK(pot.tau == StoppingTime::constant(tree, 0));
  }
}

TEST_CASE("optional decomposition examples") {
  SUBCASE("deterministic measure") {
    auto tree = FiltrationTree::uniform(2, 2);
    auto a = by_level(tree, {Rational(1, 4), Rational(1, 2), Rational(1)});
    auto d = decompose_optional(tree, a);
    for (NodeId n = 0; n < tree.node_count(); ++n) {
      CHECK(d.L[n] == 1);
      CHECK(d.D[n] == 1 - a[n]);
    }
    CHECK(recompose(tree, d).values == a.values);
  }
  SUBCASE("terminal mass gives the density martingale") {
    Rng rng(8);
    auto tree = random_tree(rng, 4, 3, 2);
    RandomVariable<Rational> aT(static_cast<Eigen::Index>(tree.leaf_count()));
    for (auto& v : aT) v = rng.uniform_int(1, 4);
    aT /= conditional_expectation(tree, aT, 0)[0];
    auto a = terminal_mass(tree, aT);
    auto d = decompose_optional(tree, a);
    auto M = closing_martingale(tree, aT);
    for (NodeId n = 0; n < tree.node_count(); ++n) {
      CHECK(d.L[n] == M[n]);
      CHECK(d.D[n] == (tree.is_leaf(n) ? 0 : 1));
    }
  }
  SUBCASE("immediate exhaustion") {
    auto tree = FiltrationTree::uniform(2, 2);
    auto d = decompose_optional(tree, by_level(tree, {1, 1, 1}));
    CHECK(d.D[0] == 0);
    CHECK((d.L.values.array() == Rational(1)).all());
    CHECK(d.tau == StoppingTime::constant(tree, 0));
  }
  SUBCASE("errors") {
    auto tree = FiltrationTree::uniform(2, 2);
    CHECK_THROWS_AS(decompose_optional(tree, by_level(tree, {0, 1, 2})), std::invalid_argument);
    CHECK_NOTHROW(decompose_optional(tree, by_level(tree, {0, 1, 2}), false));
    CHECK_THROWS_AS(decompose_optional(tree, by_level(tree, {1, Rational(1, 2), 1})), std::invalid_argument);
  }
}

TEST_CASE("optional decomposition on random measures") {
  Rng rng(13);
  for (int trial = 0; trial < 120; ++trial) {
    auto tree = random_tree(rng, 6, 3);
    auto a = random_z1_measure(rng, tree, rng.uniform(0.1, 0.8));
    auto d = decompose_optional(tree, a);
    CHECK(recompose(tree, d).values == a.values);
    auto report = verify_decomposition(tree, d, a);
    CHECK(report.all());
    if (!report.all()) MESSAGE(report.witnesses.front());
    auto other = decompose_optional_additive(tree, a);
    CHECK(other.L.values == d.L.values);
    CHECK(other.D.values == d.D.values);
  }
}

TEST_CASE("predictable decomposition") {
  SUBCASE("deterministic measure matches the optional one") {
    auto tree = FiltrationTree::uniform(2, 2);
    auto a = by_level(tree, {Rational(1, 4), Rational(1, 2), Rational(1)});
    auto opt = decompose_optional(tree, a);
    auto pred = decompose_predictable(tree, a);
    CHECK(opt.L.values == pred.L.values);
    CHECK(opt.D.values == pred.D.values);
  }
  SUBCASE("common jumps of M and a separate the decompositions") {
    auto tree = FiltrationTree::uniform(2, 2);
    Proc a(tree.node_count());
    a[1] = a[2] = Rational(1, 2);
    a[3] = a[4] = Rational(3, 2);
    a[5] = a[6] = Rational(1, 2);
    CHECK(pathwise_bracket(tree, a) != RandomVariable<Rational>::Zero(4));
    auto opt = decompose_optional(tree, a);
    auto pred = decompose_predictable(tree, a);
    CHECK(opt.D.values != pred.D.values);
    CHECK(recompose(tree, opt).values == a.values);
    CHECK(recompose(tree, pred).values == a.values);
    CHECK(verify_decomposition(tree, pred, a).all());
  }
  SUBCASE("single deterministic jump") {
    auto tree = FiltrationTree::uniform(3, 2);
    auto d = decompose_predictable(tree, by_level(tree, {0, 1, 1, 1}));
    for (NodeId n = 0; n < tree.node_count(); ++n) {
      CHECK(d.L[n] == 1);
      CHECK(d.D[n] == (tree.level(n) == 0 ? 1 : 0));
    }
  }
  SUBCASE("rejects adapted but unpredictable input") {
    Killed k;
    CHECK_THROWS_AS(decompose_predictable(k.tree, k.a), std::invalid_argument);
  }
  SUBCASE("random predictable measures") {
    Rng rng(17);
    for (int trial = 0; trial < 80; ++trial) {
      auto tree = random_tree(rng, 6, 3);
      auto a = random_predictable_measure(rng, tree, rng.uniform(0.2, 0.8));
      auto d = decompose_predictable(tree, a);
      CHECK(is_predictable(tree, d.D));
      CHECK(recompose(tree, d).values == a.values);
      CHECK(verify_decomposition(tree, d, a).all());
      const bool no_bracket = pathwise_bracket(tree, a).isZero();
      if (no_bracket) {
        auto opt = decompose_optional(tree, a);
        CHECK(opt.L.values == d.L.values);
        CHECK(opt.D.values == d.D.values);
      }
    }
  }
}

TEST_CASE("recompose") {
  auto tree = FiltrationTree::uniform(2, 3);
  auto a = by_level(tree, {Rational(1, 5), Rational(2, 5), Rational(1)});
  Proc L(tree.node_count(), Rational(1));
  Proc D(Vector<Rational>(Vector<Rational>::Ones(static_cast<Eigen::Index>(tree.node_count())) - a.values));
  CHECK(recompose(tree, L, D, DecompositionMode::optional).values == a.values);

  Rng rng(23);
  auto mart = random_martingale(rng, tree, Rational(1));
  Proc stop(tree.node_count(), Rational(1));
  for (NodeId n = tree.level_begin(2); n < tree.node_count(); ++n) stop[n] = 0;
  auto back = recompose(tree, mart, stop, DecompositionMode::optional);
  for (NodeId n = 0; n < tree.node_count(); ++n) CHECK(back[n] == (tree.is_leaf(n) ? mart[n] : Rational(0)));
}

TEST_CASE("verification report") {
  Killed k;
  auto d = decompose_optional(k.tree, k.a);
  CHECK(d.L[1] == 0);
  CHECK(verify_decomposition(k.tree, d, k.a).all());

  auto moved = d;
  moved.D[1] = Rational(1, 2);
  auto report = verify_decomposition(k.tree, moved, k.a);
  CHECK(report.conditions_1_to_4());
  CHECK(report.multiplicative);
  CHECK_FALSE(report.support);
  CHECK(report.unique_before_tau);
  CHECK_FALSE(report.unique_everywhere);

  auto broken = d;
  broken.L[2] += 1;
  CHECK_FALSE(verify_decomposition(k.tree, broken, k.a).martingale);
}

TEST_CASE("measure association") {
  Rng rng(31);
  SUBCASE("L = 1 leaves P unchanged") {
    auto tree = random_tree(rng, 4, 3, 2);
    auto q = associate_measure(tree, Proc(tree.node_count(), Rational(1)));
    for (NodeId n = 0; n < tree.node_count(); ++n) CHECK(q.node[n] == tree.probability(n));
  }
  SUBCASE("density 2 on one half conditions on it") {
    auto tree = FiltrationTree::uniform(1, 2);
    auto L = closing_martingale(tree, (RandomVariable<Rational>(2) << Rational(2), Rational(0)).finished());
    auto q = associate_measure(tree, L);
    CHECK(q.node[1] == 1);
    CHECK(q.node[2] == 0);
  }
  SUBCASE("both evaluators agree") {
    for (int trial = 0; trial < 40; ++trial) {
      auto tree = random_tree(rng, 5, 3);
      auto L = random_martingale(rng, tree, Rational(1));
      auto D = random_discount(rng, tree);
      auto x = random_process(rng, tree);
      auto q = associate_measure(tree, L);
      CHECK(weighted_discount_form(tree, x, L, D) == tilted_discount_form(tree, q, x, D));
    }
  }
  SUBCASE("negative density rejected") {
    auto tree = FiltrationTree::uniform(1, 2);
    Proc L(tree.node_count());
    L[0] = 1;
    L[1] = 3;
    L[2] = -1;
    CHECK_THROWS_AS(associate_measure(tree, L), std::invalid_argument);
  }
}
