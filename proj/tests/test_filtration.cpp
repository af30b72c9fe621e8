#include "doctest.h"
#include "procrisk/filtration.hpp"
#include "procrisk/random.hpp"
#include "support/oracles.hpp"

#include <set>

using namespace procrisk;

namespace {

FiltrationTree unequal_depth2() {
  return FiltrationTree::grow(2, [](NodeId n, int) -> std::vector<Rational> {
    if (n == 0) return {Rational(1, 3), Rational(2, 3)};
    if (n == 1) return {Rational(1, 4), Rational(3, 4)};
    return {Rational(2, 5), Rational(1, 5), Rational(2, 5)};
  });
}

}  // namespace

TEST_CASE("tree construction checks probabilities and layout") {
  auto tree = unequal_depth2();
  CHECK(tree.steps() == 2);
  CHECK(tree.node_count() == 1 + 2 + 5);
  CHECK(tree.leaf_count() == 5);
  CHECK(tree.parent(3) == 1);
  CHECK(tree.parent(7) == 2);
  CHECK(tree.probability(7) == Rational(2, 3) * Rational(2, 5));
  CHECK(tree.path_to(6) == std::vector<NodeId>{0, 2, 6});
  CHECK_THROWS_AS(FiltrationTree::grow(1, [](NodeId, int) { return std::vector<Rational>{Rational(1, 2)}; }),
                  std::logic_error);
  CHECK_THROWS_AS(FiltrationTree::grow(1, [](NodeId, int) {
                    return std::vector<Rational>{Rational(0), Rational(1)};
                  }),
                  std::logic_error);
}

TEST_CASE("conditional expectation") {
  SUBCASE("constant random variable is invariant") {
    auto tree = unequal_depth2();
    RandomVariable<Rational> c = RandomVariable<Rational>::Constant(5, Rational(7, 3));
    for (int k = 0; k <= 2; ++k) CHECK((conditional_expectation(tree, c, k).array() == Rational(7, 3)).all());
  }
  SUBCASE("two-leaf mean") {
    auto tree = FiltrationTree::uniform(1, 2);
    RandomVariable<Rational> rv(2);
    rv << Rational(0), Rational(2);
    CHECK(conditional_expectation(tree, rv, 0)[0] == 1);
  }
  SUBCASE("unequal rationals against leaf sums") {
    auto tree = unequal_depth2();
    RandomVariable<Rational> rv(5);
    rv << Rational(3), Rational(-1, 2), Rational(5, 7), Rational(0), Rational(11, 3);
    const NodeId base = tree.level_begin(2);
    for (int k = 0; k <= 2; ++k) {
      auto slice = conditional_expectation(tree, rv, k);
      for (NodeId n = tree.level_begin(k); n < tree.level_end(k); ++n) {
        auto expected = oracle::conditional_mean(tree, n, [&](NodeId leaf) { return rv[leaf - base]; });
        CHECK(slice[n - tree.level_begin(k)] == expected);
      }
    }
  }
  SUBCASE("tower property on random trees") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      auto tree = random_tree(rng, 5, 3);
      auto x = random_process(rng, tree);
      RandomVariable<Rational> rv = level_slice(tree, x, tree.steps());
      for (int j = 0; j <= tree.steps(); ++j) {
        auto inner = conditional_expectation(tree, rv, j);
        for (int k = 0; k <= j; ++k) {
          CHECK(conditional_expectation(tree, inner, k, j) == conditional_expectation(tree, rv, k));
        }
      }
    }
  }
  SUBCASE("errors") {
    auto tree = FiltrationTree::uniform(2, 2);
    RandomVariable<Rational> rv = RandomVariable<Rational>::Zero(4);
    CHECK_THROWS_AS(conditional_expectation(tree, rv, 3), std::out_of_range);
    CHECK_THROWS_AS(conditional_expectation(tree, rv, -1), std::out_of_range);
  }
}

TEST_CASE("predictable projection") {
  Rng rng(5);
  SUBCASE("idempotent on predictable input and flagged") {
    auto tree = random_tree(rng, 4, 3, 2);
    auto x = predictable_projection(tree, random_process(rng, tree));
    CHECK(x.predictable);
    CHECK(is_predictable(tree, x));
    CHECK(predictable_projection(tree, x).values == x.values);
  }
  SUBCASE("martingale increments project to zero") {
    auto tree = random_tree(rng, 4, 3, 2);
    auto m = closing_martingale(tree, RandomVariable<Rational>(level_slice(tree, random_process(rng, tree), tree.steps())));
    AdaptedProcess<Rational> dm(tree.node_count());
    for (NodeId n = 1; n < tree.node_count(); ++n) dm[n] = m[n] - m[tree.parent(n)];
    auto p = predictable_projection(tree, dm);
    for (NodeId n = 1; n < tree.node_count(); ++n) CHECK(p[n] == 0);
  }
  SUBCASE("sibling-weighted averages on depth-3 trees") {
    for (int trial = 0; trial < 20; ++trial) {
      auto tree = random_tree(rng, 3, 3, 3);
      auto x = random_process(rng, tree);
      auto p = predictable_projection(tree, x);
      for (NodeId n = 1; n < tree.node_count(); ++n) {
        Rational avg(0), mass(0);
        for (NodeId s : tree.siblings(n)) {
          avg += tree.probability(s) * x[s];
          mass += tree.probability(s);
        }
        CHECK(p[n] == avg / mass);
      }
    }
  }
}

TEST_CASE("sup norm") {
  Rng rng(9);
  auto tree = random_tree(rng, 4, 3, 2);
  CHECK(sup_norm(AdaptedProcess<Rational>(tree.node_count())) == 0);
  CHECK(sup_norm(single_payment(tree, Rational(-5, 2), 1)) == Rational(5, 2));
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_process(rng, tree);
    auto y = random_process(rng, tree);
    Rational scan(0);
    for (NodeId n = 0; n < tree.node_count(); ++n) scan = std::max<Rational>(scan, abs(x[n]));
    CHECK(sup_norm(x) == scan);
    const Rational c(-3, 4);
    CHECK(sup_norm(AdaptedProcess<Rational>(Vector<Rational>(c * x.values))) == abs(c) * sup_norm(x));
    CHECK(sup_norm(AdaptedProcess<Rational>(Vector<Rational>(x.values + y.values))) <= sup_norm(x) + sup_norm(y));
  }
}

TEST_CASE("stopping time enumeration") {
  SUBCASE("depth-1 binary tree") {
    auto tree = FiltrationTree::uniform(1, 2);
    CHECK(enumerate_stopping_times(tree, 0).size() == 2);
    CHECK(oracle::count_stopping_times_by_subsets(tree, 0) == 2);
  }
  SUBCASE("depth-2 binary tree") {
    auto tree = FiltrationTree::uniform(2, 2);
    CHECK(enumerate_stopping_times(tree, 0).size() == 5);
    CHECK(oracle::count_stopping_times_by_subsets(tree, 0) == 5);
  }
  SUBCASE("from the last level only the terminal time remains") {
    auto tree = FiltrationTree::uniform(3, 2);
    auto all = enumerate_stopping_times(tree, 3);
    REQUIRE(all.size() == 1);
    CHECK(all[0] == StoppingTime::constant(tree, 3));
  }
  SUBCASE("single path of depth 3") {
    auto tree = FiltrationTree::uniform(3, 1);
    CHECK(enumerate_stopping_times(tree, 0).size() == 4);
  }
  SUBCASE("random small trees: valid, distinct, complete") {
    Rng rng(21);
    for (int trial = 0; trial < 25; ++trial) {
      auto tree = random_tree(rng, 3, 2);
      if (tree.node_count() > 18) continue;
      for (int from = 0; from <= tree.steps(); ++from) {
        std::set<std::string> seen;
        for_each_stopping_time(tree, from, [&](const StoppingTime& t) {
          CHECK(t.valid(tree));
          for (NodeId n = 0; n < tree.node_count(); ++n)
            if (t.stops_at(n)) CHECK(tree.level(n) >= from);
          CHECK(seen.insert(t.canonical()).second);
        });
        CHECK(seen.size() == oracle::count_stopping_times_by_subsets(tree, from));
        CHECK(seen.size() == count_stopping_times(tree, from));
      }
    }
  }
  SUBCASE("explosion guard") {
    auto tree = FiltrationTree::uniform(6, 2);
    CHECK_THROWS_AS(enumerate_stopping_times(tree, 0, 1000), CombinatorialExplosion);
  }
}

TEST_CASE("recombining lattice") {
  auto lattice = FiltrationTree::binomial_lattice(4, Rational(1, 2));
  auto tree = FiltrationTree::uniform(4, 2);
  CHECK(lattice.recombining());
  CHECK(lattice.node_count() == 15);
  CHECK(lattice.probability(lattice.level_begin(4) + 2) == Rational(6, 16));
  CHECK_THROWS_AS(lattice.parent(3), std::logic_error);
  CHECK_THROWS_AS(predictable_projection(lattice, AdaptedProcess<Rational>(lattice.node_count())), std::logic_error);

  // A payoff of the up-move count gives the same conditional expectations.
  RandomVariable<Rational> on_lattice(5), on_tree(16);
  for (int j = 0; j <= 4; ++j) on_lattice[j] = Rational(j * j - 3, 2);
  for (NodeId leaf = tree.level_begin(4); leaf < tree.node_count(); ++leaf) {
    int ups = 0;
    auto path = tree.path_to(leaf);
    for (std::size_t i = 1; i < path.size(); ++i) ups += path[i] == tree.children(path[i - 1])[0];
    on_tree[leaf - tree.level_begin(4)] = on_lattice[ups];
  }
  CHECK(conditional_expectation(lattice, on_lattice, 0)[0] == conditional_expectation(tree, on_tree, 0)[0]);
}
