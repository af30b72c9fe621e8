#include "procrisk/random.hpp"

namespace procrisk {

FiltrationTree random_tree(Rng& rng, int max_depth, int max_branching, int min_depth) {
  const int depth = rng.uniform_int(min_depth, max_depth);
  return FiltrationTree::grow(depth, [&](NodeId, int) {
    const int b = rng.uniform_int(1, max_branching);
    std::vector<int> w(static_cast<std::size_t>(b));
    int total = 0;
    for (auto& x : w) total += (x = rng.uniform_int(1, 4));
    std::vector<Rational> probs;
    for (int x : w) probs.emplace_back(x, total);
    return probs;
  });
}

AdaptedProcess<Rational> random_process(Rng& rng, const FiltrationTree& tree, int range, int max_den) {
  AdaptedProcess<Rational> x(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) x[n] = rng.rational(-range, range, max_den);
  return x;
}

namespace {

AdaptedProcess<Rational> normalize(const FiltrationTree& tree, AdaptedProcess<Rational> a) {
  Rational mass(0);
  for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) mass += tree.probability(n) * a[n];
  if (mass == 0) {
    for (NodeId n = tree.level_begin(tree.steps()); n < tree.node_count(); ++n) a[n] = 1;
    mass = 1;
  }
  a.values /= mass;
  a.pre_time_zero = Rational(0);
  return a;
}

}  // namespace

AdaptedProcess<Rational> random_z1_measure(Rng& rng, const FiltrationTree& tree, double zero_prob) {
  AdaptedProcess<Rational> a(tree.node_count());
  for (NodeId n = 0; n < tree.node_count(); ++n) {
    const Rational before = n == 0 ? Rational(0) : a[tree.parent(n)];
    a[n] = before + (rng.coin(zero_prob) ? Rational(0) : Rational(rng.uniform_int(1, 3)));
  }
  return normalize(tree, std::move(a));
}

AdaptedProcess<Rational> random_predictable_measure(Rng& rng, const FiltrationTree& tree, double zero_prob,
                                                    bool allow_root_mass) {
  AdaptedProcess<Rational> a(tree.node_count());
  if (allow_root_mass && !rng.coin(zero_prob)) a[0] = rng.uniform_int(1, 3);
  for (NodeId p = 0; p < tree.level_begin(tree.steps()); ++p) {
    const Rational jump = rng.coin(zero_prob) ? Rational(0) : Rational(rng.uniform_int(1, 3));
    for (NodeId c : tree.children(p)) a[c] = a[p] + jump;
  }
  auto out = normalize(tree, std::move(a));
  out.predictable = true;
  return out;
}

AdaptedProcess<Rational> random_martingale(Rng& rng, const FiltrationTree& tree, const Rational& start, bool zeros) {
  RandomVariable<Rational> leaf(static_cast<Eigen::Index>(tree.leaf_count()));
  for (Eigen::Index i = 0; i < leaf.size(); ++i) {
    leaf[i] = (zeros && rng.coin(0.3)) ? Rational(0) : Rational(rng.uniform_int(1, 5));
  }
  if (leaf.isZero()) leaf.setConstant(Rational(1));
  auto m = closing_martingale(tree, leaf);
  const Rational scale = start / m[0];
  m.values *= scale;
  return m;
}

AdaptedProcess<Rational> random_discount(Rng& rng, const FiltrationTree& tree, bool predictable, bool no_jump_at_zero) {
  AdaptedProcess<Rational> d(tree.node_count());
  auto shrink = [&](const Rational& v) {
    if (rng.coin(0.4)) return v;
    if (rng.coin(0.15)) return Rational(0);
    return v * Rational(rng.uniform_int(1, 4), 4);
  };
  d[0] = no_jump_at_zero ? Rational(1) : shrink(Rational(1));
  for (NodeId p = 0; p < tree.level_begin(tree.steps()); ++p) {
    if (predictable) {
      const Rational v = shrink(d[p]);
      for (NodeId c : tree.children(p)) d[c] = v;
    } else {
      for (NodeId c : tree.children(p)) d[c] = shrink(d[p]);
    }
  }
  d.pre_time_zero = Rational(1);
  d.predictable = predictable;
  return d;
}

}  // namespace procrisk
