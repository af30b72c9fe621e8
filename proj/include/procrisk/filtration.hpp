#pragma once

#include "procrisk/scalar.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace procrisk {

using NodeId = std::size_t;

/// Finite filtered probability space stored as an event tree.
///
/// Nodes are numbered level by level (root = 0); the nodes of level k occupy
/// the index range [level_begin(k), level_end(k)). Every path has exactly
/// `steps()` transitions, so the leaves are precisely the nodes of the last
/// level. Transition probabilities are exact rationals in (0, 1] summing to one
/// at every non-terminal node.
///
/// In recombining (lattice) mode node (k, j) is shared by all paths with j
/// up-moves. Only one-step operations are available there; anything that needs
/// the unique parent of a node (predictable projection, stopping-time
/// enumeration, decompositions) throws std::logic_error.
class FiltrationTree {
 public:
  using Branching = std::function<std::vector<Rational>(NodeId node, int level)>;

  /// Non-recombining tree: `branch` returns the transition probabilities from
  /// `node` to its children (children are created in that order).
  static FiltrationTree grow(int steps, const Branching& branch, std::vector<double> times = {});

  /// Every non-terminal node has `branching` children of probability 1/branching.
  static FiltrationTree uniform(int steps, int branching, double horizon = 1.0);

  /// Recombining binomial lattice; child 0 of every node is the up move.
  static FiltrationTree binomial_lattice(int steps, const Rational& p_up, double horizon = 1.0);

  int steps() const { return steps_; }
  double horizon() const { return times_.back(); }
  std::span<const double> times() const { return times_; }
  double time(int level) const { return times_.at(static_cast<std::size_t>(level)); }
  double dt(int level) const { return times_.at(level + 1) - times_.at(level); }

  bool recombining() const { return recombining_; }
  std::size_t node_count() const { return level_.size(); }
  std::size_t leaf_count() const { return level_size(steps_); }

  NodeId level_begin(int k) const { return level_offset_.at(k); }
  NodeId level_end(int k) const { return level_offset_.at(k + 1); }
  std::size_t level_size(int k) const { return level_end(k) - level_begin(k); }
  int level(NodeId n) const { return level_[n]; }
  bool is_leaf(NodeId n) const { return level_[n] == steps_; }

  std::span<const NodeId> children(NodeId n) const {
    return {child_index_.data() + child_offset_[n], child_offset_[n + 1] - child_offset_[n]};
  }
  std::span<const Rational> child_probabilities(NodeId n) const {
    return {child_prob_.data() + child_offset_[n], child_offset_[n + 1] - child_offset_[n]};
  }

  /// Unique parent (non-recombining trees only); the root has none.
  NodeId parent(NodeId n) const;
  /// P(reach child | at parent), non-recombining trees only.
  const Rational& edge_probability(NodeId n) const;
  /// Unconditional probability of the node's event (sum over paths on lattices).
  const Rational& probability(NodeId n) const { return node_prob_[n]; }

  /// Root-to-node path (non-recombining trees only).
  std::vector<NodeId> path_to(NodeId n) const;
  /// Ancestor of `n` at `level` (non-recombining trees only).
  NodeId ancestor(NodeId n, int level) const;
  /// Children of the parent of n, including n itself.
  std::span<const NodeId> siblings(NodeId n) const;

  /// Position within the level (the up-move count j on a lattice).
  std::size_t index_in_level(NodeId n) const { return n - level_begin(level_[n]); }

  /// Re-checks every structural invariant; throws std::logic_error on failure.
  void validate() const;

 private:
  FiltrationTree() = default;
  void finish(std::vector<double> times);
  void require_tree(const char* what) const;

  int steps_ = 0;
  bool recombining_ = false;
  std::vector<double> times_;
  std::vector<NodeId> level_offset_;
  std::vector<int> level_;
  std::vector<NodeId> parent_;
  std::vector<std::size_t> child_offset_;
  std::vector<NodeId> child_index_;
  std::vector<Rational> child_prob_;
  std::vector<Rational> edge_prob_;
  std::vector<Rational> node_prob_;
};

/// Node-indexed process. `pre_time_zero` carries the X_{0-} convention value
/// where one is needed (a_{0-} = 0, D_{0-} = 1, L_{0-}).
template <typename Scalar>
struct AdaptedProcess {
  Vector<Scalar> values;
  std::optional<Scalar> pre_time_zero;
  bool predictable = false;

  AdaptedProcess() = default;
  explicit AdaptedProcess(std::size_t nodes, const Scalar& fill = Scalar(0))
      : values(Vector<Scalar>::Constant(static_cast<Eigen::Index>(nodes), fill)) {}
  explicit AdaptedProcess(Vector<Scalar> v) : values(std::move(v)) {}

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  Scalar& operator[](NodeId n) { return values[static_cast<Eigen::Index>(n)]; }
  const Scalar& operator[](NodeId n) const { return values[static_cast<Eigen::Index>(n)]; }

  /// Value just before `n`: the parent value, or pre_time_zero (default 0) at the root.
  Scalar left_limit(const FiltrationTree& tree, NodeId n) const {
    if (n == 0) return pre_time_zero.value_or(Scalar(0));
    return (*this)[tree.parent(n)];
  }

  friend bool operator==(const AdaptedProcess& a, const AdaptedProcess& b) {
    return a.values.size() == b.values.size() && a.values == b.values &&
           a.pre_time_zero == b.pre_time_zero;
  }
};

/// Values on the nodes of a single level. A RandomVariable is the slice on
/// the leaves (F_T-measurable payoff).
template <typename Scalar>
using LevelSlice = Vector<Scalar>;
template <typename Scalar>
using RandomVariable = Vector<Scalar>;

/// Process-constructor helpers. `single_payment(tree, m, t)` is m·1_{[t,T]}.
template <typename Scalar>
AdaptedProcess<Scalar> constant_process(const FiltrationTree& tree, const Scalar& c) {
  return AdaptedProcess<Scalar>(tree.node_count(), c);
}

template <typename Scalar>
AdaptedProcess<Scalar> single_payment(const FiltrationTree& tree, const Scalar& m, int from_level) {
  AdaptedProcess<Scalar> x(tree.node_count());
  for (NodeId n = tree.level_begin(from_level); n < tree.node_count(); ++n) x[n] = m;
  return x;
}

/// X + m·1_{[t,T]} for a constant m.
template <typename Scalar>
AdaptedProcess<Scalar> add_payment(const FiltrationTree& tree, AdaptedProcess<Scalar> x, int level, const Scalar& m) {
  for (NodeId n = tree.level_begin(level); n < tree.node_count(); ++n) x[n] += m;
  return x;
}

/// X + m·1_{[t,T]} where m is F_t-measurable, given as a level-t slice.
/// Non-recombining trees only (descendants resolve their level-t ancestor).
template <typename Scalar>
AdaptedProcess<Scalar> add_payment(const FiltrationTree& tree, AdaptedProcess<Scalar> x,
                                   int level, const LevelSlice<Scalar>& m) {
  const NodeId begin = tree.level_begin(level);
  for (NodeId n = begin; n < tree.node_count(); ++n) {
    x[n] += m[static_cast<Eigen::Index>(tree.ancestor(n, level) - begin)];
  }
  return x;
}

/// Extracts the level-k values of a process.
template <typename Scalar>
LevelSlice<Scalar> level_slice(const FiltrationTree& tree, const AdaptedProcess<Scalar>& x, int k) {
  return x.values.segment(static_cast<Eigen::Index>(tree.level_begin(k)),
                          static_cast<Eigen::Index>(tree.level_size(k)));
}

/// E[x_{k+1} | node] for a node at level k < N.
template <typename Scalar>
Scalar one_step_expectation(const FiltrationTree& tree, const AdaptedProcess<Scalar>& x, NodeId n) {
  Scalar acc(0);
  auto kids = tree.children(n);
  auto probs = tree.child_probabilities(n);
  for (std::size_t i = 0; i < kids.size(); ++i) acc += from_rational<Scalar>(probs[i]) * x[kids[i]];
  return acc;
}

/// E[rv | F_to] where rv is a slice at level `from` (default: the leaves).
template <typename Scalar>
LevelSlice<Scalar> conditional_expectation(const FiltrationTree& tree, const LevelSlice<Scalar>& rv,
                                           int to_level, std::optional<int> from_level = std::nullopt) {
  const int from = from_level.value_or(tree.steps());
  if (from < 0 || from > tree.steps() || to_level < 0 || to_level > from) {
    throw std::out_of_range("conditional_expectation: level out of range");
  }
  if (static_cast<std::size_t>(rv.size()) != tree.level_size(from)) {
    throw std::invalid_argument("conditional_expectation: slice size does not match level");
  }
  LevelSlice<Scalar> current = rv;
  for (int k = from - 1; k >= to_level; --k) {
    LevelSlice<Scalar> next(static_cast<Eigen::Index>(tree.level_size(k)));
    const NodeId child_base = tree.level_begin(k + 1);
    for (NodeId n = tree.level_begin(k); n < tree.level_end(k); ++n) {
      Scalar acc(0);
      auto kids = tree.children(n);
      auto probs = tree.child_probabilities(n);
      for (std::size_t i = 0; i < kids.size(); ++i) {
        acc += from_rational<Scalar>(probs[i]) * current[static_cast<Eigen::Index>(kids[i] - child_base)];
      }
      next[static_cast<Eigen::Index>(n - tree.level_begin(k))] = acc;
    }
    current = std::move(next);
  }
  return current;
}

/// The martingale M_k = E[rv | F_k] as a process on every node.
template <typename Scalar>
AdaptedProcess<Scalar> closing_martingale(const FiltrationTree& tree, const RandomVariable<Scalar>& rv) {
  if (static_cast<std::size_t>(rv.size()) != tree.leaf_count()) {
    throw std::invalid_argument("closing_martingale: random variable must be total on leaves");
  }
  AdaptedProcess<Scalar> m(tree.node_count());
  m.values.tail(static_cast<Eigen::Index>(tree.leaf_count())) = rv;
  for (int k = tree.steps() - 1; k >= 0; --k) {
    for (NodeId n = tree.level_begin(k); n < tree.level_end(k); ++n) m[n] = one_step_expectation(tree, m, n);
  }
  return m;
}

/// Predictable projection: the level-k value at n is E[x_k | F_{k-1}] evaluated
/// at the parent of n (sibling-weighted average); the root value is kept.
template <typename Scalar>
AdaptedProcess<Scalar> predictable_projection(const FiltrationTree& tree, const AdaptedProcess<Scalar>& x) {
  if (tree.recombining()) throw std::logic_error("predictable_projection: requires a non-recombining tree");
  AdaptedProcess<Scalar> out(tree.node_count());
  out[0] = x[0];
  for (int k = 0; k < tree.steps(); ++k) {
    for (NodeId p = tree.level_begin(k); p < tree.level_end(k); ++p) {
      const Scalar avg = one_step_expectation(tree, x, p);
      for (NodeId c : tree.children(p)) out[c] = avg;
    }
  }
  out.pre_time_zero = x.pre_time_zero;
  out.predictable = true;
  return out;
}

/// True when every level-k value agrees across siblings.
template <typename Scalar>
bool is_predictable(const FiltrationTree& tree, const AdaptedProcess<Scalar>& x) {
  if (tree.recombining()) throw std::logic_error("is_predictable: requires a non-recombining tree");
  for (NodeId p = 0; p < tree.level_begin(tree.steps()); ++p) {
    auto kids = tree.children(p);
    for (NodeId c : kids) {
      if (x[c] != x[kids.front()]) return false;
    }
  }
  return true;
}

/// ||X||_{R∞} = max over nodes of |X|.
template <typename Scalar>
Scalar sup_norm(const AdaptedProcess<Scalar>& x) {
  if (x.values.size() == 0) return Scalar(0);
  return x.values.cwiseAbs().maxCoeff();
}

/// One "stop here" flag per node; along every root-to-leaf path exactly one
/// node is marked.
struct StoppingTime {
  std::vector<char> stop;

  bool stops_at(NodeId n) const { return stop[n] != 0; }
  /// Every path carries exactly one mark (non-recombining trees).
  bool valid(const FiltrationTree& tree) const;
  /// Same marks, sorted node list, e.g. "0" or "1,2".
  std::string canonical() const;
  /// Level of the mark on the path through `leaf`.
  int level_on_path(const FiltrationTree& tree, NodeId leaf) const;

  static StoppingTime constant(const FiltrationTree& tree, int level);

  friend bool operator==(const StoppingTime&, const StoppingTime&) = default;
};

class CombinatorialExplosion : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Number of stopping times τ with τ >= from_level; saturates at UINT64_MAX.
std::uint64_t count_stopping_times(const FiltrationTree& tree, int from_level);

/// Every stopping time τ >= from_level exactly once. Throws
/// CombinatorialExplosion when the count exceeds `limit`; use the
/// dynamic-programming evaluators in that case.
std::vector<StoppingTime> enumerate_stopping_times(const FiltrationTree& tree, int from_level,
                                                   std::uint64_t limit = 200000);

void for_each_stopping_time(const FiltrationTree& tree, int from_level,
                            const std::function<void(const StoppingTime&)>& visit,
                            std::uint64_t limit = 200000);

}  // namespace procrisk
