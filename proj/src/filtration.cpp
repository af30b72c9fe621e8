#include "procrisk/filtration.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace procrisk {

namespace {

std::vector<double> default_grid(int steps, double horizon) {
  std::vector<double> t(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) t[k] = horizon * k / steps;
  return t;
}

}  // namespace

FiltrationTree FiltrationTree::grow(int steps, const Branching& branch, std::vector<double> times) {
  if (steps < 0) throw std::invalid_argument("FiltrationTree: negative step count");
  FiltrationTree tree;
  tree.steps_ = steps;
  tree.level_offset_ = {0, 1};
  tree.level_ = {0};
  tree.parent_ = {0};
  tree.edge_prob_ = {Rational(1)};
  tree.node_prob_ = {Rational(1)};
  tree.child_offset_ = {0};

  for (int k = 0; k < steps; ++k) {
    for (NodeId n = tree.level_offset_[k]; n < tree.level_offset_[k + 1]; ++n) {
      auto probs = branch(n, k);
      if (probs.empty()) throw std::invalid_argument("FiltrationTree: non-terminal node without children");
      for (auto& p : probs) {
        tree.child_index_.push_back(tree.level_.size());
        tree.child_prob_.push_back(p);
        tree.level_.push_back(k + 1);
        tree.parent_.push_back(n);
        tree.edge_prob_.push_back(p);
        tree.node_prob_.push_back(tree.node_prob_[n] * p);
      }
      tree.child_offset_.push_back(tree.child_index_.size());
    }
    tree.level_offset_.push_back(tree.level_.size());
  }
  for (NodeId n = tree.level_offset_[steps]; n < tree.level_.size(); ++n) {
    tree.child_offset_.push_back(tree.child_index_.size());
  }
  tree.finish(times.empty() ? default_grid(steps, 1.0) : std::move(times));
  return tree;
}

FiltrationTree FiltrationTree::uniform(int steps, int branching, double horizon) {
  if (branching < 1) throw std::invalid_argument("FiltrationTree: branching must be positive");
  std::vector<Rational> probs(static_cast<std::size_t>(branching), Rational(1, branching));
  return grow(steps, [&](NodeId, int) { return probs; }, default_grid(steps, horizon));
}

FiltrationTree FiltrationTree::binomial_lattice(int steps, const Rational& p_up, double horizon) {
  if (steps < 0) throw std::invalid_argument("FiltrationTree: negative step count");
  FiltrationTree tree;
  tree.steps_ = steps;
  tree.recombining_ = true;
  const Rational p_down = Rational(1) - p_up;
  for (int k = 0; k <= steps; ++k) {
    tree.level_offset_.push_back(tree.level_.size());
    for (int j = 0; j <= k; ++j) tree.level_.push_back(k);
  }
  tree.level_offset_.push_back(tree.level_.size());
  tree.child_offset_ = {0};
  for (int k = 0; k <= steps; ++k) {
    for (int j = 0; j <= k; ++j) {
      if (k < steps) {
        const NodeId base = tree.level_offset_[k + 1];
        tree.child_index_.push_back(base + j + 1);
        tree.child_prob_.push_back(p_up);
        tree.child_index_.push_back(base + j);
        tree.child_prob_.push_back(p_down);
      }
      tree.child_offset_.push_back(tree.child_index_.size());
    }
  }
  tree.node_prob_.assign(tree.level_.size(), Rational(0));
  tree.node_prob_[0] = 1;
  for (int k = 0; k < steps; ++k) {
    for (NodeId n = tree.level_offset_[k]; n < tree.level_offset_[k + 1]; ++n) {
      auto kids = tree.children(n);
      auto probs = tree.child_probabilities(n);
      for (std::size_t i = 0; i < kids.size(); ++i) tree.node_prob_[kids[i]] += tree.node_prob_[n] * probs[i];
    }
  }
  tree.finish(default_grid(steps, horizon));
  return tree;
}

void FiltrationTree::finish(std::vector<double> times) {
  if (times.size() != static_cast<std::size_t>(steps_) + 1) {
    throw std::invalid_argument("FiltrationTree: time grid needs steps + 1 points");
  }
  times_ = std::move(times);
  validate();
}

void FiltrationTree::validate() const {
  if (times_.front() != 0.0) throw std::logic_error("FiltrationTree: grid must start at 0");
  for (std::size_t k = 1; k < times_.size(); ++k) {
    if (!(times_[k] > times_[k - 1])) throw std::logic_error("FiltrationTree: grid not increasing");
  }
  if (level_size(0) != 1) throw std::logic_error("FiltrationTree: level 0 must be a single root");
  for (NodeId n = 0; n < node_count(); ++n) {
    auto probs = child_probabilities(n);
    if (is_leaf(n)) {
      if (!probs.empty()) throw std::logic_error("FiltrationTree: leaf with children");
      continue;
    }
    if (probs.empty()) throw std::logic_error("FiltrationTree: path ends before the horizon");
    Rational total(0);
    for (const auto& p : probs) {
      if (p <= 0 || p > 1) throw std::logic_error("FiltrationTree: transition probability outside (0,1]");
      total += p;
    }
    if (total != 1) throw std::logic_error("FiltrationTree: child probabilities do not sum to 1");
    for (NodeId c : children(n)) {
      if (level_[c] != level_[n] + 1) throw std::logic_error("FiltrationTree: child not on next level");
      if (!recombining_ && parent_[c] != n) throw std::logic_error("FiltrationTree: parent link mismatch");
    }
  }
}

void FiltrationTree::require_tree(const char* what) const {
  if (recombining_) throw std::logic_error(std::string(what) + ": requires a non-recombining tree");
}

NodeId FiltrationTree::parent(NodeId n) const {
  require_tree("parent");
  if (n == 0) throw std::out_of_range("parent: the root has no parent");
  return parent_[n];
}

const Rational& FiltrationTree::edge_probability(NodeId n) const {
  require_tree("edge_probability");
  return edge_prob_[n];
}

std::vector<NodeId> FiltrationTree::path_to(NodeId n) const {
  require_tree("path_to");
  std::vector<NodeId> path(static_cast<std::size_t>(level_[n]) + 1);
  for (int k = level_[n]; k >= 0; --k) {
    path[k] = n;
    if (k > 0) n = parent_[n];
  }
  return path;
}

NodeId FiltrationTree::ancestor(NodeId n, int level) const {
  require_tree("ancestor");
  if (level < 0 || level > level_[n]) throw std::out_of_range("ancestor: level out of range");
  while (level_[n] > level) n = parent_[n];
  return n;
}

std::span<const NodeId> FiltrationTree::siblings(NodeId n) const {
  if (n == 0) return {child_index_.data(), 0};
  return children(parent(n));
}

bool StoppingTime::valid(const FiltrationTree& tree) const {
  if (stop.size() != tree.node_count()) return false;
  for (NodeId leaf = tree.level_begin(tree.steps()); leaf < tree.node_count(); ++leaf) {
    int marks = 0;
    for (NodeId n : tree.path_to(leaf)) marks += stop[n] ? 1 : 0;
    if (marks != 1) return false;
  }
  return true;
}

std::string StoppingTime::canonical() const {
  std::ostringstream out;
  bool first = true;
  for (NodeId n = 0; n < stop.size(); ++n) {
    if (!stop[n]) continue;
    if (!first) out << ',';
    out << n;
    first = false;
  }
  return out.str();
}

int StoppingTime::level_on_path(const FiltrationTree& tree, NodeId leaf) const {
  for (NodeId n : tree.path_to(leaf)) {
    if (stop[n]) return tree.level(n);
  }
  throw std::logic_error("StoppingTime: path without a mark");
}

StoppingTime StoppingTime::constant(const FiltrationTree& tree, int level) {
  StoppingTime t;
  t.stop.assign(tree.node_count(), 0);
  for (NodeId n = tree.level_begin(level); n < tree.level_end(level); ++n) t.stop[n] = 1;
  return t;
}

namespace {

using Count = std::uint64_t;
constexpr Count kSaturated = std::numeric_limits<Count>::max();

Count saturating_mul(Count a, Count b) {
  if (a != 0 && b > kSaturated / a) return kSaturated;
  return a * b;
}

Count saturating_add(Count a, Count b) { return b > kSaturated - a ? kSaturated : a + b; }

// S(leaf) = 1, S(n) = 1 + prod S(children).
std::vector<Count> subtree_counts(const FiltrationTree& tree) {
  std::vector<Count> s(tree.node_count(), 1);
  for (NodeId n = tree.level_begin(tree.steps()); n-- > 0;) {
    Count prod = 1;
    for (NodeId c : tree.children(n)) prod = saturating_mul(prod, s[c]);
    s[n] = saturating_add(1, prod);
  }
  return s;
}

// Each option is the list of nodes marked inside the subtree of n.
using Options = std::vector<std::vector<NodeId>>;

Options subtree_options(const FiltrationTree& tree, NodeId n) {
  Options out{{n}};
  if (tree.is_leaf(n)) return out;
  Options combined{{}};
  for (NodeId c : tree.children(n)) {
    Options child = subtree_options(tree, c);
    Options next;
    next.reserve(combined.size() * child.size());
    for (const auto& left : combined) {
      for (const auto& right : child) {
        auto merged = left;
        merged.insert(merged.end(), right.begin(), right.end());
        next.push_back(std::move(merged));
      }
    }
    combined = std::move(next);
  }
  out.insert(out.end(), combined.begin(), combined.end());
  return out;
}

}  // namespace

std::uint64_t count_stopping_times(const FiltrationTree& tree, int from_level) {
  if (tree.recombining()) throw std::logic_error("count_stopping_times: requires a non-recombining tree");
  if (from_level < 0 || from_level > tree.steps()) throw std::out_of_range("count_stopping_times: level out of range");
  auto s = subtree_counts(tree);
  Count total = 1;
  for (NodeId n = tree.level_begin(from_level); n < tree.level_end(from_level); ++n) total = saturating_mul(total, s[n]);
  return total;
}

void for_each_stopping_time(const FiltrationTree& tree, int from_level,
                            const std::function<void(const StoppingTime&)>& visit, std::uint64_t limit) {
  const Count total = count_stopping_times(tree, from_level);
  if (total > limit) {
    throw CombinatorialExplosion("enumerate_stopping_times: " +
                                 (total == kSaturated ? std::string("too many") : std::to_string(total)) +
                                 " stopping times exceed the limit " + std::to_string(limit) +
                                 "; use the dynamic-programming evaluator");
  }
  std::vector<Options> per_root;
  for (NodeId n = tree.level_begin(from_level); n < tree.level_end(from_level); ++n) {
    per_root.push_back(subtree_options(tree, n));
  }
  std::vector<std::size_t> choice(per_root.size(), 0);
  StoppingTime tau;
  while (true) {
    tau.stop.assign(tree.node_count(), 0);
    for (std::size_t r = 0; r < per_root.size(); ++r) {
      for (NodeId n : per_root[r][choice[r]]) tau.stop[n] = 1;
    }
    visit(tau);
    std::size_t r = 0;
    while (r < choice.size() && ++choice[r] == per_root[r].size()) choice[r++] = 0;
    if (r == choice.size()) break;
  }
}

std::vector<StoppingTime> enumerate_stopping_times(const FiltrationTree& tree, int from_level, std::uint64_t limit) {
  std::vector<StoppingTime> out;
  for_each_stopping_time(tree, from_level, [&](const StoppingTime& t) { out.push_back(t); }, limit);
  return out;
}

}  // namespace procrisk
