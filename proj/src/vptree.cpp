#include "infsearch/vptree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <random>
#include <unordered_set>
#include <utility>

namespace infsearch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Builder {
  const VpTree::DistanceFn& dist;
  VantagePolicy policy;
  std::mt19937_64 rng;
  std::vector<VpNode> nodes;
  double max_distance = 0.0;

  std::int32_t build(std::vector<std::uint32_t> items) {
    if (items.empty()) return -1;
    std::size_t pick = 0;
    if (policy == VantagePolicy::seeded_random && items.size() > 1) {
      pick = std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng);
    }
    const std::uint32_t vantage = items[pick];
    items.erase(items.begin() + static_cast<std::ptrdiff_t>(pick));

    const std::int32_t id = static_cast<std::int32_t>(nodes.size());
    nodes.push_back(VpNode{vantage, 0.0, -1, -1});
    if (items.empty()) return id;

    std::vector<std::pair<double, std::uint32_t>> by_dist(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      const double d = dist(vantage, items[i]);
      max_distance = std::max(max_distance, d);
      by_dist[i] = {d, items[i]};
    }
    std::sort(by_dist.begin(), by_dist.end());

    const std::size_t left_n = (by_dist.size() + 1) / 2;
    nodes[static_cast<std::size_t>(id)].mu = by_dist[left_n - 1].first;

    std::vector<std::uint32_t> side;
    side.reserve(left_n);
    for (std::size_t i = 0; i < left_n; ++i) side.push_back(by_dist[i].second);
    const std::int32_t left = build(std::move(side));

    side.clear();
    for (std::size_t i = left_n; i < by_dist.size(); ++i) {
      side.push_back(by_dist[i].second);
    }
    const std::int32_t right = build(std::move(side));

    nodes[static_cast<std::size_t>(id)].left = left;
    nodes[static_cast<std::size_t>(id)].right = right;
    return id;
  }
};

// Bounded worst-first queue: keeps the k smallest (distance, id) pairs.
class ResultQueue {
 public:
  explicit ResultQueue(std::size_t k) : k_(k) {}

  void offer(double d, std::uint32_t id) {
    const std::pair<double, std::uint32_t> item{d, id};
    if (heap_.size() < k_) {
      heap_.push(item);
    } else if (item < heap_.top()) {
      heap_.pop();
      heap_.push(item);
    }
  }

  double tau() const { return heap_.size() == k_ ? heap_.top().first : kInf; }

  std::vector<Neighbor> sorted_ascending() {
    std::vector<Neighbor> out(heap_.size());
    for (std::size_t i = heap_.size(); i-- > 0;) {
      out[i] = {heap_.top().second, heap_.top().first};
      heap_.pop();
    }
    return out;
  }

 private:
  std::size_t k_;
  std::priority_queue<std::pair<double, std::uint32_t>> heap_;
};

}  // namespace

PruneDecision prune_decision(double d, double mu, double tau, QExponent q) noexcept {
  if (q.is_infinity()) {
    // At infinity the ball nesting is exact and search descends by ball
    // membership: with d inside the split, every strictly-outside point sits
    // at distance >= mu from the query, so the right side is skippable as
    // soon as tau <= mu; with d strictly outside, every inside point sits at
    // exactly d. Points on the split sphere itself can tie those bounds, so
    // threshold decisions keep the first optimum encountered rather than
    // chasing equal-valued alternatives.
    if (d <= mu && tau <= mu) return PruneDecision::left_only;
    if (d > mu && d >= tau) return PruneDecision::right_only;
    return PruneDecision::both;
  }
  const double p = q.value_or_inf();
  const double dq = std::pow(d, p);
  const double muq = std::pow(mu, p);
  const double tauq = std::pow(tau, p);  // +inf tau keeps both sides open
  if (dq <= muq - tauq) return PruneDecision::left_only;
  if (dq > muq + tauq) return PruneDecision::right_only;
  return PruneDecision::both;
}

VpTree VpTree::build(std::span<const std::uint32_t> point_indices,
                     const DistanceFn& dist, QExponent q, std::uint64_t seed,
                     VantagePolicy policy) {
  std::unordered_set<std::uint32_t> seen(point_indices.begin(), point_indices.end());
  if (seen.size() != point_indices.size()) {
    throw invalid_input("duplicate point indices in vp-tree build");
  }
  Builder builder{dist, policy, std::mt19937_64(seed), {}, 0.0};
  builder.nodes.reserve(point_indices.size());
  VpTree tree;
  tree.root_ = builder.build(
      std::vector<std::uint32_t>(point_indices.begin(), point_indices.end()));
  tree.nodes_ = std::move(builder.nodes);
  tree.count_ = point_indices.size();
  tree.q_ = q;
  tree.scale_ = builder.max_distance > 0.0 ? builder.max_distance : 1.0;
  return tree;
}

VpTree VpTree::from_parts(std::vector<VpNode> nodes, std::int32_t root,
                          QExponent q, double scale) {
  const auto n = static_cast<std::int32_t>(nodes.size());
  if ((root < 0) != nodes.empty() || root >= n) {
    throw format_error("vp-tree root out of range");
  }
  std::unordered_set<std::uint32_t> vantages;
  std::vector<char> referenced(nodes.size(), 0);
  for (const auto& node : nodes) {
    if (!vantages.insert(node.vantage).second) {
      throw format_error("vp-tree vantage appears twice");
    }
    for (std::int32_t child : {node.left, node.right}) {
      if (child < -1 || child >= n) throw format_error("vp-tree child out of range");
      if (child >= 0) {
        if (referenced[static_cast<std::size_t>(child)]) {
          throw format_error("vp-tree child referenced twice");
        }
        referenced[static_cast<std::size_t>(child)] = 1;
      }
    }
  }
  if (root >= 0 && referenced[static_cast<std::size_t>(root)]) {
    throw format_error("vp-tree root is referenced as a child");
  }
  VpTree tree;
  tree.nodes_ = std::move(nodes);
  tree.root_ = root;
  tree.count_ = tree.nodes_.size();
  tree.q_ = q;
  tree.scale_ = scale > 0.0 ? scale : 1.0;
  return tree;
}

std::vector<Neighbor> VpTree::search_knn(const QueryDistanceFn& query_dist,
                                         std::size_t k, SearchStats* stats,
                                         const SearchOptions& options) const {
  if (k == 0) throw invalid_input("k must be >= 1");
  SearchStats local;
  SearchStats& st = stats ? *stats : local;
  st = SearchStats{};
  if (k > count_) {
    st.k_clamped = true;
    k = count_;
  }
  if (root_ < 0) return {};

  ResultQueue queue(k);
  // Powered comparisons need the overflow guard; at infinity there is no
  // powering, and skipping the division keeps equality comparisons exact.
  const double s = q_.is_infinity() ? 1.0 : scale_;

  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const VpNode& node = nodes_[static_cast<std::size_t>(id)];
    const double d = query_dist(node.vantage);
    ++st.comparisons;
    queue.offer(d, node.vantage);
    if (node.left < 0 && node.right < 0) return;

    PruneDecision dec = PruneDecision::both;
    if (!options.disable_pruning) {
      dec = prune_decision(d / s, node.mu / s, queue.tau() / s, q_);
    }
    switch (dec) {
      case PruneDecision::left_only:
        ++st.left_only;
        if (node.left >= 0) self(self, node.left);
        break;
      case PruneDecision::right_only:
        ++st.right_only;
        if (node.right >= 0) self(self, node.right);
        break;
      case PruneDecision::both: {
        ++st.both_branches;
        const bool left_first = d <= node.mu;
        const std::int32_t first = left_first ? node.left : node.right;
        const std::int32_t second = left_first ? node.right : node.left;
        if (first >= 0) self(self, first);
        if (second >= 0) self(self, second);
        break;
      }
    }
  };
  visit(visit, root_);
  return queue.sorted_ascending();
}

}  // namespace infsearch
