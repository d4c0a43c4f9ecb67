// q-pruning vantage-point tree: balanced-median construction over an arbitrary
// distance binding and depth-first k-NN search with powered-domain pruning and
// exact comparison accounting.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "infsearch/qcore.hpp"

namespace infsearch {

enum class PruneDecision : std::uint8_t { left_only = 0, both = 1, right_only = 2 };

// Decision for a node with vantage distance d and split radius mu while the
// current k-th-best distance is tau (+inf until k results exist, which always
// yields both):
//   finite q:  left_only iff d^q <= mu^q - tau^q; right_only iff d^q > mu^q + tau^q
//   infinity:  left_only iff d <= mu and tau <= mu; right_only iff d > mu and d >= tau
// At infinity the ball nesting is exact, so the rule is sharper than the
// finite-q limit and descends by ball membership: with the query inside a
// split, every strictly-outside point sits at distance >= mu, and with it
// strictly outside, every inside point sits at exactly d. Points exactly on
// the split sphere can tie those bounds, so threshold decisions keep the
// first optimum encountered instead of chasing equal-valued alternatives;
// on strictly-leveled data they are lossless.
PruneDecision prune_decision(double d, double mu, double tau, QExponent q) noexcept;

struct VpNode {
  std::uint32_t vantage = 0;
  double mu = 0.0;           // median split radius, original value scale
  std::int32_t left = -1;    // index into the node pool, -1 = none
  std::int32_t right = -1;
};

enum class VantagePolicy : std::uint8_t {
  seeded_random = 0,   // uniform choice from the seeded generator
  first_element = 1,   // first index of the working sequence; hand-traceable
};

struct SearchStats {
  std::size_t comparisons = 0;  // distance evaluations against dataset points
  std::size_t left_only = 0;
  std::size_t both_branches = 0;
  std::size_t right_only = 0;
  bool k_clamped = false;  // k exceeded the point count; all points returned
};

struct SearchOptions {
  bool disable_pruning = false;  // force both at every node (verification aid)
};

struct Neighbor {
  std::uint32_t id = 0;
  double distance = 0.0;
};

// Immutable after build; concurrent searches may share one tree freely.
class VpTree {
 public:
  using DistanceFn = std::function<double(std::uint32_t, std::uint32_t)>;
  using QueryDistanceFn = std::function<double(std::uint32_t)>;

  VpTree() = default;

  // Recursive construction: pick a vantage per policy, sort the rest by
  // (distance, index), hand the first ceil((n-1)/2) to the left child, and
  // split at the last left distance. Left points satisfy d <= mu, right points
  // d >= mu. Throws invalid_input on duplicate indices.
  static VpTree build(std::span<const std::uint32_t> point_indices,
                      const DistanceFn& dist, QExponent q, std::uint64_t seed,
                      VantagePolicy policy = VantagePolicy::seeded_random);

  // Depth-first search: evaluates the vantage at every visited node, updates
  // the bounded worst-first result queue (ties by lower id), then branches per
  // prune_decision computed on scale-guarded powered values. In the both case
  // the side containing the query (d <= mu: left) is visited first. Results
  // come back sorted ascending by (distance, id). k = 0 throws; k beyond the
  // point count returns every point and flags the stats.
  std::vector<Neighbor> search_knn(const QueryDistanceFn& query_dist,
                                   std::size_t k, SearchStats* stats = nullptr,
                                   const SearchOptions& options = {}) const;

  std::size_t point_count() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  QExponent q() const noexcept { return q_; }
  // Overflow guard: the largest vantage distance observed during build.
  double scale() const noexcept { return scale_; }
  std::int32_t root() const noexcept { return root_; }
  const std::vector<VpNode>& nodes() const noexcept { return nodes_; }

  // Reassembles a tree from serialized parts; validates link structure and
  // vantage uniqueness.
  static VpTree from_parts(std::vector<VpNode> nodes, std::int32_t root,
                           QExponent q, double scale);

 private:
  std::vector<VpNode> nodes_;
  std::int32_t root_ = -1;
  std::size_t count_ = 0;
  QExponent q_ = QExponent::finite(1.0);
  double scale_ = 1.0;
};

}  // namespace infsearch
