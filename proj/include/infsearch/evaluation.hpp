#pragma once

// Ground truth, accuracy metrics (recall and rank order), dataset splitting,
// and the benchmark runner that sweeps q over one method and emits one
// structured report line per configuration.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "infsearch/pipeline.hpp"
#include "infsearch/qcore.hpp"
#include "infsearch/vptree.hpp"

namespace infsearch {

// Exact k-nearest neighbors per query under the original dissimilarity,
// each list ascending by (distance, id).
struct GroundTruth {
  std::size_t k = 0;
  std::vector<std::vector<Neighbor>> per_query;
};

// Exhaustive scan per query; ties broken toward the lower id. Requires
// 1 <= k <= dataset size and matching representations/widths.
GroundTruth brute_force_knn(const Dataset& data, const Dataset& queries,
                            std::size_t k, DissimilarityKind kind);

// |top-k(truth) ∩ top-k(approx)| / k. The approx list may be shorter than k;
// missing entries count as misses. k must be at least 1.
double recall_at_k(std::span<const std::uint32_t> truth_ids,
                   std::span<const std::uint32_t> approx_ids, std::size_t k);

// Mean displacement (1/k) Σ_i |i - π(approx_i)| over 1-based positions, where
// π is the position in the truth list and k+1 when absent. Both lists must
// have length exactly k.
double rank_order_abs(std::span<const std::uint32_t> truth_ids,
                      std::span<const std::uint32_t> approx_ids,
                      std::size_t k);

// The same displacement sum expressed as a percentage of the indexed size:
// Σ_i |i - π(approx_i)| * 100 / (n * k). Identically rank_order_abs * 100/n.
double rank_order_rel(std::span<const std::uint32_t> truth_ids,
                      std::span<const std::uint32_t> approx_ids, std::size_t k,
                      std::size_t indexed_size);

// Replaces each approx id by the lowest unused truth id at exactly the same
// distance when one exists, so that permutations within exact-tie groups
// collapse onto the truth order and score as perfect. Ids without an
// equally-distant unused truth slot pass through unchanged. Both lists carry
// distances under the original dissimilarity.
std::vector<std::uint32_t> canonicalize_ties(std::span<const Neighbor> truth,
                                             std::span<const Neighbor> approx);

struct SplitResult {
  Dataset index_part;
  Dataset query_part;
  // Original row ids of each partition, ascending; disjoint and exhaustive.
  std::vector<std::uint32_t> index_ids;
  std::vector<std::uint32_t> query_ids;
};

// Seeded uniform shuffle, then the first floor(ratio * n) ids (clamped so
// both sides are nonempty) become the index partition. Requires n >= 2 and
// 0 < ratio < 1.
SplitResult split_dataset(const Dataset& data, double ratio,
                          std::uint64_t seed);

enum class BenchMethod : std::uint8_t {
  one_stage = 0,        // embed + tree search
  two_stage = 1,        // broad embed search, then original-dissimilarity rerank
  projected_exact = 2,  // exact projection + query extension + tree search
  brute = 3,            // exhaustive scan under the original dissimilarity
};

const char* to_string(BenchMethod method) noexcept;

struct BenchmarkConfig {
  BenchMethod method = BenchMethod::one_stage;
  std::size_t k = 10;
  // Broad-search width for the two-stage method; must be >= k there, ignored
  // elsewhere.
  std::size_t broad_k = 0;
  std::vector<QExponent> q_sweep{QExponent::finite(2.0)};
  // Template for the learned methods; q is overwritten per sweep point. The
  // kind and seed apply to every method.
  IndexConfig index;
  // Timed passes over the query set after one untimed warm-up pass.
  std::size_t repetitions = 1;

  void validate(std::size_t indexed_size) const;
};

struct MetricsReport {
  std::string method;
  QExponent q = QExponent::finite(1.0);
  std::size_t k = 0;
  std::size_t indexed_size = 0;
  std::size_t query_count = 0;
  double recall = 0.0;
  double rank_order_abs_mean = 0.0;
  double rank_order_abs_std = 0.0;
  double rank_order_rel_mean = 0.0;
  double rank_order_rel_std = 0.0;
  double comparisons_mean = 0.0;
  double comparisons_std = 0.0;
  std::size_t comparisons_max = 0;
  double qps_excl = 0.0;  // queries per second, preprocessing excluded
  double qps_incl = 0.0;  // queries per second, preprocessing included
};

// One line of structured text (JSON object, no trailing newline) with exactly
// the report fields: method, q, k, recall, rank_order_abs, rank_order_rel,
// comparisons_mean, comparisons_max, qps_excl, qps_incl. The exponent is a
// number when finite and the string "inf" otherwise.
std::string to_jsonl(const MetricsReport& report);

// Runs the configured method once per sweep exponent against the query set:
// builds (or projects) per exponent, computes ground truth once, scores every
// query with tie-canonicalized metrics, and times one warm-up pass plus
// `repetitions` serial timed passes on a monotonic clock. Deterministic given
// seeds; metric aggregation is order-independent over queries.
std::vector<MetricsReport> run_benchmark(const Dataset& index_part,
                                         const Dataset& query_part,
                                         const BenchmarkConfig& config);

}  // namespace infsearch
