#pragma once

// End-to-end index pipeline: offline construction (subset sample -> pairwise
// dissimilarities -> canonical projection -> embedding training -> embed all
// -> q-pruning vantage-point tree) and online one-stage / two-stage queries,
// plus a versioned on-disk index format.

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "infsearch/embedding.hpp"
#include "infsearch/projection.hpp"
#include "infsearch/qcore.hpp"
#include "infsearch/vptree.hpp"

namespace infsearch {

struct IndexConfig {
  DissimilarityKind kind = DissimilarityKind::euclidean;
  QExponent q = QExponent::finite(2.0);
  ProjectionConfig projection;
  TrainConfig training;
  // 0 resolves to min(dataset size, 1000) in exact projection mode and
  // min(dataset size, 10000) in approximate mode; explicit values must lie in
  // [2, dataset size].
  std::size_t projection_subset_size = 0;
  // Output width of the embedding net; 0 resolves to min(input dim, 64).
  std::size_t embedding_dim = 0;
  // Pruning exponent for the vantage-point tree; unset means the training q.
  // Overriding (for example to 1, the plain metric rule) is an ablation knob.
  std::optional<QExponent> prune_q;
  std::uint64_t seed = 0;

  // Checks the config against a dataset of `dataset_size` points. Throws
  // invalid_input on out-of-range subset sizes or inconsistent settings.
  void validate(std::size_t dataset_size) const;
};

// Immutable after build; concurrent queries may share one index freely.
// `config` is the fully resolved echo: q is copied into the projection and
// training stages, and auto (zero) sizes are replaced by their resolved
// values, so rebuilding from the echo reproduces the index bit for bit.
struct Index {
  IndexConfig config;
  MlpParams params;
  // Overflow-guard divisor the projection applied before powering; stored so
  // the model file records the unit of its training targets.
  double target_scale = 1.0;
  RowMatrix embedded;  // point_count x embedding_dim, row i embeds point i
  VpTree tree;         // over embedded rows, Euclidean distance, q-pruning
  Dataset dataset;     // original points, kept for two-stage refinement
};

struct QueryResult {
  // Ascending by (distance, id). One-stage distances are embedded Euclidean
  // distances; two-stage distances are original dissimilarities of the
  // refined candidates.
  std::vector<Neighbor> neighbors;
  // Distance evaluations against dataset elements: tree comparisons, plus one
  // per refined candidate in the two-stage path.
  std::size_t comparisons = 0;
  double preprocess_seconds = 0.0;  // query embedding
  double search_seconds = 0.0;      // tree search (+ refinement)
};

// Offline construction. Stages, all deterministic given config.seed:
//   1. seeded uniform sample of projection_subset_size points
//   2. pairwise dissimilarities on the subset under config.kind
//   3. canonical projection of the subset at config.q (mode per config)
//   4. embedding training on (subset points, projected targets)
//   5. embed_all over the full dataset
//   6. vantage-point tree on the embedded rows, Euclidean distance,
//      q-pruning with prune_q (defaults to config.q)
Index build_index(const Dataset& data, const IndexConfig& config);

// One-stage query: embed the point (infer mode), then search the tree with
// Euclidean distances in embedding space. The dense overload requires a dense
// index and a span of the indexed width; the sparse overload requires a
// sparse index (ids beyond the indexed vocabulary contribute nothing to the
// embedding input). Embedding time and tree-search time are reported
// separately.
QueryResult query(const Index& index, std::span<const double> point,
                  std::size_t k);
QueryResult query(const Index& index, const SparseSet& point, std::size_t k);

// Two-stage query: Broad Search fetches broad_k candidates with the one-stage
// path, then Specific Search recomputes original dissimilarities for those
// candidates only and keeps the k smallest (ties by lower id). Each refined
// candidate adds one comparison. broad_k must be at least k; values beyond
// the point count fall back to refining every point (brute force).
QueryResult two_stage_query(const Index& index, std::span<const double> point,
                            std::size_t k, std::size_t broad_k);
QueryResult two_stage_query(const Index& index, const SparseSet& point,
                            std::size_t k, std::size_t broad_k);

// Versioned binary index file ("QIDX"): config echo, model section, embedded
// matrix as 64-bit floats, serialized tree, and the original dataset (64-bit
// floats or id sets) so loaded indexes answer two-stage queries identically.
// Round trips are bit-exact; load rejects bad magic, unknown versions,
// truncation, trailing bytes, and cross-section disagreements.
void save_index(const Index& index, const std::string& path);
Index load_index(const std::string& path);

}  // namespace infsearch
