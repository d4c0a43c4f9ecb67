// Canonical q-metric projection: replaces each pairwise dissimilarity by the
// minimum q-length over all connecting paths (minimax paths at q = infinity),
// plus the sweep-based approximation, closed-form query extension, and a
// brute-force q-triangle verifier for property checks.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "infsearch/qcore.hpp"

namespace infsearch {

enum class ProjectionMode : std::uint8_t { exact = 0, approximate = 1 };

struct ProjectionConfig {
  QExponent q = QExponent::finite(1.0);
  ProjectionMode mode = ProjectionMode::exact;
  // Approximate mode only: per-node neighborhood size and sweep count.
  // Neighborhoods are the knn_k smallest original dissimilarities per row,
  // ties broken by lower index.
  std::size_t knn_k = 8;
  std::size_t iterations_l = 4;
  // Overflow guard divisor applied before powering; <= 0 means auto
  // (max input entry, 1 if the matrix is all zero). The projection is
  // positively homogeneous, so scaling is exact.
  double scale = 0.0;
};

struct ProjectedMatrix {
  DistanceMatrix base;  // projected entries, original value scale
  QExponent q = QExponent::finite(1.0);
  double scale_used = 1.0;
};

// Exact projection: one binary-heap single-source shortest-path run per source
// over powered weights (additive combine for finite q, max combine at
// infinity), rooted and rescaled on output. Runs sources in parallel; output
// is schedule-independent. O(n^2 log n) per source.
ProjectedMatrix canonical_exact(const DistanceMatrix& D, QExponent q);

// Sweep-based approximation on W = (D/scale)^q: for each of iterations_l
// sweeps, each node relaxes all targets through its knn_k nearest original
// neighbors, then W is re-symmetrized by entrywise min with its transpose.
// Output lies entrywise between the exact projection and D. Deliberately
// single-threaded: in-place min-relaxations would otherwise make the result
// schedule-dependent. O(n^2 knn_k) per sweep.
ProjectedMatrix canonical_approx(const DistanceMatrix& D,
                                 const ProjectionConfig& config);

// Extends a projected matrix to an out-of-set query with original
// dissimilarities query_dissims[i] = d(query, point i):
//   E(query, x)^q = min_u combine(d(query,u)^q, Dq(u,x)^q)
// which is exact because every path from the query enters the set exactly once
// and within-set segments are already optimal. O(n) per target. q must match
// the matrix tag.
std::vector<double> extend_with_query(const ProjectedMatrix& Dq,
                                      std::span<const double> query_dissims,
                                      QExponent q);

struct TriangleViolation {
  std::uint32_t i, j, k;
  double amount;
};

// Lists every ordered triple (i, j, k) of distinct indices whose violation
// max(0, M(i,j)^q - M(i,k)^q - M(j,k)^q) exceeds tol (limit form at
// infinity). Empty result means M is a q-metric at tolerance tol.
std::vector<TriangleViolation> verify_q_triangle(const DistanceMatrix& M,
                                                 QExponent q, double tol);

}  // namespace infsearch
