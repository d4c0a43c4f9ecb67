#include "infsearch/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>

#include "infsearch/parallel.hpp"

namespace infsearch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double auto_scale(const DistanceMatrix& D, double requested) {
  if (requested > 0.0) return requested;
  const double m = D.max_entry();
  return m > 0.0 ? m : 1.0;
}

// Powered, scaled copy of D. At infinity powering is the identity, so the
// scaled weights feed max-combine directly.
std::vector<double> powered_weights(const DistanceMatrix& D, QExponent q,
                                    double scale) {
  const std::size_t n = D.size();
  std::vector<double> w(n * n);
  for (std::size_t i = 0; i < n * n; ++i) {
    w[i] = q_power(D.data()[i] / scale, q);
  }
  return w;
}

// Single-source shortest paths over the dense powered weights. dist holds
// powered path lengths on return.
void dijkstra_row(const std::vector<double>& w, std::size_t n, QExponent q,
                  std::size_t source, std::span<double> dist) {
  std::fill(dist.begin(), dist.end(), kInf);
  dist[source] = 0.0;
  using Item = std::pair<double, std::uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  heap.emplace(0.0, static_cast<std::uint32_t>(source));
  std::vector<char> done(n, 0);
  while (!heap.empty()) {
    const auto [du, u] = heap.top();
    heap.pop();
    if (done[u]) continue;  // stale lazy-deletion entry
    done[u] = 1;
    const double* row = w.data() + static_cast<std::size_t>(u) * n;
    for (std::size_t v = 0; v < n; ++v) {
      if (done[v]) continue;
      const double cand = q_combine(du, row[v], q);
      if (cand < dist[v]) {
        dist[v] = cand;
        heap.emplace(cand, static_cast<std::uint32_t>(v));
      }
    }
  }
}

ProjectedMatrix finish_projection(const std::vector<double>& powered,
                                  const DistanceMatrix& D, QExponent q,
                                  double scale) {
  const std::size_t n = D.size();
  DistanceMatrix out(n);
  // Symmetrize by entrywise min before rooting: per-source rounding can differ
  // across path directions by an ulp, and min keeps an achievable path value.
  // Entries whose best path is still the direct edge keep their exact input
  // value instead of a power/root round trip, so dominance holds bit-exactly.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = std::min(powered[i * n + j], powered[j * n + i]);
      const double direct = q_power(D(i, j) / scale, q);
      out.set(i, j, p == direct ? D(i, j) : scale * q_root(p, q));
    }
  }
  return ProjectedMatrix{std::move(out), q, scale};
}

}  // namespace

ProjectedMatrix canonical_exact(const DistanceMatrix& D, QExponent q) {
  D.validate();
  const std::size_t n = D.size();
  const double scale = auto_scale(D, 0.0);
  if (n <= 1) return ProjectedMatrix{D, q, scale};
  const std::vector<double> w = powered_weights(D, q, scale);
  std::vector<double> powered(n * n);
  parallel_for(n, [&](std::size_t src) {
    dijkstra_row(w, n, q, src, std::span<double>(powered.data() + src * n, n));
  });
  return finish_projection(powered, D, q, scale);
}

ProjectedMatrix canonical_approx(const DistanceMatrix& D,
                                 const ProjectionConfig& config) {
  D.validate();
  if (config.mode != ProjectionMode::approximate) {
    throw invalid_input("canonical_approx requires approximate mode config");
  }
  const std::size_t n = D.size();
  if (config.knn_k < 1) throw invalid_input("knn_k must be >= 1");
  if (n > 0 && config.knn_k >= n) {
    throw invalid_input("knn_k must be smaller than the point count");
  }
  const QExponent q = config.q;
  const double scale = auto_scale(D, config.scale);
  if (n <= 1) return ProjectedMatrix{D, q, scale};

  // Neighborhoods are fixed from the ORIGINAL matrix, ties by lower index.
  std::vector<std::uint32_t> nbrs(n * config.knn_k);
  {
    std::vector<std::pair<double, std::uint32_t>> order(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      order.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) order.emplace_back(D(i, j), static_cast<std::uint32_t>(j));
      }
      std::partial_sort(order.begin(), order.begin() + config.knn_k, order.end());
      for (std::size_t k = 0; k < config.knn_k; ++k) {
        nbrs[i * config.knn_k + k] = order[k].second;
      }
    }
  }

  std::vector<double> w = powered_weights(D, q, scale);
  for (std::size_t sweep = 0; sweep < config.iterations_l; ++sweep) {
    for (std::size_t i = 0; i < n; ++i) {
      double* wi = w.data() + i * n;
      for (std::size_t k = 0; k < config.knn_k; ++k) {
        const std::size_t j = nbrs[i * config.knn_k + k];
        const double wij = wi[j];
        const double* wj = w.data() + j * n;
        for (std::size_t t = 0; t < n; ++t) {
          const double cand = q_combine(wij, wj[t], q);
          if (cand < wi[t]) wi[t] = cand;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double m = std::min(w[i * n + j], w[j * n + i]);
        w[i * n + j] = m;
        w[j * n + i] = m;
      }
    }
  }
  return finish_projection(w, D, q, scale);
}

std::vector<double> extend_with_query(const ProjectedMatrix& Dq,
                                      std::span<const double> query_dissims,
                                      QExponent q) {
  if (q != Dq.q) throw invalid_input("q does not match the projected matrix tag");
  const std::size_t n = Dq.base.size();
  if (query_dissims.size() != n) {
    throw invalid_input("query dissimilarity count does not match matrix size");
  }
  for (double d : query_dissims) {
    if (!std::isfinite(d) || d < 0.0) {
      throw invalid_input("query dissimilarities must be finite and >= 0");
    }
  }
  const double scale = Dq.scale_used > 0.0 ? Dq.scale_used : 1.0;
  std::vector<double> powered_query(n);
  for (std::size_t u = 0; u < n; ++u) {
    powered_query[u] = q_power(query_dissims[u] / scale, q);
  }
  std::vector<double> out(n);
  parallel_for(n, [&](std::size_t x) {
    double best = powered_query[x];  // u = x term: Dq(x, x) = 0
    for (std::size_t u = 0; u < n; ++u) {
      const double leg = q_power(Dq.base(u, x) / scale, q);
      best = std::min(best, q_combine(powered_query[u], leg, q));
    }
    out[x] = scale * q_root(best, q);
  });
  return out;
}

std::vector<TriangleViolation> verify_q_triangle(const DistanceMatrix& M,
                                                 QExponent q, double tol) {
  const std::size_t n = M.size();
  std::vector<std::vector<TriangleViolation>> per_i(n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dij = M(i, j);
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        const double v = q_triangle_violation(dij, M(i, k), M(j, k), q);
        if (v > tol) {
          per_i[i].push_back({static_cast<std::uint32_t>(i),
                              static_cast<std::uint32_t>(j),
                              static_cast<std::uint32_t>(k), v});
        }
      }
    }
  });
  std::vector<TriangleViolation> out;
  for (auto& chunk : per_i) {
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

}  // namespace infsearch
