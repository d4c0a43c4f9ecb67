// Shared fixtures and independent oracles for the test suites. Oracles avoid
// the library's powered-domain arithmetic on purpose: path lengths come from
// q_path_length over explicit edge lists, minimax distances from a spanning
// tree, nearest neighbors from plain sorts.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "infsearch/qcore.hpp"

namespace testsupport {

using infsearch::DenseVector;
using infsearch::DistanceMatrix;
using infsearch::QExponent;
using infsearch::RowMatrix;

// Random symmetric matrix with zero diagonal, entries in [lo, hi]. Not a
// metric in general; that is the point of projecting it.
inline DistanceMatrix random_symmetric(std::size_t n, std::mt19937_64& rng,
                                       double lo = 0.1, double hi = 1.1) {
  std::uniform_real_distribution<double> u(lo, hi);
  DistanceMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m.set(i, j, u(rng));
  }
  return m;
}

inline RowMatrix random_points(std::size_t count, std::size_t dim,
                               std::mt19937_64& rng, double lo = 0.0,
                               double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  RowMatrix pts(count, dim);
  for (auto& v : pts.data) v = u(rng);
  return pts;
}

// Gaussian blobs around uniformly placed centers, clipped nowhere.
inline RowMatrix clustered_points(std::size_t count, std::size_t dim,
                                  std::size_t clusters, double sigma,
                                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> center(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, sigma);
  RowMatrix centers(clusters, dim);
  for (auto& v : centers.data) v = center(rng);
  RowMatrix pts(count, dim);
  for (std::size_t i = 0; i < count; ++i) {
    const auto c = centers.row(i % clusters);
    auto row = pts.row(i);
    for (std::size_t d = 0; d < dim; ++d) row[d] = c[d] + noise(rng);
  }
  return pts;
}

// Exhaustive simple-path projection for tiny n: min over all simple paths of
// the q-length of their edge dissimilarities.
inline DistanceMatrix exhaustive_projection(const DistanceMatrix& D, QExponent q) {
  const std::size_t n = D.size();
  DistanceMatrix out(n);
  std::vector<std::uint32_t> path;
  std::vector<char> used(n, 0);
  std::vector<double> edges;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = s + 1; t < n; ++t) {
      double best = std::numeric_limits<double>::infinity();
      path.assign(1, static_cast<std::uint32_t>(s));
      std::fill(used.begin(), used.end(), 0);
      used[s] = 1;
      // Iterative DFS over simple paths from s; close each at t.
      auto dfs = [&](auto&& self, std::uint32_t last) -> void {
        edges.clear();
        for (std::size_t i = 1; i < path.size(); ++i) {
          edges.push_back(D(path[i - 1], path[i]));
        }
        edges.push_back(D(last, t));
        best = std::min(best, infsearch::q_path_length(edges, q));
        for (std::uint32_t next = 0; next < n; ++next) {
          if (used[next] || next == t) continue;
          used[next] = 1;
          path.push_back(next);
          self(self, next);
          path.pop_back();
          used[next] = 0;
        }
      };
      dfs(dfs, static_cast<std::uint32_t>(s));
      out.set(s, t, best);
    }
  }
  return out;
}

// Minimax distances via a minimum spanning tree: the q = infinity projection
// equals the max edge on the tree path between two nodes.
inline DistanceMatrix mst_minimax(const DistanceMatrix& D) {
  const std::size_t n = D.size();
  // Prim's algorithm on the dense graph.
  std::vector<double> key(n, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> parent(n, -1);
  std::vector<char> in_tree(n, 0);
  key[0] = 0.0;
  for (std::size_t it = 0; it < n; ++it) {
    std::size_t u = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (!in_tree[v] && (u == n || key[v] < key[u])) u = v;
    }
    in_tree[u] = 1;
    for (std::size_t v = 0; v < n; ++v) {
      if (!in_tree[v] && D(u, v) < key[v]) {
        key[v] = D(u, v);
        parent[v] = static_cast<std::int64_t>(u);
      }
    }
  }
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (std::size_t v = 1; v < n; ++v) {
    adj[v].push_back(static_cast<std::uint32_t>(parent[v]));
    adj[static_cast<std::size_t>(parent[v])].push_back(static_cast<std::uint32_t>(v));
  }
  DistanceMatrix out(n);
  // BFS from each source tracking the max edge seen.
  std::vector<double> acc(n);
  std::vector<std::uint32_t> stack;
  std::vector<char> seen(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(seen.begin(), seen.end(), 0);
    stack.assign(1, static_cast<std::uint32_t>(s));
    seen[s] = 1;
    acc[s] = 0.0;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (auto v : adj[u]) {
        if (seen[v]) continue;
        seen[v] = 1;
        acc[v] = std::max(acc[u], D(u, v));
        stack.push_back(v);
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      if (t != s) out(s, t) = acc[t];
    }
  }
  return out;
}

// k smallest (distance, id) pairs under an arbitrary distance callback.
template <typename DistFn>
std::vector<std::pair<double, std::uint32_t>> brute_knn(std::size_t n, std::size_t k,
                                                        DistFn&& dist) {
  std::vector<std::pair<double, std::uint32_t>> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    all[i] = {dist(i), static_cast<std::uint32_t>(i)};
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min(k, n));
  return all;
}

inline double max_abs_diff(const DistanceMatrix& a, const DistanceMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

// Spine hierarchy: leaf 0 splits off at the top and each later leaf splits one
// level further down, so the distance between two leaves is the split height
// of the lower index. Exact ultrametric with strictly decreasing levels.
inline DistanceMatrix spine_ultrametric(std::size_t n, double lo, double step) {
  DistanceMatrix d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d.set(i, j, lo + step * static_cast<double>(n - 1 - i));
    }
  }
  return d;
}

// Random merge hierarchy with strictly increasing heights; distance = height
// of the merge joining the two leaves. Exact ultrametric by construction.
inline DistanceMatrix random_ultrametric(std::size_t n, std::mt19937_64& rng) {
  DistanceMatrix d(n);
  std::vector<std::vector<std::uint32_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {static_cast<std::uint32_t>(i)};
  double h = 0.1;
  std::uniform_real_distribution<double> bump(0.001, 0.01);
  while (clusters.size() > 1) {
    std::uniform_int_distribution<std::size_t> pick(0, clusters.size() - 1);
    std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    while (b == a) b = pick(rng);
    if (a > b) std::swap(a, b);
    h += bump(rng);
    for (auto x : clusters[a]) {
      for (auto y : clusters[b]) d.set(x, y, h);
    }
    clusters[a].insert(clusters[a].end(), clusters[b].begin(), clusters[b].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(b));
  }
  return d;
}

inline int hamming(std::span<const double> a, std::span<const double> b) {
  int h = 0;
  for (std::size_t i = 0; i < a.size(); ++i) h += a[i] != b[i];
  return h;
}

// Random binary code: rows in {0,1}^dim with pairwise Hamming distance at
// least min_d (greedy rejection sampling). Euclidean distances of binary
// vectors form an exact 2-metric — every hypercube triangle is non-obtuse —
// and flipping one bit of a codeword yields a query whose unique nearest
// neighbor is that codeword with margin sqrt(min_d - 1) vs 1.
inline RowMatrix binary_code_points(std::size_t n, std::size_t dim, int min_d,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> bit(0, 1);
  RowMatrix pts(n, dim);
  std::size_t have = 0;
  std::vector<double> cand(dim);
  while (have < n) {
    for (auto& b : cand) b = bit(rng);
    bool ok = true;
    for (std::size_t i = 0; i < have && ok; ++i) {
      ok = hamming(pts.row(i), cand) >= min_d;
    }
    if (!ok) continue;
    std::copy(cand.begin(), cand.end(), pts.row(have).begin());
    ++have;
  }
  return pts;
}

}  // namespace testsupport
