#include "infsearch/qcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <thread>

#include "infsearch/parallel.hpp"

namespace infsearch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_dim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw invalid_input("dimension mismatch: " + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()));
  }
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double manhattan(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw invalid_input("cosine dissimilarity undefined for zero-norm input");
  }
  // Clamp: rounding can push |cos| a hair past 1 and the result below 0.
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::max(0.0, 1.0 - std::min(1.0, std::max(-1.0, c)));
}

double correlation(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double dot = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    dot += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) {
    throw invalid_input("correlation dissimilarity undefined for constant input");
  }
  const double r = dot / (std::sqrt(va) * std::sqrt(vb));
  return std::max(0.0, 1.0 - std::min(1.0, std::max(-1.0, r)));
}

void require_sorted_set(const SparseSet& s) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i] <= s[i - 1]) {
      throw invalid_input("sparse set ids must be strictly increasing");
    }
  }
}

}  // namespace

QExponent QExponent::finite(double value) {
  if (!std::isfinite(value) || value < 1.0) {
    throw invalid_input("finite q must be a real >= 1");
  }
  return QExponent(value);
}

QExponent QExponent::infinity() noexcept { return QExponent(kInf); }

bool QExponent::is_infinity() const noexcept { return std::isinf(v_); }

double QExponent::value() const {
  if (is_infinity()) throw invalid_input("q is infinite; no finite value");
  return v_;
}

const char* to_string(DissimilarityKind kind) noexcept {
  switch (kind) {
    case DissimilarityKind::euclidean: return "euclidean";
    case DissimilarityKind::manhattan: return "manhattan";
    case DissimilarityKind::cosine: return "cosine";
    case DissimilarityKind::correlation: return "correlation";
    case DissimilarityKind::jaccard: return "jaccard";
  }
  return "unknown";
}

DissimilarityKind parse_dissimilarity_kind(const std::string& name) {
  for (auto kind : {DissimilarityKind::euclidean, DissimilarityKind::manhattan,
                    DissimilarityKind::cosine, DissimilarityKind::correlation,
                    DissimilarityKind::jaccard}) {
    if (name == to_string(kind)) return kind;
  }
  throw invalid_input("unknown dissimilarity kind: " + name);
}

DistanceMatrix::DistanceMatrix(std::size_t n, double fill)
    : n_(n), d_(n * n, fill) {
  for (std::size_t i = 0; i < n_; ++i) d_[i * n_ + i] = 0.0;
}

void DistanceMatrix::set(std::size_t i, std::size_t j, double value) {
  d_[i * n_ + j] = value;
  d_[j * n_ + i] = value;
}

double DistanceMatrix::max_entry() const noexcept {
  double m = 0.0;
  for (double v : d_) m = std::max(m, v);
  return m;
}

void DistanceMatrix::validate() const {
  for (std::size_t i = 0; i < n_; ++i) {
    if ((*this)(i, i) != 0.0) {
      throw invalid_input("distance matrix diagonal must be zero");
    }
    for (std::size_t j = 0; j < n_; ++j) {
      const double v = (*this)(i, j);
      if (!std::isfinite(v) || v < 0.0) {
        throw invalid_input("distance matrix entries must be finite and >= 0");
      }
      if (v != (*this)(j, i)) {
        throw invalid_input("distance matrix must be symmetric");
      }
    }
  }
}

Dataset Dataset::dense(RowMatrix points) {
  if (points.data.size() != points.rows * points.cols) {
    throw invalid_input("dense data size does not match rows * cols");
  }
  for (double v : points.data) {
    if (!std::isfinite(v)) throw invalid_input("dense coordinates must be finite");
  }
  Dataset d;
  d.dense_kind_ = true;
  d.dense_ = std::move(points);
  return d;
}

Dataset Dataset::sparse(std::vector<SparseSet> rows) {
  for (const auto& r : rows) require_sorted_set(r);
  Dataset d;
  d.dense_kind_ = false;
  d.sparse_ = std::move(rows);
  return d;
}

std::size_t Dataset::size() const noexcept {
  return dense_kind_ ? dense_.rows : sparse_.size();
}

std::size_t Dataset::dim() const noexcept {
  if (dense_kind_) return dense_.cols;
  std::uint32_t max_id = 0;
  bool any = false;
  for (const auto& r : sparse_) {
    if (!r.empty()) {
      max_id = std::max(max_id, r.back());
      any = true;
    }
  }
  return any ? static_cast<std::size_t>(max_id) + 1 : 0;
}

double Dataset::dissim(std::size_t i, std::size_t j, DissimilarityKind kind) const {
  return dissim_from(*this, i, j, kind);
}

double Dataset::dissim_from(const Dataset& queries, std::size_t q_row,
                            std::size_t i, DissimilarityKind kind) const {
  const bool sparse_kind = kind == DissimilarityKind::jaccard;
  if (sparse_kind) {
    if (is_dense() || queries.is_dense()) {
      throw invalid_input("jaccard requires sparse-set points");
    }
    return jaccard_dissimilarity(queries.sparse_row(q_row), sparse_row(i));
  }
  if (is_sparse() || queries.is_sparse()) {
    throw invalid_input(std::string(to_string(kind)) +
                        " requires dense-vector points");
  }
  return dissimilarity(queries.dense_row(q_row), dense_row(i), kind);
}

Dataset Dataset::subset(std::span<const std::uint32_t> ids) const {
  if (dense_kind_) {
    RowMatrix m(ids.size(), dense_.cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto src = dense_.row(ids[r]);
      std::copy(src.begin(), src.end(), m.row(r).begin());
    }
    return Dataset::dense(std::move(m));
  }
  std::vector<SparseSet> rows;
  rows.reserve(ids.size());
  for (auto id : ids) rows.push_back(sparse_[id]);
  return Dataset::sparse(std::move(rows));
}

DistanceMatrix Dataset::pairwise(DissimilarityKind kind) const {
  const std::size_t n = size();
  DistanceMatrix m(n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = dissim(i, j, kind);
      m(i, j) = v;
      m(j, i) = v;
    }
  });
  return m;
}

double dissimilarity(std::span<const double> a, std::span<const double> b,
                     DissimilarityKind kind) {
  require_same_dim(a, b);
  switch (kind) {
    case DissimilarityKind::euclidean: return euclidean(a, b);
    case DissimilarityKind::manhattan: return manhattan(a, b);
    case DissimilarityKind::cosine: return cosine(a, b);
    case DissimilarityKind::correlation: return correlation(a, b);
    case DissimilarityKind::jaccard:
      throw invalid_input("jaccard requires sparse-set points");
  }
  throw invalid_input("unknown dissimilarity kind");
}

double jaccard_dissimilarity(const SparseSet& a, const SparseSet& b) {
  require_sorted_set(a);
  require_sorted_set(b);
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  if (uni == 0) return 0.0;  // empty vs empty: identical inputs
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

double q_path_length(std::span<const double> edge_dissims, QExponent q) {
  if (edge_dissims.empty()) throw invalid_input("q_path_length of empty path");
  for (double d : edge_dissims) {
    if (!std::isfinite(d) || d < 0.0) {
      throw invalid_input("edge dissimilarities must be finite and >= 0");
    }
  }
  if (q.is_infinity()) {
    return *std::max_element(edge_dissims.begin(), edge_dissims.end());
  }
  // Scale by the max edge so the powered sum cannot overflow at large q.
  const double m = *std::max_element(edge_dissims.begin(), edge_dissims.end());
  if (m == 0.0) return 0.0;
  double s = 0.0;
  for (double d : edge_dissims) s += std::pow(d / m, q.value());
  return m * std::pow(s, 1.0 / q.value());
}

double q_combine(double a, double b, QExponent q) noexcept {
  return q.is_infinity() ? std::max(a, b) : a + b;
}

double q_triangle_violation(double dxy, double dxz, double dyz,
                            QExponent q) noexcept {
  if (q.is_infinity()) return std::max(0.0, dxy - std::max(dxz, dyz));
  const double p = q.value();
  return std::max(0.0, std::pow(dxy, p) - std::pow(dxz, p) - std::pow(dyz, p));
}

double q_power(double x, QExponent q) noexcept {
  return q.is_infinity() ? x : std::pow(x, q.value_or_inf());
}

double q_root(double x, QExponent q) noexcept {
  return q.is_infinity() ? x : std::pow(x, 1.0 / q.value_or_inf());
}

std::size_t thread_count() noexcept {
  if (const char* env = std::getenv("INFSEARCH_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = w * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace infsearch
