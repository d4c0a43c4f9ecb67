// Core vocabulary shared by every module: the metric order q, dissimilarity
// kernels, point containers, and the powered-domain arithmetic that path
// projection and tree pruning are built on.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace infsearch {

// Bad caller-supplied data (dimension mismatches, invalid matrices, ...).
struct invalid_input : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated on-disk artifacts.
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric breakdown at runtime (non-finite loss and the like).
struct numeric_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The metric order: a finite real >= 1 or infinity. Ordering is the natural
// one (finite values by magnitude, infinity above all of them).
class QExponent {
 public:
  static QExponent finite(double value);
  static QExponent infinity() noexcept;

  bool is_infinity() const noexcept;
  // Finite value; throws invalid_input when called on infinity.
  double value() const;
  // Raw double, +inf for the infinite order. Safe in comparisons and max().
  double value_or_inf() const noexcept { return v_; }

  friend bool operator==(QExponent a, QExponent b) noexcept { return a.v_ == b.v_; }
  friend auto operator<=>(QExponent a, QExponent b) noexcept { return a.v_ <=> b.v_; }

 private:
  explicit QExponent(double v) noexcept : v_(v) {}
  double v_;
};

enum class DissimilarityKind : std::uint8_t {
  euclidean = 0,
  manhattan = 1,
  cosine = 2,
  correlation = 3,
  jaccard = 4,
};

const char* to_string(DissimilarityKind kind) noexcept;
// Parses the lowercase names emitted by to_string; throws invalid_input.
DissimilarityKind parse_dissimilarity_kind(const std::string& name);

using DenseVector = std::vector<double>;
// Strictly increasing nonnegative ids; validated where it enters the library.
using SparseSet = std::vector<std::uint32_t>;

// Row-major dense matrix used for point sets and embeddings.
struct RowMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // rows * cols

  RowMatrix() = default;
  RowMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data.data() + i * cols, cols);
  }
  std::span<double> row(std::size_t i) {
    return std::span<double>(data.data() + i * cols, cols);
  }
};

// Symmetric nonnegative dissimilarities with a zero diagonal.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n, double fill = 0.0);

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return d_[i * n_ + j]; }
  // Sets both (i,j) and (j,i).
  void set(std::size_t i, std::size_t j, double value);

  const std::vector<double>& data() const noexcept { return d_; }
  std::vector<double>& data() noexcept { return d_; }
  double max_entry() const noexcept;

  // Throws invalid_input on asymmetry, nonzero diagonal, negatives, non-finite.
  void validate() const;

 private:
  std::size_t n_ = 0;
  std::vector<double> d_;
};

// A point set in either dense-vector or sparse-set representation. Dense kinds
// reject sparse data and vice versa; each precondition failure is a distinct
// invalid_input.
class Dataset {
 public:
  // Default state: an empty dense dataset.
  Dataset() = default;
  static Dataset dense(RowMatrix points);
  static Dataset sparse(std::vector<SparseSet> rows);

  bool is_dense() const noexcept { return dense_kind_; }
  bool is_sparse() const noexcept { return !dense_kind_; }
  std::size_t size() const noexcept;
  // Ambient dimension for dense data; 1 + max id (0 if empty) for sparse.
  std::size_t dim() const noexcept;

  std::span<const double> dense_row(std::size_t i) const { return dense_.row(i); }
  const SparseSet& sparse_row(std::size_t i) const { return sparse_[i]; }
  const RowMatrix& dense_points() const noexcept { return dense_; }
  const std::vector<SparseSet>& sparse_points() const noexcept { return sparse_; }

  double dissim(std::size_t i, std::size_t j, DissimilarityKind kind) const;
  // Dissimilarity between row q_row of `queries` and row i of this dataset.
  double dissim_from(const Dataset& queries, std::size_t q_row, std::size_t i,
                     DissimilarityKind kind) const;

  Dataset subset(std::span<const std::uint32_t> ids) const;
  // All pairwise dissimilarities under `kind`.
  DistanceMatrix pairwise(DissimilarityKind kind) const;

 private:
  bool dense_kind_ = true;
  RowMatrix dense_;
  std::vector<SparseSet> sparse_;
};

// Dense-vector kernels. Correlation requires nonconstant inputs, cosine
// requires nonzero norms; both report distinct errors.
double dissimilarity(std::span<const double> a, std::span<const double> b,
                     DissimilarityKind kind);
// Sorted-merge Jaccard distance; empty vs empty is 0.
double jaccard_dissimilarity(const SparseSet& a, const SparseSet& b);

// (sum d_i^q)^(1/q) for finite q, max d_i at infinity. Throws on empty input.
double q_path_length(std::span<const double> edge_dissims, QExponent q);

// Semiring combine on powered lengths: a + b for finite q, max(a, b) at
// infinity. Total on nonnegative reals.
double q_combine(double a, double b, QExponent q) noexcept;

// max(0, dxy^q - dxz^q - dyz^q) for finite q; max(0, dxy - max(dxz, dyz)) at
// infinity. Zero iff the ordered triple satisfies the q-triangle inequality.
double q_triangle_violation(double dxy, double dxz, double dyz, QExponent q) noexcept;

// Powered-domain boundary helpers. Multi-hop arithmetic runs on values already
// raised to the q-th power and divided by a positive scale; roots and rescaling
// happen only at API boundaries. At infinity both maps are the identity
// (max-combine needs no powering).
double q_power(double x, QExponent q) noexcept;
double q_root(double x, QExponent q) noexcept;

}  // namespace infsearch
