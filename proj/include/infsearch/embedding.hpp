#pragma once

// Learned Euclidean embedding: a feed-forward net whose output distances
// approximate projected q-distances, trained with a stress loss on sampled
// pairs and a hinge penalty on q-triangle violations of sampled triples.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "infsearch/projection.hpp"
#include "infsearch/qcore.hpp"

namespace infsearch {

struct MlpLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weights;  // row-major, out_dim x in_dim
  std::vector<double> bias;     // out_dim
};

// Affine layers with a smooth-gated (Gaussian-error) activation after every
// layer except the last; dropout follows each hidden activation in train mode.
struct MlpParams {
  std::vector<MlpLayer> layers;
  double dropout_rate = 0.2;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  void validate() const;

  // Seeded scaled-normal init for the given widths. The full-scale reference
  // stack is 1048/512/1012 hidden units; desk-scale defaults keep the same
  // wide/narrow/wide shape at 128/64/128.
  static MlpParams create(std::size_t input_dim,
                          std::span<const std::size_t> hidden_widths,
                          std::size_t output_dim, double dropout_rate,
                          std::uint64_t seed);
};

enum class ForwardMode { infer, train };

// Train mode requires an RNG for the dropout masks and is reproducible for a
// given RNG state; infer mode is deterministic and applies no dropout.
DenseVector forward(const MlpParams& params, std::span<const double> x,
                    ForwardMode mode = ForwardMode::infer,
                    std::mt19937_64* dropout_rng = nullptr);

// Hinge penalty of three embedded distances: [exy^q - exz^q - eyz^q]+ for
// finite q and the limit form [exy - max(exz, eyz)]+ at q = infinity.
// Positive exactly when the triple violates the q-triangle inequality.
double triangle_penalty(double exy, double exz, double eyz, QExponent q);

// (target - ||phi(x) - phi(y)||)^2, evaluated in infer mode.
double stress_loss(const MlpParams& params, std::span<const double> x,
                   std::span<const double> y, double target);

double triangle_loss(const MlpParams& params, std::span<const double> x,
                     std::span<const double> y, std::span<const double> z,
                     QExponent q);

struct PairExample {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  double target = 0.0;
};

struct TripleExample {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  std::uint32_t c = 0;
};

// alpha_D * mean stress over pairs + alpha_T * mean triangle penalty over
// triples, with point rows indexed by the examples. A batch whose weight is
// nonzero must be nonempty.
double total_objective(const MlpParams& params, const RowMatrix& points,
                       std::span<const PairExample> pairs,
                       std::span<const TripleExample> triples, double alpha_D,
                       double alpha_T, QExponent q);

// Same value plus the full parameter gradient (reverse accumulation in a
// fixed summation order). `gradient` is overwritten with matching shapes.
double objective_with_gradient(const MlpParams& params, const RowMatrix& points,
                               std::span<const PairExample> pairs,
                               std::span<const TripleExample> triples,
                               double alpha_D, double alpha_T, QExponent q,
                               MlpParams* gradient);

// Max relative error between the analytic gradient and central finite
// differences on an evenly spread sample of coordinates. `corruption` is
// added to the first sampled analytic coordinate (negative-control hook).
double gradient_check(const MlpParams& params, const RowMatrix& points,
                      std::span<const PairExample> pairs,
                      std::span<const TripleExample> triples, double alpha_D,
                      double alpha_T, QExponent q, double step,
                      double corruption = 0.0);

struct TrainConfig {
  QExponent q = QExponent::finite(2.0);
  double alpha_D = 1.0;
  double alpha_T = 0.3;
  std::size_t epochs = 100;
  std::size_t batch_pairs = 256;
  std::size_t batch_triples = 256;
  std::size_t steps_per_epoch = 0;  // 0: ceil(pair count / batch_pairs)
  double learning_rate = 1e-3;
  std::size_t restart_period = 50;     // cosine warm-restart T0, in epochs
  std::size_t period_multiplier = 2;   // period growth after each restart
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;  // decoupled from the adaptive step
  std::vector<std::size_t> hidden_widths{128, 64, 128};
  std::size_t embed_dim = 0;  // 0: min(input_dim, 64)
  double dropout_rate = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainReport {
  std::vector<double> stress_per_epoch;
  std::vector<double> triangle_per_epoch;
  // Frobenius-ratio stress over each epoch's sampled pairs; reported for
  // diagnostics, never optimized.
  std::vector<double> normalized_stress_per_epoch;
  std::optional<double> gradient_check_error;
};

struct TrainResult {
  MlpParams params;
  TrainReport report;
};

// Minibatch training with moment-based adaptive updates, decoupled weight
// decay, and per-epoch warm-restart cosine learning rates. Pairs are sampled
// uniformly without replacement per batch, triples uniformly. Deterministic
// for a given config. Aborts with numeric_failure on a non-finite loss.
TrainResult train(const RowMatrix& points, const ProjectedMatrix& targets,
                  const TrainConfig& config);

// Infer-mode forward per row; deterministic, parallel over row chunks.
RowMatrix embed_all(const MlpParams& params, const RowMatrix& points);

}  // namespace infsearch
