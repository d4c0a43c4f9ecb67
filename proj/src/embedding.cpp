#include "infsearch/embedding.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "infsearch/parallel.hpp"

namespace infsearch {
namespace {

using Matrix = Eigen::MatrixXd;
using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeightMap = Eigen::Map<const RowMajor>;
using WeightMap = Eigen::Map<RowMajor>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_derivative(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

struct ForwardCache {
  std::vector<Matrix> pre;   // per layer, before activation
  std::vector<Matrix> post;  // per layer, after activation and dropout
  std::vector<Matrix> mask;  // per hidden layer, dropout scalers (train only)
};

// Columns of `input` are independent samples. The dropout mask is drawn
// entry by entry in column-major order, so results are reproducible for a
// given RNG state and independent of the thread schedule (none is used).
Matrix run_forward(const MlpParams& params, const Matrix& input,
                   ForwardMode mode, std::mt19937_64* rng,
                   ForwardCache* cache) {
  const std::size_t depth = params.layers.size();
  const bool dropping =
      mode == ForwardMode::train && params.dropout_rate > 0.0;
  const double keep = 1.0 - params.dropout_rate;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Matrix h = input;
  for (std::size_t l = 0; l < depth; ++l) {
    const MlpLayer& layer = params.layers[l];
    ConstWeightMap w(layer.weights.data(),
                     static_cast<Eigen::Index>(layer.out_dim),
                     static_cast<Eigen::Index>(layer.in_dim));
    ConstVecMap b(layer.bias.data(), static_cast<Eigen::Index>(layer.out_dim));
    Matrix a;
    a.noalias() = w * h;
    a.colwise() += b;
    if (cache != nullptr) cache->pre.push_back(a);
    if (l + 1 < depth) {
      h = a.unaryExpr([](double v) { return gelu(v); });
      if (dropping) {
        Matrix scale(h.rows(), h.cols());
        for (Eigen::Index c = 0; c < scale.cols(); ++c) {
          for (Eigen::Index r = 0; r < scale.rows(); ++r) {
            scale(r, c) = unit(*rng) < keep ? 1.0 / keep : 0.0;
          }
        }
        h = h.cwiseProduct(scale);
        if (cache != nullptr) cache->mask.push_back(std::move(scale));
      }
    } else {
      h = std::move(a);
    }
    if (cache != nullptr) cache->post.push_back(h);
  }
  return h;
}

// Reverse accumulation. `grad_out` holds dLoss/dOutput per column; parameter
// gradients are accumulated into `grad`, which must already have the shapes
// of `params`. Summation order is fixed by the (single-threaded) matrix
// products, so repeated runs agree bit for bit.
void run_backward(const MlpParams& params, const Matrix& input,
                  const ForwardCache& cache, const Matrix& grad_out,
                  MlpParams* grad) {
  const std::size_t depth = params.layers.size();
  const bool dropping = !cache.mask.empty();
  Matrix g = grad_out;
  for (std::size_t l = depth; l-- > 0;) {
    if (l + 1 < depth) {
      if (dropping) g = g.cwiseProduct(cache.mask[l]);
      g = g.cwiseProduct(
          cache.pre[l].unaryExpr([](double v) { return gelu_derivative(v); }));
    }
    const Matrix& h_prev = (l == 0) ? input : cache.post[l - 1];
    MlpLayer& gl = grad->layers[l];
    WeightMap dw(gl.weights.data(), static_cast<Eigen::Index>(gl.out_dim),
                 static_cast<Eigen::Index>(gl.in_dim));
    dw.noalias() += g * h_prev.transpose();
    VecMap db(gl.bias.data(), static_cast<Eigen::Index>(gl.out_dim));
    db += g.rowwise().sum();
    if (l > 0) {
      const MlpLayer& layer = params.layers[l];
      ConstWeightMap w(layer.weights.data(),
                       static_cast<Eigen::Index>(layer.out_dim),
                       static_cast<Eigen::Index>(layer.in_dim));
      g = w.transpose() * g;
    }
  }
}

MlpParams zero_like(const MlpParams& params) {
  MlpParams z;
  z.dropout_rate = params.dropout_rate;
  z.layers.reserve(params.layers.size());
  for (const MlpLayer& layer : params.layers) {
    MlpLayer zl;
    zl.in_dim = layer.in_dim;
    zl.out_dim = layer.out_dim;
    zl.weights.assign(layer.weights.size(), 0.0);
    zl.bias.assign(layer.bias.size(), 0.0);
    z.layers.push_back(std::move(zl));
  }
  return z;
}

struct BatchStats {
  double stress_sum = 0.0;     // sum of (target - embedded distance)^2
  double triangle_sum = 0.0;   // sum of hinge penalties
  double sq_target_sum = 0.0;  // sum of target^2 (normalized-stress divisor)
};

// Shared evaluation path for the public objective entry points and the
// trainer. Inputs are trusted (callers validate); `grad`, `stats` optional.
double objective_core(const MlpParams& params, const RowMatrix& points,
                      std::span<const PairExample> pairs,
                      std::span<const TripleExample> triples, double alpha_D,
                      double alpha_T, QExponent q, MlpParams* grad,
                      ForwardMode mode, std::mt19937_64* rng,
                      BatchStats* stats) {
  const std::size_t num_pairs = pairs.size();
  const std::size_t num_triples = triples.size();
  const std::size_t batch = 2 * num_pairs + 3 * num_triples;
  if (grad != nullptr) *grad = zero_like(params);
  if (stats != nullptr) *stats = BatchStats{};
  if (batch == 0) return 0.0;

  const auto in_dim = static_cast<Eigen::Index>(params.input_dim());
  Matrix input(in_dim, static_cast<Eigen::Index>(batch));
  auto load_column = [&](std::size_t col, std::uint32_t point) {
    input.col(static_cast<Eigen::Index>(col)) =
        ConstVecMap(points.row(point).data(), in_dim);
  };
  for (std::size_t i = 0; i < num_pairs; ++i) {
    load_column(2 * i, pairs[i].a);
    load_column(2 * i + 1, pairs[i].b);
  }
  for (std::size_t j = 0; j < num_triples; ++j) {
    const std::size_t base = 2 * num_pairs + 3 * j;
    load_column(base, triples[j].a);
    load_column(base + 1, triples[j].b);
    load_column(base + 2, triples[j].c);
  }

  ForwardCache cache;
  const Matrix out =
      run_forward(params, input, mode, rng, grad != nullptr ? &cache : nullptr);
  Matrix grad_out;
  if (grad != nullptr) grad_out = Matrix::Zero(out.rows(), out.cols());

  double stress_sum = 0.0;
  double sq_target_sum = 0.0;
  for (std::size_t i = 0; i < num_pairs; ++i) {
    const auto u = out.col(static_cast<Eigen::Index>(2 * i));
    const auto v = out.col(static_cast<Eigen::Index>(2 * i + 1));
    const double e = (u - v).norm();
    const double diff = pairs[i].target - e;
    stress_sum += diff * diff;
    sq_target_sum += pairs[i].target * pairs[i].target;
    // Subgradient 0 at coincident embeddings (e == 0).
    if (grad != nullptr && alpha_D > 0.0 && e > 0.0) {
      const double coef =
          (alpha_D / static_cast<double>(num_pairs)) * (-2.0 * diff) / e;
      grad_out.col(static_cast<Eigen::Index>(2 * i)) += coef * (u - v);
      grad_out.col(static_cast<Eigen::Index>(2 * i + 1)) -= coef * (u - v);
    }
  }

  double triangle_sum = 0.0;
  for (std::size_t j = 0; j < num_triples; ++j) {
    const auto ca = static_cast<Eigen::Index>(2 * num_pairs + 3 * j);
    const auto cb = ca + 1;
    const auto cc = ca + 2;
    const double e_ab = (out.col(ca) - out.col(cb)).norm();
    const double e_ac = (out.col(ca) - out.col(cc)).norm();
    const double e_bc = (out.col(cb) - out.col(cc)).norm();
    const double pen = triangle_penalty(e_ab, e_ac, e_bc, q);
    triangle_sum += pen;
    if (grad != nullptr && alpha_T > 0.0 && pen > 0.0) {
      const double coef = alpha_T / static_cast<double>(num_triples);
      // Adds coef * weight * d(edge length)/d(columns) for one edge; the
      // subgradient is 0 when the edge has zero length.
      auto add_edge = [&](Eigen::Index c1, Eigen::Index c2, double e,
                          double weight) {
        if (e <= 0.0) return;
        const Matrix d = (coef * weight / e) * (out.col(c1) - out.col(c2));
        grad_out.col(c1) += d;
        grad_out.col(c2) -= d;
      };
      if (!q.is_infinity()) {
        const double qq = q.value();
        add_edge(ca, cb, e_ab, qq * std::pow(e_ab, qq - 1.0));
        add_edge(ca, cc, e_ac, -qq * std::pow(e_ac, qq - 1.0));
        add_edge(cb, cc, e_bc, -qq * std::pow(e_bc, qq - 1.0));
      } else {
        add_edge(ca, cb, e_ab, 1.0);
        // Ties on the max pick the first listed edge.
        if (e_ac >= e_bc) {
          add_edge(ca, cc, e_ac, -1.0);
        } else {
          add_edge(cb, cc, e_bc, -1.0);
        }
      }
    }
  }

  if (stats != nullptr) {
    stats->stress_sum = stress_sum;
    stats->triangle_sum = triangle_sum;
    stats->sq_target_sum = sq_target_sum;
  }

  double total = 0.0;
  if (num_pairs > 0) {
    total += alpha_D * stress_sum / static_cast<double>(num_pairs);
  }
  if (num_triples > 0) {
    total += alpha_T * triangle_sum / static_cast<double>(num_triples);
  }

  if (grad != nullptr) run_backward(params, input, cache, grad_out, grad);
  return total;
}

void validate_objective_inputs(const MlpParams& params, const RowMatrix& points,
                               std::span<const PairExample> pairs,
                               std::span<const TripleExample> triples,
                               double alpha_D, double alpha_T) {
  params.validate();
  if (points.cols != params.input_dim()) {
    throw invalid_input("point width must match the network input");
  }
  if (!(alpha_D >= 0.0) || !(alpha_T >= 0.0)) {
    throw invalid_input("loss weights must be nonnegative and finite");
  }
  if (alpha_D > 0.0 && pairs.empty()) {
    throw invalid_input("pair batch must be nonempty when its weight is positive");
  }
  if (alpha_T > 0.0 && triples.empty()) {
    throw invalid_input(
        "triple batch must be nonempty when its weight is positive");
  }
  for (const PairExample& p : pairs) {
    if (p.a >= points.rows || p.b >= points.rows) {
      throw invalid_input("pair example index out of range");
    }
    if (!std::isfinite(p.target)) {
      throw invalid_input("pair targets must be finite");
    }
  }
  for (const TripleExample& t : triples) {
    if (t.a >= points.rows || t.b >= points.rows || t.c >= points.rows) {
      throw invalid_input("triple example index out of range");
    }
  }
}

void flatten_into(const MlpParams& params, std::vector<double>& out) {
  out.clear();
  out.reserve(params.parameter_count());
  for (const MlpLayer& layer : params.layers) {
    out.insert(out.end(), layer.weights.begin(), layer.weights.end());
    out.insert(out.end(), layer.bias.begin(), layer.bias.end());
  }
}

// Flat index -> storage slot, in the same layer-major weights-then-bias
// order used by flatten_into.
double* param_at(MlpParams& params, std::size_t index) {
  for (MlpLayer& layer : params.layers) {
    if (index < layer.weights.size()) return &layer.weights[index];
    index -= layer.weights.size();
    if (index < layer.bias.size()) return &layer.bias[index];
    index -= layer.bias.size();
  }
  return nullptr;
}

Matrix column_from_span(std::span<const double> x) {
  return ConstVecMap(x.data(), static_cast<Eigen::Index>(x.size()));
}

}  // namespace

std::size_t MlpParams::input_dim() const {
  return layers.empty() ? 0 : layers.front().in_dim;
}

std::size_t MlpParams::output_dim() const {
  return layers.empty() ? 0 : layers.back().out_dim;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t count = 0;
  for (const MlpLayer& layer : layers) {
    count += layer.weights.size() + layer.bias.size();
  }
  return count;
}

void MlpParams::validate() const {
  if (layers.empty()) throw invalid_input("network needs at least one layer");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw invalid_input("dropout rate must lie in [0, 1)");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const MlpLayer& layer = layers[l];
    if (layer.in_dim == 0 || layer.out_dim == 0) {
      throw invalid_input("layer dimensions must be positive");
    }
    if (layer.weights.size() != layer.in_dim * layer.out_dim) {
      throw invalid_input("layer weight count must equal in_dim * out_dim");
    }
    if (layer.bias.size() != layer.out_dim) {
      throw invalid_input("layer bias count must equal out_dim");
    }
    if (l > 0 && layer.in_dim != layers[l - 1].out_dim) {
      throw invalid_input("consecutive layer widths must chain");
    }
    for (double w : layer.weights) {
      if (!std::isfinite(w)) throw invalid_input("parameters must be finite");
    }
    for (double b : layer.bias) {
      if (!std::isfinite(b)) throw invalid_input("parameters must be finite");
    }
  }
}

MlpParams MlpParams::create(std::size_t input_dim,
                            std::span<const std::size_t> hidden_widths,
                            std::size_t output_dim, double dropout_rate,
                            std::uint64_t seed) {
  if (input_dim == 0 || output_dim == 0) {
    throw invalid_input("network widths must be positive");
  }
  for (std::size_t w : hidden_widths) {
    if (w == 0) throw invalid_input("network widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw invalid_input("dropout rate must lie in [0, 1)");
  }
  MlpParams params;
  params.dropout_rate = dropout_rate;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t prev = input_dim;
  auto add_layer = [&](std::size_t width) {
    MlpLayer layer;
    layer.in_dim = prev;
    layer.out_dim = width;
    layer.weights.resize(prev * width);
    // Fan-in scaled normal init; biases start at zero.
    const double scale = std::sqrt(2.0 / static_cast<double>(prev));
    for (double& w : layer.weights) w = scale * normal(rng);
    layer.bias.assign(width, 0.0);
    params.layers.push_back(std::move(layer));
    prev = width;
  };
  for (std::size_t w : hidden_widths) add_layer(w);
  add_layer(output_dim);
  return params;
}

DenseVector forward(const MlpParams& params, std::span<const double> x,
                    ForwardMode mode, std::mt19937_64* dropout_rng) {
  params.validate();
  if (x.size() != params.input_dim()) {
    throw invalid_input("input width must match the network input");
  }
  if (mode == ForwardMode::train && params.dropout_rate > 0.0 &&
      dropout_rng == nullptr) {
    throw invalid_input("train-mode forward needs a dropout RNG");
  }
  const Matrix out =
      run_forward(params, column_from_span(x), mode, dropout_rng, nullptr);
  return DenseVector(out.data(), out.data() + out.size());
}

double triangle_penalty(double exy, double exz, double eyz, QExponent q) {
  double violation = 0.0;
  if (!q.is_infinity()) {
    const double qq = q.value();
    violation =
        std::pow(exy, qq) - std::pow(exz, qq) - std::pow(eyz, qq);
  } else {
    violation = exy - std::max(exz, eyz);
  }
  return std::max(violation, 0.0);
}

double stress_loss(const MlpParams& params, std::span<const double> x,
                   std::span<const double> y, double target) {
  params.validate();
  if (x.size() != params.input_dim() || y.size() != params.input_dim()) {
    throw invalid_input("input width must match the network input");
  }
  if (!std::isfinite(target)) {
    throw invalid_input("pair targets must be finite");
  }
  Matrix input(static_cast<Eigen::Index>(x.size()), 2);
  input.col(0) = column_from_span(x);
  input.col(1) = column_from_span(y);
  const Matrix out =
      run_forward(params, input, ForwardMode::infer, nullptr, nullptr);
  const double e = (out.col(0) - out.col(1)).norm();
  const double diff = target - e;
  return diff * diff;
}

double triangle_loss(const MlpParams& params, std::span<const double> x,
                     std::span<const double> y, std::span<const double> z,
                     QExponent q) {
  params.validate();
  if (x.size() != params.input_dim() || y.size() != params.input_dim() ||
      z.size() != params.input_dim()) {
    throw invalid_input("input width must match the network input");
  }
  Matrix input(static_cast<Eigen::Index>(x.size()), 3);
  input.col(0) = column_from_span(x);
  input.col(1) = column_from_span(y);
  input.col(2) = column_from_span(z);
  const Matrix out =
      run_forward(params, input, ForwardMode::infer, nullptr, nullptr);
  const double exy = (out.col(0) - out.col(1)).norm();
  const double exz = (out.col(0) - out.col(2)).norm();
  const double eyz = (out.col(1) - out.col(2)).norm();
  return triangle_penalty(exy, exz, eyz, q);
}

double total_objective(const MlpParams& params, const RowMatrix& points,
                       std::span<const PairExample> pairs,
                       std::span<const TripleExample> triples, double alpha_D,
                       double alpha_T, QExponent q) {
  validate_objective_inputs(params, points, pairs, triples, alpha_D, alpha_T);
  return objective_core(params, points, pairs, triples, alpha_D, alpha_T, q,
                        nullptr, ForwardMode::infer, nullptr, nullptr);
}

double objective_with_gradient(const MlpParams& params, const RowMatrix& points,
                               std::span<const PairExample> pairs,
                               std::span<const TripleExample> triples,
                               double alpha_D, double alpha_T, QExponent q,
                               MlpParams* gradient) {
  validate_objective_inputs(params, points, pairs, triples, alpha_D, alpha_T);
  if (gradient == nullptr) {
    throw invalid_input("gradient output must not be null");
  }
  return objective_core(params, points, pairs, triples, alpha_D, alpha_T, q,
                        gradient, ForwardMode::infer, nullptr, nullptr);
}

double gradient_check(const MlpParams& params, const RowMatrix& points,
                      std::span<const PairExample> pairs,
                      std::span<const TripleExample> triples, double alpha_D,
                      double alpha_T, QExponent q, double step,
                      double corruption) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw invalid_input("finite-difference step must be positive");
  }
  MlpParams analytic_grad;
  objective_with_gradient(params, points, pairs, triples, alpha_D, alpha_T, q,
                          &analytic_grad);
  std::vector<double> analytic;
  flatten_into(analytic_grad, analytic);
  const std::size_t total = analytic.size();
  const std::size_t samples = std::min<std::size_t>(150, total);

  MlpParams work = params;
  double worst = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const std::size_t index = k * total / samples;
    double* slot = param_at(work, index);
    const double saved = *slot;
    *slot = saved + step;
    const double up = objective_core(work, points, pairs, triples, alpha_D,
                                     alpha_T, q, nullptr, ForwardMode::infer,
                                     nullptr, nullptr);
    *slot = saved - step;
    const double down = objective_core(work, points, pairs, triples, alpha_D,
                                       alpha_T, q, nullptr, ForwardMode::infer,
                                       nullptr, nullptr);
    *slot = saved;
    const double numeric = (up - down) / (2.0 * step);
    double a = analytic[index];
    if (k == 0) a += corruption;
    const double rel = std::abs(a - numeric) /
                       std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, rel);
  }
  return worst;
}

void TrainConfig::validate() const {
  if (!(alpha_D >= 0.0) || !(alpha_T >= 0.0) || !std::isfinite(alpha_D) ||
      !std::isfinite(alpha_T)) {
    throw invalid_input("loss weights must be nonnegative and finite");
  }
  if (alpha_D + alpha_T <= 0.0) {
    throw invalid_input("at least one loss weight must be positive");
  }
  if (batch_pairs == 0) {
    throw invalid_input("pair batch size must be at least 1");
  }
  if (alpha_T > 0.0 && batch_triples == 0) {
    throw invalid_input(
        "triple batch size must be at least 1 when the triangle weight is "
        "positive");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw invalid_input("learning rate must be positive and finite");
  }
  if (restart_period == 0) {
    throw invalid_input("restart period must be at least one epoch");
  }
  if (period_multiplier == 0) {
    throw invalid_input("period multiplier must be at least 1");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw invalid_input("moment decay rates must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) {
    throw invalid_input("adaptive-step epsilon must be positive");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw invalid_input("weight decay must be nonnegative and finite");
  }
  for (std::size_t w : hidden_widths) {
    if (w == 0) throw invalid_input("network widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw invalid_input("dropout rate must lie in [0, 1)");
  }
}

TrainResult train(const RowMatrix& points, const ProjectedMatrix& targets,
                  const TrainConfig& config) {
  config.validate();
  const std::size_t n = points.rows;
  if (n < 2) throw invalid_input("training needs at least 2 points");
  if (points.cols == 0) {
    throw invalid_input("points must have at least one coordinate");
  }
  if (targets.base.size() != n) {
    throw invalid_input("target matrix size must match the point count");
  }
  if (targets.q.value_or_inf() != config.q.value_or_inf()) {
    throw invalid_input("training q must match the projected matrix q");
  }

  const std::size_t embed_dim =
      config.embed_dim != 0 ? config.embed_dim : std::min<std::size_t>(points.cols, 64);
  TrainResult result;
  result.params =
      MlpParams::create(points.cols, config.hidden_widths, embed_dim,
                        config.dropout_rate, config.seed);
  if (config.epochs == 0) return result;

  std::vector<std::pair<std::uint32_t, std::uint32_t>> universe;
  universe.reserve(n * (n - 1) / 2);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) universe.emplace_back(i, j);
  }
  const std::size_t pair_count = universe.size();
  const std::size_t batch_pairs = std::min(config.batch_pairs, pair_count);
  const std::size_t steps =
      config.steps_per_epoch != 0
          ? config.steps_per_epoch
          : (pair_count + config.batch_pairs - 1) / config.batch_pairs;
  // Triples need three distinct points; with fewer the hinge term is inert.
  const bool with_triples = config.alpha_T > 0.0 && n >= 3;
  const double alpha_T = with_triples ? config.alpha_T : 0.0;

  // Independent stream for sampling and dropout, decorrelated from the
  // init stream by a fixed odd constant.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::uint32_t> pick_point(
      0, static_cast<std::uint32_t>(n - 1));

  MlpParams& params = result.params;
  MlpParams grad = zero_like(params);
  MlpParams moment1 = zero_like(params);
  MlpParams moment2 = zero_like(params);

  std::size_t period = config.restart_period;
  std::size_t epoch_in_period = 0;
  std::size_t update_count = 0;
  std::vector<PairExample> pair_batch;
  std::vector<TripleExample> triple_batch;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        config.learning_rate * 0.5 *
        (1.0 + std::cos(std::numbers::pi *
                        static_cast<double>(epoch_in_period) /
                        static_cast<double>(period)));

    double stress_sum = 0.0;
    double triangle_sum = 0.0;
    double sq_target_sum = 0.0;
    std::size_t pairs_seen = 0;
    std::size_t triples_seen = 0;

    for (std::size_t step = 0; step < steps; ++step) {
      // Partial Fisher-Yates: the leading batch_pairs entries become a
      // uniform sample without replacement; the array stays a permutation.
      pair_batch.clear();
      for (std::size_t i = 0; i < batch_pairs; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pair_count - 1);
        std::swap(universe[i], universe[pick(rng)]);
        const auto [a, b] = universe[i];
        pair_batch.push_back({a, b, targets.base(a, b)});
      }
      triple_batch.clear();
      if (with_triples) {
        for (std::size_t j = 0; j < config.batch_triples; ++j) {
          TripleExample t;
          t.a = pick_point(rng);
          do t.b = pick_point(rng); while (t.b == t.a);
          do t.c = pick_point(rng); while (t.c == t.a || t.c == t.b);
          triple_batch.push_back(t);
        }
      }

      BatchStats stats;
      const double loss = objective_core(
          params, points, pair_batch, triple_batch, config.alpha_D, alpha_T,
          config.q, &grad, ForwardMode::train, &rng, &stats);
      if (!std::isfinite(loss)) {
        throw numeric_failure("training loss became non-finite at epoch " +
                              std::to_string(epoch));
      }
      stress_sum += stats.stress_sum;
      triangle_sum += stats.triangle_sum;
      sq_target_sum += stats.sq_target_sum;
      pairs_seen += pair_batch.size();
      triples_seen += triple_batch.size();

      // Moment-based update with bias correction; weight decay is applied
      // directly to the parameters, outside the adaptive step.
      ++update_count;
      const double c1 =
          1.0 - std::pow(config.beta1, static_cast<double>(update_count));
      const double c2 =
          1.0 - std::pow(config.beta2, static_cast<double>(update_count));
      for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto update = [&](std::vector<double>& x, const std::vector<double>& g,
                          std::vector<double>& m1, std::vector<double>& m2) {
          for (std::size_t k = 0; k < x.size(); ++k) {
            m1[k] = config.beta1 * m1[k] + (1.0 - config.beta1) * g[k];
            m2[k] = config.beta2 * m2[k] + (1.0 - config.beta2) * g[k] * g[k];
            const double mhat = m1[k] / c1;
            const double vhat = m2[k] / c2;
            x[k] -= lr * (mhat / (std::sqrt(vhat) + config.epsilon) +
                          config.weight_decay * x[k]);
          }
        };
        update(params.layers[l].weights, grad.layers[l].weights,
               moment1.layers[l].weights, moment2.layers[l].weights);
        update(params.layers[l].bias, grad.layers[l].bias,
               moment1.layers[l].bias, moment2.layers[l].bias);
      }
    }

    result.report.stress_per_epoch.push_back(
        pairs_seen > 0 ? stress_sum / static_cast<double>(pairs_seen) : 0.0);
    result.report.triangle_per_epoch.push_back(
        triples_seen > 0 ? triangle_sum / static_cast<double>(triples_seen)
                         : 0.0);
    result.report.normalized_stress_per_epoch.push_back(
        sq_target_sum > 0.0 ? std::sqrt(stress_sum / sq_target_sum) : 0.0);

    ++epoch_in_period;
    if (epoch_in_period >= period) {
      epoch_in_period = 0;
      period *= config.period_multiplier;
    }
  }
  return result;
}

RowMatrix embed_all(const MlpParams& params, const RowMatrix& points) {
  params.validate();
  if (points.cols != params.input_dim()) {
    throw invalid_input("point width must match the network input");
  }
  RowMatrix out(points.rows, params.output_dim());
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (points.rows + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(points.rows, lo + kChunk);
    Matrix input(static_cast<Eigen::Index>(points.cols),
                 static_cast<Eigen::Index>(hi - lo));
    for (std::size_t r = lo; r < hi; ++r) {
      input.col(static_cast<Eigen::Index>(r - lo)) =
          ConstVecMap(points.row(r).data(),
                      static_cast<Eigen::Index>(points.cols));
    }
    const Matrix res =
        run_forward(params, input, ForwardMode::infer, nullptr, nullptr);
    for (std::size_t r = lo; r < hi; ++r) {
      auto dst = out.row(r);
      const auto col = res.col(static_cast<Eigen::Index>(r - lo));
      for (std::size_t k = 0; k < out.cols; ++k) {
        dst[k] = col(static_cast<Eigen::Index>(k));
      }
    }
  });
  return out;
}

}  // namespace infsearch
