#include "infsearch/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "infsearch/io.hpp"

namespace infsearch {
namespace {

constexpr std::uint32_t kIndexVersion = 1;

std::size_t resolve_subset_size(const IndexConfig& config, std::size_t n) {
  if (config.projection_subset_size != 0) return config.projection_subset_size;
  const std::size_t cap =
      config.projection.mode == ProjectionMode::exact ? 1000 : 10000;
  return std::min(cap, n);
}

std::size_t resolve_embedding_dim(const IndexConfig& config,
                                  std::size_t input_dim) {
  if (config.embedding_dim != 0) return config.embedding_dim;
  if (config.training.embed_dim != 0) return config.training.embed_dim;
  return std::min<std::size_t>(input_dim, 64);
}

double euclidean_between(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

// Multi-hot rows of width `dim` for sparse data; dense data is returned
// as-is (its width already matches).
RowMatrix multi_hot(const std::vector<SparseSet>& rows, std::size_t dim) {
  RowMatrix out(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::span<double> dst = out.row(r);
    for (std::uint32_t id : rows[r]) {
      if (id < dim) dst[id] = 1.0;
    }
  }
  return out;
}

RowMatrix training_points(const Dataset& data, std::size_t dim) {
  if (data.is_dense()) return data.dense_points();
  return multi_hot(data.sparse_points(), dim);
}

// Either a dense span or a sparse set, whichever representation the caller
// supplied; exactly one is active.
struct QueryView {
  std::span<const double> dense;
  const SparseSet* sparse = nullptr;
};

DenseVector embed_query(const Index& index, const QueryView& view) {
  if (view.sparse == nullptr) return forward(index.params, view.dense);
  DenseVector input(index.params.input_dim(), 0.0);
  for (std::uint32_t id : *view.sparse) {
    if (id < input.size()) input[id] = 1.0;
  }
  return forward(index.params, input);
}

double original_dissim(const Index& index, const QueryView& view,
                       std::uint32_t id) {
  if (view.sparse == nullptr) {
    return dissimilarity(view.dense, index.dataset.dense_row(id),
                         index.config.kind);
  }
  return jaccard_dissimilarity(*view.sparse, index.dataset.sparse_row(id));
}

double seconds_between(std::chrono::steady_clock::time_point a,
                       std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

// broad_k == 0 selects the one-stage path.
QueryResult run_query(const Index& index, const QueryView& view, std::size_t k,
                      std::size_t broad_k) {
  const auto t0 = std::chrono::steady_clock::now();
  const DenseVector qvec = embed_query(index, view);
  const auto t1 = std::chrono::steady_clock::now();

  const std::size_t fetch = broad_k == 0 ? k : broad_k;
  SearchStats stats;
  std::vector<Neighbor> found = index.tree.search_knn(
      [&](std::uint32_t id) {
        return euclidean_between(qvec, index.embedded.row(id));
      },
      fetch, &stats);

  QueryResult result;
  result.comparisons = stats.comparisons;
  if (broad_k == 0) {
    result.neighbors = std::move(found);
  } else {
    result.comparisons += found.size();
    for (Neighbor& nb : found) {
      nb.distance = original_dissim(index, view, nb.id);
    }
    std::sort(found.begin(), found.end(),
              [](const Neighbor& a, const Neighbor& b) {
                return a.distance != b.distance ? a.distance < b.distance
                                                : a.id < b.id;
              });
    if (found.size() > k) found.resize(k);
    result.neighbors = std::move(found);
  }
  const auto t2 = std::chrono::steady_clock::now();
  result.preprocess_seconds = seconds_between(t0, t1);
  result.search_seconds = seconds_between(t1, t2);
  return result;
}

void require_dense_query(const Index& index, std::span<const double> point) {
  if (!index.dataset.is_dense()) {
    throw invalid_input("dense query against a sparse index");
  }
  if (point.size() != index.params.input_dim()) {
    throw invalid_input("query has " + std::to_string(point.size()) +
                        " values but the index embeds " +
                        std::to_string(index.params.input_dim()) +
                        "-dimensional points");
  }
}

void require_sparse_query(const Index& index, const SparseSet& point) {
  if (!index.dataset.is_sparse()) {
    throw invalid_input("sparse query against a dense index");
  }
  for (std::size_t i = 1; i < point.size(); ++i) {
    if (point[i] <= point[i - 1]) {
      throw invalid_input("sparse query ids must be strictly ascending");
    }
  }
}

void write_config(ByteWriter& out, const IndexConfig& c) {
  out.u8(static_cast<std::uint8_t>(c.kind));
  out.q_tag(c.q);
  out.u8(static_cast<std::uint8_t>(c.projection.mode));
  out.q_tag(c.projection.q);
  out.u64(c.projection.knn_k);
  out.u64(c.projection.iterations_l);
  out.f64(c.projection.scale);
  const TrainConfig& t = c.training;
  out.q_tag(t.q);
  out.f64(t.alpha_D);
  out.f64(t.alpha_T);
  out.u64(t.epochs);
  out.u64(t.batch_pairs);
  out.u64(t.batch_triples);
  out.u64(t.steps_per_epoch);
  out.f64(t.learning_rate);
  out.u64(t.restart_period);
  out.u64(t.period_multiplier);
  out.f64(t.beta1);
  out.f64(t.beta2);
  out.f64(t.epsilon);
  out.f64(t.weight_decay);
  out.u32(static_cast<std::uint32_t>(t.hidden_widths.size()));
  for (std::size_t w : t.hidden_widths) out.u64(w);
  out.u64(t.embed_dim);
  out.f64(t.dropout_rate);
  out.u64(t.seed);
  out.u64(c.projection_subset_size);
  out.u64(c.embedding_dim);
  out.u8(c.prune_q.has_value() ? 1 : 0);
  if (c.prune_q.has_value()) out.q_tag(*c.prune_q);
  out.u64(c.seed);
}

IndexConfig read_config(ByteReader& in) {
  IndexConfig c;
  const std::uint8_t kind = in.u8();
  if (kind > static_cast<std::uint8_t>(DissimilarityKind::jaccard)) {
    throw format_error("unknown dissimilarity kind tag " +
                       std::to_string(kind));
  }
  c.kind = static_cast<DissimilarityKind>(kind);
  c.q = in.q_tag();
  const std::uint8_t mode = in.u8();
  if (mode > 1) {
    throw format_error("unknown projection mode tag " + std::to_string(mode));
  }
  c.projection.mode = static_cast<ProjectionMode>(mode);
  c.projection.q = in.q_tag();
  c.projection.knn_k = in.u64();
  c.projection.iterations_l = in.u64();
  c.projection.scale = in.f64();
  TrainConfig& t = c.training;
  t.q = in.q_tag();
  t.alpha_D = in.f64();
  t.alpha_T = in.f64();
  t.epochs = in.u64();
  t.batch_pairs = in.u64();
  t.batch_triples = in.u64();
  t.steps_per_epoch = in.u64();
  t.learning_rate = in.f64();
  t.restart_period = in.u64();
  t.period_multiplier = in.u64();
  t.beta1 = in.f64();
  t.beta2 = in.f64();
  t.epsilon = in.f64();
  t.weight_decay = in.f64();
  const std::uint32_t hidden_count = in.u32();
  in.require_payload(hidden_count, 8);
  t.hidden_widths.assign(hidden_count, 0);
  for (std::size_t& w : t.hidden_widths) w = in.u64();
  t.embed_dim = in.u64();
  t.dropout_rate = in.f64();
  t.seed = in.u64();
  c.projection_subset_size = in.u64();
  c.embedding_dim = in.u64();
  const std::uint8_t prune_flag = in.u8();
  if (prune_flag > 1) {
    throw format_error("bad pruning-override flag " +
                       std::to_string(prune_flag));
  }
  if (prune_flag == 1) c.prune_q = in.q_tag();
  c.seed = in.u64();
  return c;
}

void write_matrix(ByteWriter& out, const RowMatrix& m) {
  out.u64(m.rows);
  out.u64(m.cols);
  for (double v : m.data) out.f64(v);
}

RowMatrix read_matrix(ByteReader& in) {
  const std::uint64_t rows = in.u64();
  const std::uint64_t cols = in.u64();
  in.require_payload(cols, 8);  // bounds cols so cols * 8 cannot overflow
  if (cols != 0) in.require_payload(rows, cols * 8);
  RowMatrix m(rows, cols);
  for (double& v : m.data) v = in.f64();
  return m;
}

void write_tree(ByteWriter& out, const VpTree& tree) {
  out.q_tag(tree.q());
  out.f64(tree.scale());
  out.u32(static_cast<std::uint32_t>(tree.root()));
  out.u64(tree.nodes().size());
  for (const VpNode& node : tree.nodes()) {
    out.u32(node.vantage);
    out.f64(node.mu);
    out.u32(static_cast<std::uint32_t>(node.left));
    out.u32(static_cast<std::uint32_t>(node.right));
  }
}

VpTree read_tree(ByteReader& in) {
  const QExponent q = in.q_tag();
  const double scale = in.f64();
  const auto root = static_cast<std::int32_t>(in.u32());
  const std::uint64_t count = in.u64();
  in.require_payload(count, 20);  // u32 + f64 + 2 x u32 per node
  std::vector<VpNode> nodes(count);
  for (VpNode& node : nodes) {
    node.vantage = in.u32();
    node.mu = in.f64();
    node.left = static_cast<std::int32_t>(in.u32());
    node.right = static_cast<std::int32_t>(in.u32());
  }
  return VpTree::from_parts(std::move(nodes), root, q, scale);
}

void write_dataset(ByteWriter& out, const Dataset& data) {
  out.u8(data.is_dense() ? 1 : 0);
  if (data.is_dense()) {
    write_matrix(out, data.dense_points());
    return;
  }
  out.u64(data.sparse_points().size());
  for (const SparseSet& row : data.sparse_points()) {
    out.u32(static_cast<std::uint32_t>(row.size()));
    for (std::uint32_t id : row) out.u32(id);
  }
}

Dataset read_dataset(ByteReader& in) {
  const std::uint8_t dense_flag = in.u8();
  if (dense_flag > 1) {
    throw format_error("bad dataset representation flag " +
                       std::to_string(dense_flag));
  }
  if (dense_flag == 1) return Dataset::dense(read_matrix(in));
  const std::uint64_t count = in.u64();
  in.require_payload(count, 4);
  std::vector<SparseSet> rows(count);
  for (SparseSet& row : rows) {
    const std::uint32_t length = in.u32();
    in.require_payload(length, 4);
    row.resize(length);
    for (std::uint32_t& id : row) id = in.u32();
  }
  return Dataset::sparse(std::move(rows));
}

ByteWriter serialize_index(const Index& index) {
  ByteWriter out;
  out.magic("QIDX");
  out.u32(kIndexVersion);
  write_config(out, index.config);
  write_qmlp(out, ModelFile{index.params, index.config.q, index.target_scale});
  write_matrix(out, index.embedded);
  write_tree(out, index.tree);
  write_dataset(out, index.dataset);
  return out;
}

}  // namespace

void IndexConfig::validate(std::size_t dataset_size) const {
  if (dataset_size == 0) {
    throw invalid_input("index construction needs a nonempty dataset");
  }
  const std::size_t subset = resolve_subset_size(*this, dataset_size);
  if (subset < 2) {
    throw invalid_input("projection subset must hold at least 2 points");
  }
  if (subset > dataset_size) {
    throw invalid_input("projection subset of " + std::to_string(subset) +
                        " exceeds the dataset size " +
                        std::to_string(dataset_size));
  }
  TrainConfig t = training;
  t.q = q;  // the pipeline trains at the index exponent
  t.validate();
}

Index build_index(const Dataset& data, const IndexConfig& config) {
  const std::size_t n = data.size();
  config.validate(n);

  // Resolve the echo first so the stored config rebuilds this exact index.
  IndexConfig cfg = config;
  cfg.projection_subset_size = resolve_subset_size(config, n);
  cfg.embedding_dim = resolve_embedding_dim(config, data.dim());
  cfg.projection.q = cfg.q;
  cfg.training.q = cfg.q;
  cfg.training.embed_dim = cfg.embedding_dim;

  // 1. Seeded uniform subset (partial shuffle), kept in ascending id order.
  std::vector<std::uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t i = 0; i < cfg.projection_subset_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(cfg.projection_subset_size);
  std::sort(ids.begin(), ids.end());

  // 2-3. Subset dissimilarities and their canonical projection.
  const Dataset subset = data.subset(ids);
  const DistanceMatrix subset_dissims = subset.pairwise(cfg.kind);
  const ProjectedMatrix targets =
      cfg.projection.mode == ProjectionMode::exact
          ? canonical_exact(subset_dissims, cfg.q)
          : canonical_approx(subset_dissims, cfg.projection);

  // 4. Train the embedding on (subset points, projected targets).
  const RowMatrix subset_points = training_points(subset, data.dim());
  TrainResult trained = train(subset_points, targets, cfg.training);

  // 5. Embed the full dataset.
  const RowMatrix all_points = training_points(data, data.dim());
  RowMatrix embedded = embed_all(trained.params, all_points);

  // 6. Vantage-point tree over the embedded rows.
  std::vector<std::uint32_t> all_ids(n);
  std::iota(all_ids.begin(), all_ids.end(), 0u);
  const QExponent prune = cfg.prune_q.has_value() ? *cfg.prune_q : cfg.q;
  VpTree tree = VpTree::build(
      all_ids,
      [&](std::uint32_t a, std::uint32_t b) {
        return euclidean_between(embedded.row(a), embedded.row(b));
      },
      prune, cfg.seed);

  Index index;
  index.config = std::move(cfg);
  index.params = std::move(trained.params);
  index.target_scale = targets.scale_used;
  index.embedded = std::move(embedded);
  index.tree = std::move(tree);
  index.dataset = data;
  return index;
}

QueryResult query(const Index& index, std::span<const double> point,
                  std::size_t k) {
  require_dense_query(index, point);
  return run_query(index, QueryView{point, nullptr}, k, 0);
}

QueryResult query(const Index& index, const SparseSet& point, std::size_t k) {
  require_sparse_query(index, point);
  return run_query(index, QueryView{{}, &point}, k, 0);
}

QueryResult two_stage_query(const Index& index, std::span<const double> point,
                            std::size_t k, std::size_t broad_k) {
  require_dense_query(index, point);
  if (broad_k < k) {
    throw invalid_input("broad candidate count must be at least k");
  }
  return run_query(index, QueryView{point, nullptr}, k, broad_k);
}

QueryResult two_stage_query(const Index& index, const SparseSet& point,
                            std::size_t k, std::size_t broad_k) {
  require_sparse_query(index, point);
  if (broad_k < k) {
    throw invalid_input("broad candidate count must be at least k");
  }
  return run_query(index, QueryView{{}, &point}, k, broad_k);
}

void save_index(const Index& index, const std::string& path) {
  serialize_index(index).save(path);
}

Index load_index(const std::string& path) {
  ByteReader in = ByteReader::from_file(path);
  in.expect_magic("QIDX");
  const std::uint32_t version = in.u32();
  if (version != kIndexVersion) {
    throw format_error("unsupported index version " + std::to_string(version));
  }
  Index index;
  index.config = read_config(in);
  ModelFile model = read_qmlp(in);
  if (!(model.q == index.config.q)) {
    throw format_error("model exponent disagrees with the config echo");
  }
  index.params = std::move(model.params);
  index.target_scale = model.scale;
  index.embedded = read_matrix(in);
  index.tree = read_tree(in);
  index.dataset = read_dataset(in);
  in.finish();

  const std::size_t n = index.dataset.size();
  if (index.embedded.rows != n || index.tree.point_count() != n) {
    throw format_error("index sections disagree on the point count");
  }
  if (index.embedded.cols != index.params.output_dim()) {
    throw format_error("embedded width disagrees with the model output");
  }
  return index;
}

}  // namespace infsearch
