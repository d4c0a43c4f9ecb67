#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <vector>

#include "infsearch/io.hpp"
#include "infsearch/pipeline.hpp"
#include "infsearch/projection.hpp"
#include "support.hpp"

using namespace infsearch;
using namespace testsupport;

namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("infsearch_pipeline_" + name);
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void spit(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

double euclid(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Small cheap index over random dense points; training quality is irrelevant
// for the contracts exercised with it.
IndexConfig tiny_config() {
  IndexConfig cfg;
  cfg.kind = DissimilarityKind::euclidean;
  cfg.q = QExponent::finite(2.0);
  cfg.embedding_dim = 4;
  cfg.training.hidden_widths = {8};
  cfg.training.epochs = 2;
  cfg.training.seed = 1;
  cfg.seed = 9;
  return cfg;
}

Dataset tiny_dataset() {
  std::mt19937_64 rng(31);
  return Dataset::dense(random_points(10, 3, rng));
}

// Frozen realizable fixture: 60 codewords of a Hamming-distance-3 binary
// code in 16 dimensions. Their Euclidean distances are an exact 2-metric, so
// the canonical projection leaves them unchanged and the training targets
// are the points' own distances. One-bit-flip queries have a unique nearest
// neighbor at distance 1 with every competitor at >= sqrt(2).
constexpr std::size_t kCodeCount = 60;
constexpr std::size_t kCodeDim = 16;

const Dataset& realizable_dataset() {
  static const Dataset data =
      Dataset::dense(binary_code_points(kCodeCount, kCodeDim, 3, 7));
  return data;
}

const Index& realizable_index() {
  static const Index index = [] {
    IndexConfig cfg;
    cfg.kind = DissimilarityKind::euclidean;
    cfg.q = QExponent::finite(2.0);
    cfg.projection_subset_size = kCodeCount;
    cfg.embedding_dim = kCodeDim;
    cfg.training.hidden_widths = {64, 64};
    cfg.training.epochs = 250;
    cfg.training.alpha_T = 0.0;
    cfg.training.dropout_rate = 0.0;
    cfg.training.seed = 11;
    cfg.seed = 5;
    return build_index(realizable_dataset(), cfg);
  }();
  return index;
}

// Held-out query: codeword `base` with one bit flipped.
std::vector<double> flipped_query(std::size_t base, std::size_t bit) {
  std::span<const double> row = realizable_dataset().dense_row(base);
  std::vector<double> q(row.begin(), row.end());
  q[bit] = 1.0 - q[bit];
  return q;
}

std::vector<SparseSet> random_sets(std::size_t count, std::uint32_t universe,
                                   std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> pick_id(0, universe - 1);
  std::uniform_int_distribution<std::size_t> pick_len(5, 10);
  std::vector<SparseSet> rows(count);
  for (auto& row : rows) {
    std::set<std::uint32_t> ids;
    const std::size_t len = pick_len(rng);
    while (ids.size() < len) ids.insert(pick_id(rng));
    row.assign(ids.begin(), ids.end());
  }
  return rows;
}

}  // namespace

TEST_CASE("config validation rejects bad subset sizes and empty datasets") {
  IndexConfig cfg = tiny_config();
  CHECK_THROWS_AS(cfg.validate(0), invalid_input);

  cfg.projection_subset_size = 1;
  CHECK_THROWS_AS(cfg.validate(10), invalid_input);
  cfg.projection_subset_size = 11;
  CHECK_THROWS_AS(cfg.validate(10), invalid_input);
  cfg.projection_subset_size = 0;  // auto resolves to 1 on a 1-point dataset
  CHECK_THROWS_AS(cfg.validate(1), invalid_input);
  CHECK_NOTHROW(cfg.validate(10));

  CHECK_THROWS_AS(build_index(tiny_dataset(), [] {
                    IndexConfig c = tiny_config();
                    c.projection_subset_size = 11;
                    return c;
                  }()),
                  invalid_input);
}

TEST_CASE("a tiny index has the contracted shapes and a resolved config echo") {
  const Index index = build_index(tiny_dataset(), tiny_config());

  CHECK(index.embedded.rows == 10);
  CHECK(index.embedded.cols == 4);
  CHECK(index.tree.point_count() == 10);
  CHECK(index.params.input_dim() == 3);
  CHECK(index.params.output_dim() == 4);
  CHECK(index.dataset.size() == 10);
  CHECK(index.target_scale > 0.0);

  // The echo is fully resolved: auto sizes replaced, q copied everywhere.
  CHECK(index.config.projection_subset_size == 10);
  CHECK(index.config.embedding_dim == 4);
  CHECK(index.config.training.embed_dim == 4);
  CHECK(index.config.projection.q == index.config.q);
  CHECK(index.config.training.q == index.config.q);
  CHECK_FALSE(index.config.prune_q.has_value());
  CHECK(index.tree.q() == index.config.q);

  // Embedded rows are the per-point forward passes.
  for (std::size_t i = 0; i < 10; ++i) {
    const DenseVector direct = forward(index.params, tiny_dataset().dense_row(i));
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(index.embedded.row(i)[c] == doctest::Approx(direct[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("the pruning override controls the tree exponent and stays exact") {
  IndexConfig cfg = tiny_config();
  cfg.prune_q = QExponent::finite(1.0);
  const Index index = build_index(tiny_dataset(), cfg);
  CHECK(index.tree.q() == QExponent::finite(1.0));
  CHECK(index.config.q == QExponent::finite(2.0));

  // Euclidean embedded distances satisfy the plain triangle inequality, so
  // 1-pruning can never miss: one-stage results equal the exhaustive sort.
  std::mt19937_64 rng(77);
  for (int t = 0; t < 10; ++t) {
    const std::vector<double> q{rng() % 5 * 0.2, rng() % 5 * 0.2, rng() % 5 * 0.2};
    const DenseVector qe = forward(index.params, q);
    const auto want = brute_knn(10, 3, [&](std::size_t i) {
      return euclid(qe, index.embedded.row(i));
    });
    const QueryResult got = query(index, std::span<const double>(q), 3);
    REQUIRE(got.neighbors.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(got.neighbors[i].id == want[i].second);
      CHECK(got.neighbors[i].distance == doctest::Approx(want[i].first).epsilon(1e-12));
    }
  }
}

TEST_CASE("equal seeds give bit-identical index files; seeds matter") {
  const fs::path a = temp_file("det_a.qidx");
  const fs::path b = temp_file("det_b.qidx");
  const fs::path c = temp_file("det_c.qidx");

  save_index(build_index(tiny_dataset(), tiny_config()), a.string());
  save_index(build_index(tiny_dataset(), tiny_config()), b.string());
  CHECK(slurp(a) == slurp(b));

  IndexConfig other = tiny_config();
  other.seed = 10;
  save_index(build_index(tiny_dataset(), other), c.string());
  CHECK(slurp(a) != slurp(c));
}

TEST_CASE("realizable fixture: one-stage recall@1 is perfect on held-out queries") {
  const Dataset& data = realizable_dataset();

  // Fixture premise: the dataset's own Euclidean distances are already a
  // 2-metric, so the projection (and hence the training target matrix) is
  // exactly the original distances.
  const DistanceMatrix D = data.pairwise(DissimilarityKind::euclidean);
  const ProjectedMatrix proj = canonical_exact(D, QExponent::finite(2.0));
  double premise = 0.0;
  for (std::size_t i = 0; i < kCodeCount; ++i) {
    for (std::size_t j = 0; j < kCodeCount; ++j) {
      premise = std::max(premise, std::abs(proj.base(i, j) - D(i, j)));
    }
  }
  CHECK(premise <= 1e-9);

  const Index& index = realizable_index();
  std::size_t hits = 0;
  for (std::size_t t = 0; t < 50; ++t) {
    const std::size_t base = t % kCodeCount;
    const std::vector<double> q = flipped_query(base, (t * 7 + 3) % kCodeDim);

    const auto truth = brute_knn(kCodeCount, 1, [&](std::size_t i) {
      return euclid(q, data.dense_row(i));
    });
    REQUIRE(truth[0].second == base);  // unique by the code's min distance

    const QueryResult r = query(index, std::span<const double>(q), 1);
    REQUIRE(r.neighbors.size() == 1);
    hits += r.neighbors[0].id == truth[0].second;
    CHECK(r.comparisons <= kCodeCount);
    CHECK(r.preprocess_seconds >= 0.0);
    CHECK(r.search_seconds >= 0.0);
    CHECK(r.preprocess_seconds + r.search_seconds > 0.0);
  }
  CHECK(hits == 50);
}

TEST_CASE("a query equal to a dataset point returns that point at rank 1") {
  const Index& index = realizable_index();
  for (std::size_t id : {std::size_t{0}, std::size_t{17}, std::size_t{59}}) {
    const std::span<const double> row = realizable_dataset().dense_row(id);
    const QueryResult r = query(index, row, 1);
    REQUIRE(r.neighbors.size() == 1);
    CHECK(r.neighbors[0].id == id);
    CHECK(r.neighbors[0].distance <= 1e-9);
  }
}

TEST_CASE("k = point count returns the full embedded ordering") {
  const Index& index = realizable_index();
  const std::vector<double> q = flipped_query(13, 2);
  const DenseVector qe = forward(index.params, q);
  const auto want = brute_knn(kCodeCount, kCodeCount, [&](std::size_t i) {
    return euclid(qe, index.embedded.row(i));
  });

  const QueryResult r = query(index, std::span<const double>(q), kCodeCount);
  REQUIRE(r.neighbors.size() == kCodeCount);
  for (std::size_t i = 0; i < kCodeCount; ++i) {
    CHECK(r.neighbors[i].id == want[i].second);
    CHECK(r.neighbors[i].distance == doctest::Approx(want[i].first).epsilon(1e-12));
  }
  // Ascending by (distance, id).
  for (std::size_t i = 1; i < kCodeCount; ++i) {
    const Neighbor& a = r.neighbors[i - 1];
    const Neighbor& b = r.neighbors[i];
    CHECK((a.distance < b.distance ||
           (a.distance == b.distance && a.id < b.id)));
  }
}

TEST_CASE("two-stage with the narrowest broad set reorders the one-stage set") {
  const Index& index = realizable_index();
  const Dataset& data = realizable_dataset();
  const std::vector<double> q = flipped_query(29, 11);
  const std::size_t k = 10;

  const QueryResult one = query(index, std::span<const double>(q), k);
  const QueryResult two =
      two_stage_query(index, std::span<const double>(q), k, k);

  // Same candidate ids, reordered by original dissimilarity.
  std::set<std::uint32_t> one_ids, two_ids;
  for (const Neighbor& nb : one.neighbors) one_ids.insert(nb.id);
  for (const Neighbor& nb : two.neighbors) two_ids.insert(nb.id);
  CHECK(one_ids == two_ids);
  CHECK(two.comparisons == one.comparisons + k);

  for (std::size_t i = 0; i < k; ++i) {
    const Neighbor& nb = two.neighbors[i];
    CHECK(nb.distance ==
          doctest::Approx(euclid(q, data.dense_row(nb.id))).epsilon(1e-12));
    if (i > 0) {
      CHECK((two.neighbors[i - 1].distance < nb.distance ||
             (two.neighbors[i - 1].distance == nb.distance &&
              two.neighbors[i - 1].id < nb.id)));
    }
  }
}

TEST_CASE("two-stage with a full broad set is brute force; recall grows with K") {
  const Index& index = realizable_index();
  const Dataset& data = realizable_dataset();

  for (std::size_t t = 0; t < 10; ++t) {
    const std::vector<double> q = flipped_query(t * 5 % kCodeCount, (t + 4) % kCodeDim);
    const auto dist_to = [&](std::size_t i) {
      return euclid(q, data.dense_row(i));
    };

    for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}}) {
      const auto want = brute_knn(kCodeCount, k, dist_to);
      const QueryResult r =
          two_stage_query(index, std::span<const double>(q), k, kCodeCount);
      REQUIRE(r.neighbors.size() == k);
      for (std::size_t i = 0; i < k; ++i) {
        CHECK(r.neighbors[i].id == want[i].second);
        CHECK(r.neighbors[i].distance ==
              doctest::Approx(want[i].first).epsilon(1e-12));
      }
    }

    // recall@5 against brute force is non-decreasing in the broad width.
    const auto top5 = brute_knn(kCodeCount, 5, dist_to);
    std::set<std::uint32_t> truth;
    for (const auto& [d, id] : top5) truth.insert(id);
    double last = -1.0;
    for (std::size_t broad : {std::size_t{5}, std::size_t{10}, std::size_t{20},
                              kCodeCount}) {
      const QueryResult r =
          two_stage_query(index, std::span<const double>(q), 5, broad);
      std::size_t inter = 0;
      for (const Neighbor& nb : r.neighbors) inter += truth.count(nb.id);
      const double recall = static_cast<double>(inter) / 5.0;
      CHECK(recall >= last);
      last = recall;
    }
    CHECK(last == 1.0);
  }
}

TEST_CASE("sparse set data runs the pipeline end to end") {
  std::mt19937_64 rng(404);
  const Dataset data = Dataset::sparse(random_sets(40, 30, rng));

  IndexConfig cfg;
  cfg.kind = DissimilarityKind::jaccard;
  cfg.q = QExponent::finite(2.0);
  cfg.embedding_dim = 8;
  cfg.training.hidden_widths = {16};
  cfg.training.epochs = 30;
  cfg.training.seed = 2;
  cfg.seed = 3;
  const Index index = build_index(data, cfg);

  CHECK(index.embedded.rows == 40);
  CHECK(index.params.input_dim() == data.dim());

  const SparseSet probe{1, 4, 9, 16, 25};
  const QueryResult one = query(index, probe, 5);
  REQUIRE(one.neighbors.size() == 5);
  CHECK(one.comparisons <= 40);

  // Full-width two-stage equals brute force under the set dissimilarity.
  const auto want = brute_knn(40, 5, [&](std::size_t i) {
    return jaccard_dissimilarity(probe, data.sparse_row(i));
  });
  const QueryResult two = two_stage_query(index, probe, 5, 40);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(two.neighbors[i].id == want[i].second);
    CHECK(two.neighbors[i].distance ==
          doctest::Approx(want[i].first).epsilon(1e-12));
  }

  // Representation mismatches and malformed queries are rejected.
  const std::vector<double> dense_probe(data.dim(), 0.0);
  CHECK_THROWS_AS(query(index, std::span<const double>(dense_probe), 1),
                  invalid_input);
  CHECK_THROWS_AS(query(realizable_index(), probe, 1), invalid_input);
  CHECK_THROWS_AS(query(index, SparseSet{4, 4, 9}, 1), invalid_input);
  CHECK_THROWS_AS(query(index, SparseSet{9, 4}, 1), invalid_input);

  // Ids beyond the indexed vocabulary are ignored by the embedding but still
  // count for the set dissimilarity in refinement.
  const SparseSet far{2, 7, 500};
  const QueryResult far_two = two_stage_query(index, far, 3, 40);
  const auto far_want = brute_knn(40, 3, [&](std::size_t i) {
    return jaccard_dissimilarity(far, data.sparse_row(i));
  });
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(far_two.neighbors[i].id == far_want[i].second);
  }
}

TEST_CASE("index files round-trip bit-exactly and answer identically") {
  const Index original = build_index(tiny_dataset(), tiny_config());
  const fs::path first = temp_file("rt_first.qidx");
  const fs::path second = temp_file("rt_second.qidx");

  save_index(original, first.string());
  const Index loaded = load_index(first.string());
  save_index(loaded, second.string());
  CHECK(slurp(first) == slurp(second));

  CHECK(loaded.config.q == original.config.q);
  CHECK(loaded.config.seed == original.config.seed);
  CHECK(loaded.config.projection_subset_size ==
        original.config.projection_subset_size);
  CHECK(loaded.target_scale == original.target_scale);
  CHECK(loaded.embedded.data == original.embedded.data);

  const std::vector<double> q{0.3, 0.6, 0.1};
  const QueryResult a = query(original, std::span<const double>(q), 5);
  const QueryResult b = query(loaded, std::span<const double>(q), 5);
  REQUIRE(a.neighbors.size() == b.neighbors.size());
  for (std::size_t i = 0; i < a.neighbors.size(); ++i) {
    CHECK(a.neighbors[i].id == b.neighbors[i].id);
    CHECK(a.neighbors[i].distance == b.neighbors[i].distance);
  }
  CHECK(a.comparisons == b.comparisons);

  const QueryResult a2 = two_stage_query(original, std::span<const double>(q), 3, 8);
  const QueryResult b2 = two_stage_query(loaded, std::span<const double>(q), 3, 8);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a2.neighbors[i].id == b2.neighbors[i].id);
    CHECK(a2.neighbors[i].distance == b2.neighbors[i].distance);
  }
}

TEST_CASE("index loading rejects damaged files outright") {
  const Index original = build_index(tiny_dataset(), tiny_config());
  const fs::path good = temp_file("damage.qidx");
  save_index(original, good.string());
  const std::vector<std::uint8_t> bytes = slurp(good);

  const fs::path bad = temp_file("damaged.qidx");

  auto truncated = bytes;
  truncated.resize(truncated.size() - 7);
  spit(bad, truncated);
  CHECK_THROWS_AS(load_index(bad.string()), format_error);

  auto trailing = bytes;
  trailing.push_back(0);
  spit(bad, trailing);
  CHECK_THROWS_AS(load_index(bad.string()), format_error);

  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  spit(bad, wrong_magic);
  CHECK_THROWS_AS(load_index(bad.string()), format_error);

  auto wrong_version = bytes;
  wrong_version[4] = 0x7f;
  spit(bad, wrong_version);
  CHECK_THROWS_AS(load_index(bad.string()), format_error);

  CHECK_THROWS_AS(load_index(temp_file("never_written.qidx").string()),
                  format_error);
}

TEST_CASE("query validation rejects bad widths, k = 0, and narrow broad sets") {
  const Index& index = realizable_index();
  const std::vector<double> good(kCodeDim, 0.0);
  const std::vector<double> narrow(kCodeDim - 1, 0.0);

  CHECK_THROWS_AS(query(index, std::span<const double>(narrow), 1),
                  invalid_input);
  CHECK_THROWS_AS(query(index, std::span<const double>(good), 0),
                  invalid_input);
  CHECK_THROWS_AS(
      two_stage_query(index, std::span<const double>(good), 5, 4),
      invalid_input);
  CHECK_NOTHROW(two_stage_query(index, std::span<const double>(good), 5, 5));
  // A broad width beyond the point count degrades to brute force.
  const QueryResult r =
      two_stage_query(index, std::span<const double>(good), 5, kCodeCount + 50);
  CHECK(r.neighbors.size() == 5);
  CHECK(r.comparisons <= 2 * kCodeCount);
}

TEST_CASE("index construction is independent of the thread pool width") {
  std::mt19937_64 rng(88);
  const Dataset data = Dataset::dense(random_points(30, 4, rng));
  IndexConfig cfg = tiny_config();
  cfg.embedding_dim = 3;
  cfg.training.epochs = 5;

  const fs::path serial = temp_file("threads_serial.qidx");
  const fs::path wide = temp_file("threads_wide.qidx");

  setenv("INFSEARCH_THREADS", "1", 1);
  save_index(build_index(data, cfg), serial.string());
  setenv("INFSEARCH_THREADS", "4", 1);
  save_index(build_index(data, cfg), wide.string());
  unsetenv("INFSEARCH_THREADS");

  CHECK(slurp(serial) == slurp(wide));
}
