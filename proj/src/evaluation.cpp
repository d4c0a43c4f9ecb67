#include "infsearch/evaluation.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <utility>

#include <json.hpp>

#include "infsearch/parallel.hpp"
#include "infsearch/projection.hpp"

namespace infsearch {
namespace {

constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
}

std::vector<Neighbor> scan_topk(const Dataset& data, const Dataset& queries,
                                std::size_t q_row, std::size_t k,
                                DissimilarityKind kind) {
  std::vector<Neighbor> all(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    all[i] = {static_cast<std::uint32_t>(i),
              data.dissim_from(queries, q_row, i, kind)};
  }
  std::sort(all.begin(), all.end(), neighbor_less);
  all.resize(std::min(k, all.size()));
  return all;
}

std::vector<std::uint32_t> ids_of(std::span<const Neighbor> neighbors) {
  std::vector<std::uint32_t> ids(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) ids[i] = neighbors[i].id;
  return ids;
}

double seconds_between(std::chrono::steady_clock::time_point a,
                       std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

struct QueryRun {
  std::vector<Neighbor> neighbors;
  std::size_t comparisons = 0;
  double pre_seconds = 0.0;
  double search_seconds = 0.0;
};

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++count;
  }
  double mean() const { return count == 0 ? 0.0 : sum / count; }
  double stddev() const {
    if (count == 0) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, sum_sq / count - m * m));
  }
};

}  // namespace

GroundTruth brute_force_knn(const Dataset& data, const Dataset& queries,
                            std::size_t k, DissimilarityKind kind) {
  if (k == 0) throw invalid_input("ground truth needs k >= 1");
  if (k > data.size()) {
    throw invalid_input("ground truth k " + std::to_string(k) +
                        " exceeds the dataset size " +
                        std::to_string(data.size()));
  }
  GroundTruth truth;
  truth.k = k;
  truth.per_query.resize(queries.size());
  parallel_for(queries.size(), [&](std::size_t qi) {
    truth.per_query[qi] = scan_topk(data, queries, qi, k, kind);
  });
  return truth;
}

double recall_at_k(std::span<const std::uint32_t> truth_ids,
                   std::span<const std::uint32_t> approx_ids, std::size_t k) {
  if (k == 0) throw invalid_input("recall needs k >= 1");
  if (truth_ids.size() < k) {
    throw invalid_input("recall truth list is shorter than k");
  }
  const std::size_t approx_len = std::min(k, approx_ids.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < approx_len; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (approx_ids[i] == truth_ids[j]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

double rank_order_abs(std::span<const std::uint32_t> truth_ids,
                      std::span<const std::uint32_t> approx_ids,
                      std::size_t k) {
  if (k == 0) throw invalid_input("rank order needs k >= 1");
  if (truth_ids.size() != k || approx_ids.size() != k) {
    throw invalid_input("rank order needs both lists of length exactly k");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t pos = k + 1;  // absent
    for (std::size_t j = 0; j < k; ++j) {
      if (approx_ids[i] == truth_ids[j]) {
        pos = j + 1;
        break;
      }
    }
    const double here = static_cast<double>(i + 1);
    sum += std::abs(here - static_cast<double>(pos));
  }
  return sum / static_cast<double>(k);
}

double rank_order_rel(std::span<const std::uint32_t> truth_ids,
                      std::span<const std::uint32_t> approx_ids, std::size_t k,
                      std::size_t indexed_size) {
  if (indexed_size == 0) {
    throw invalid_input("relative rank order needs a nonempty indexed set");
  }
  return rank_order_abs(truth_ids, approx_ids, k) * 100.0 /
         static_cast<double>(indexed_size);
}

std::vector<std::uint32_t> canonicalize_ties(std::span<const Neighbor> truth,
                                             std::span<const Neighbor> approx) {
  std::vector<bool> used(truth.size(), false);
  std::vector<std::uint32_t> out;
  out.reserve(approx.size());
  for (const Neighbor& a : approx) {
    // Lowest unused truth slot at exactly this distance. A genuine truth
    // member always has such a slot (its own), so tie-group permutations
    // collapse onto the truth order and score zero displacement.
    std::size_t slot = kNoSlot;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (!used[j] && truth[j].distance == a.distance) {
        slot = j;
        break;
      }
    }
    if (slot != kNoSlot) {
      used[slot] = true;
      out.push_back(truth[slot].id);
    } else {
      out.push_back(a.id);
    }
  }
  return out;
}

SplitResult split_dataset(const Dataset& data, double ratio,
                          std::uint64_t seed) {
  const std::size_t n = data.size();
  if (n < 2) throw invalid_input("splitting needs at least 2 points");
  if (!(ratio > 0.0) || !(ratio < 1.0)) {
    throw invalid_input("split ratio must lie strictly between 0 and 1");
  }
  std::vector<std::uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto raw = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(n)));
  const std::size_t m = std::clamp<std::size_t>(raw, 1, n - 1);

  SplitResult split;
  split.index_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(m));
  split.query_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(m), ids.end());
  std::sort(split.index_ids.begin(), split.index_ids.end());
  std::sort(split.query_ids.begin(), split.query_ids.end());
  split.index_part = data.subset(split.index_ids);
  split.query_part = data.subset(split.query_ids);
  return split;
}

const char* to_string(BenchMethod method) noexcept {
  switch (method) {
    case BenchMethod::one_stage:
      return "one-stage";
    case BenchMethod::two_stage:
      return "two-stage";
    case BenchMethod::projected_exact:
      return "projected-exact";
    case BenchMethod::brute:
      return "brute";
  }
  return "unknown";
}

void BenchmarkConfig::validate(std::size_t indexed_size) const {
  if (k == 0) throw invalid_input("benchmark needs k >= 1");
  if (k > indexed_size) {
    throw invalid_input("benchmark k exceeds the indexed size");
  }
  if (q_sweep.empty()) throw invalid_input("benchmark needs a nonempty q sweep");
  if (method == BenchMethod::two_stage && broad_k < k) {
    throw invalid_input("two-stage broad width must be at least k");
  }
  if (repetitions == 0) throw invalid_input("benchmark needs repetitions >= 1");
}

std::string to_jsonl(const MetricsReport& report) {
  nlohmann::ordered_json line;
  line["method"] = report.method;
  if (report.q.is_infinity()) {
    line["q"] = "inf";
  } else {
    line["q"] = report.q.value();
  }
  line["k"] = report.k;
  line["recall"] = report.recall;
  line["rank_order_abs"] = report.rank_order_abs_mean;
  line["rank_order_rel"] = report.rank_order_rel_mean;
  line["comparisons_mean"] = report.comparisons_mean;
  line["comparisons_max"] = report.comparisons_max;
  line["qps_excl"] = report.qps_excl;
  line["qps_incl"] = report.qps_incl;
  return line.dump();
}

std::vector<MetricsReport> run_benchmark(const Dataset& index_part,
                                         const Dataset& query_part,
                                         const BenchmarkConfig& config) {
  const std::size_t n = index_part.size();
  config.validate(n);
  if (query_part.size() == 0) {
    throw invalid_input("benchmark needs at least one query");
  }
  const DissimilarityKind kind = config.index.kind;
  const std::size_t k = config.k;
  const GroundTruth truth = brute_force_knn(index_part, query_part, k, kind);

  std::vector<MetricsReport> reports;
  reports.reserve(config.q_sweep.size());
  for (const QExponent q : config.q_sweep) {
    // Per-exponent setup: build the structure the method searches.
    Index index;
    ProjectedMatrix projected;
    std::function<QueryRun(std::size_t)> run_one;

    switch (config.method) {
      case BenchMethod::one_stage:
      case BenchMethod::two_stage: {
        IndexConfig icfg = config.index;
        icfg.q = q;
        index = build_index(index_part, icfg);
        const bool broad = config.method == BenchMethod::two_stage;
        run_one = [&, broad](std::size_t qi) {
          QueryResult r;
          if (query_part.is_dense()) {
            r = broad ? two_stage_query(index, query_part.dense_row(qi), k,
                                        config.broad_k)
                      : query(index, query_part.dense_row(qi), k);
          } else {
            r = broad ? two_stage_query(index, query_part.sparse_row(qi), k,
                                        config.broad_k)
                      : query(index, query_part.sparse_row(qi), k);
          }
          return QueryRun{std::move(r.neighbors), r.comparisons,
                          r.preprocess_seconds, r.search_seconds};
        };
        break;
      }
      case BenchMethod::projected_exact: {
        projected = canonical_exact(index_part.pairwise(kind), q);
        std::vector<std::uint32_t> ids(n);
        std::iota(ids.begin(), ids.end(), 0u);
        run_one = [&, ids](std::size_t qi) {
          // Preprocessing = transforming the query into projected space:
          // original dissimilarities to every indexed point, then the
          // closed-form extension. The space being searched is the exact
          // projection of the point set with the query added, so within-set
          // distances shorten wherever the best path runs through the query
          // (two hops, extension value each); pruning is exact only against
          // those shortened distances, hence the search tree is assembled per
          // query from the cached projection and the extension row. The
          // search itself evaluates only stored-point distances.
          const auto t0 = std::chrono::steady_clock::now();
          std::vector<double> dissims(n);
          for (std::size_t i = 0; i < n; ++i) {
            dissims[i] = index_part.dissim_from(query_part, qi, i, kind);
          }
          const std::vector<double> extended =
              extend_with_query(projected, dissims, q);
          const VpTree tree = VpTree::build(
              ids,
              [&](std::uint32_t a, std::uint32_t b) {
                const std::array<double, 2> hops{extended[a], extended[b]};
                return std::min(projected.base(a, b),
                                q_path_length(hops, q));
              },
              q, config.index.seed);
          const auto t1 = std::chrono::steady_clock::now();
          SearchStats stats;
          std::vector<Neighbor> found = tree.search_knn(
              [&](std::uint32_t id) { return extended[id]; }, k, &stats);
          const auto t2 = std::chrono::steady_clock::now();
          return QueryRun{std::move(found), stats.comparisons,
                          seconds_between(t0, t1), seconds_between(t1, t2)};
        };
        break;
      }
      case BenchMethod::brute: {
        run_one = [&](std::size_t qi) {
          const auto t0 = std::chrono::steady_clock::now();
          std::vector<Neighbor> found =
              scan_topk(index_part, query_part, qi, k, kind);
          const auto t1 = std::chrono::steady_clock::now();
          return QueryRun{std::move(found), n, 0.0, seconds_between(t0, t1)};
        };
        break;
      }
    }

    // One untimed warm-up pass, then serial timed passes.
    for (std::size_t qi = 0; qi < query_part.size(); ++qi) run_one(qi);

    MetricsReport report;
    report.method = to_string(config.method);
    report.q = q;
    report.k = k;
    report.indexed_size = n;
    report.query_count = query_part.size();

    double recall_sum = 0.0;
    Moments abs_m, rel_m, comp_m;
    std::size_t comp_max = 0;
    double pre_total = 0.0;
    double search_total = 0.0;

    for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
      for (std::size_t qi = 0; qi < query_part.size(); ++qi) {
        QueryRun run = run_one(qi);
        pre_total += run.pre_seconds;
        search_total += run.search_seconds;
        if (rep != 0) continue;

        // Metrics on the first pass (results are deterministic across
        // passes). Tie groups under the original dissimilarity score as
        // position-equivalent.
        std::vector<Neighbor> with_original(run.neighbors.size());
        for (std::size_t i = 0; i < run.neighbors.size(); ++i) {
          with_original[i] = {
              run.neighbors[i].id,
              index_part.dissim_from(query_part, qi, run.neighbors[i].id,
                                     kind)};
        }
        const std::vector<std::uint32_t> canon =
            canonicalize_ties(truth.per_query[qi], with_original);
        const std::vector<std::uint32_t> truth_ids =
            ids_of(truth.per_query[qi]);

        recall_sum += recall_at_k(truth_ids, canon, k);
        const double abs = rank_order_abs(truth_ids, canon, k);
        abs_m.add(abs);
        rel_m.add(abs * 100.0 / static_cast<double>(n));
        comp_m.add(static_cast<double>(run.comparisons));
        comp_max = std::max(comp_max, run.comparisons);
      }
    }

    report.recall = recall_sum / static_cast<double>(query_part.size());
    report.rank_order_abs_mean = abs_m.mean();
    report.rank_order_abs_std = abs_m.stddev();
    report.rank_order_rel_mean = rel_m.mean();
    report.rank_order_rel_std = rel_m.stddev();
    report.comparisons_mean = comp_m.mean();
    report.comparisons_std = comp_m.stddev();
    report.comparisons_max = comp_max;

    const double timed =
        static_cast<double>(query_part.size() * config.repetitions);
    report.qps_excl = search_total > 0.0 ? timed / search_total : 0.0;
    const double incl_total = search_total + pre_total;
    report.qps_incl = incl_total > 0.0 ? timed / incl_total : 0.0;
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace infsearch
