// infsearch: command-line surface over the library. Subcommands cover the
// whole workflow on binary artifacts (QVEC/QSET points, QMAT matrices, QMLP
// models, QIDX indexes):
//
//   project       dissimilarities -> nearest q-metric (exact or approximate)
//   train         point/target pair -> embedding model
//   build-index   points -> searchable index (projection + training inside)
//   query         index + query points -> per-query neighbour report
//   ground-truth  exhaustive per-query neighbour report
//   bench         method/exponent sweep -> per-configuration metrics report
//
// Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
// failure. Every failure prints a one-line diagnostic to stderr. Reports are
// line-delimited JSON records. All randomness flows from --seed flags.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "infsearch/embedding.hpp"
#include "infsearch/evaluation.hpp"
#include "infsearch/io.hpp"
#include "infsearch/pipeline.hpp"
#include "infsearch/projection.hpp"
#include "infsearch/qcore.hpp"

namespace {

using namespace infsearch;

// Command-line mistakes CLI11 cannot see on its own: bad flag values and
// invalid flag combinations. Mapped to exit code 1 like CLI11 parse errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

QExponent parse_q_text(const std::string& text) {
  if (text == "inf" || text == "infinity") return QExponent::infinity();
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return QExponent::finite(value);
  } catch (const std::exception&) {
    throw UsageError("invalid q '" + text +
                     "': expected a finite number >= 1 or inf");
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    std::string token = text.substr(start, comma - start);
    const std::size_t left = token.find_first_not_of(" \t");
    if (left != std::string::npos) {
      const std::size_t right = token.find_last_not_of(" \t");
      tokens.push_back(token.substr(left, right - left + 1));
    }
    start = comma + 1;
  }
  return tokens;
}

std::vector<QExponent> parse_q_sweep(const std::string& text) {
  std::vector<QExponent> sweep;
  for (const std::string& token : split_list(text)) {
    sweep.push_back(parse_q_text(token));
  }
  if (sweep.empty()) throw UsageError("--q-sweep needs at least one exponent");
  return sweep;
}

std::vector<std::size_t> parse_width_list(const std::string& text) {
  std::vector<std::size_t> widths;
  for (const std::string& token : split_list(text)) {
    try {
      std::size_t used = 0;
      const unsigned long value = std::stoul(token, &used);
      if (used != token.size() || value == 0) {
        throw std::invalid_argument("not a positive integer");
      }
      widths.push_back(static_cast<std::size_t>(value));
    } catch (const std::exception&) {
      throw UsageError("invalid layer width '" + token +
                       "': expected a positive integer");
    }
  }
  if (widths.empty()) throw UsageError("--hidden needs at least one width");
  return widths;
}

DissimilarityKind parse_kind_text(const std::string& text) {
  try {
    return parse_dissimilarity_kind(text);
  } catch (const invalid_input& e) {
    throw UsageError(e.what());
  }
}

BenchMethod parse_method_text(const std::string& text) {
  if (text == "one-stage") return BenchMethod::one_stage;
  if (text == "two-stage") return BenchMethod::two_stage;
  if (text == "projected-exact") return BenchMethod::projected_exact;
  if (text == "brute") return BenchMethod::brute;
  throw UsageError("unknown method '" + text +
                   "': expected one-stage, two-stage, projected-exact, or brute");
}

ProjectionMode parse_mode_text(const std::string& text) {
  if (text == "exact") return ProjectionMode::exact;
  if (text == "approx") return ProjectionMode::approximate;
  throw UsageError("invalid mode '" + text + "': expected exact or approx");
}

void write_lines(const std::string& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot open output file: " + path);
  for (const std::string& line : lines) out << line << '\n';
  out.flush();
  if (!out) throw format_error("failed while writing output file: " + path);
}

// One report record per query: neighbour ids ascending by (distance, id),
// their distances, and the number of dataset distance evaluations spent.
std::string result_line(std::size_t query_row,
                        std::span<const Neighbor> neighbors,
                        std::size_t comparisons) {
  nlohmann::ordered_json line;
  line["query"] = query_row;
  auto ids = nlohmann::ordered_json::array();
  auto distances = nlohmann::ordered_json::array();
  for (const Neighbor& neighbor : neighbors) {
    ids.push_back(neighbor.id);
    distances.push_back(neighbor.distance);
  }
  line["ids"] = std::move(ids);
  line["distances"] = std::move(distances);
  line["comparisons"] = comparisons;
  return line.dump();
}

// ---------------------------------------------------------------------------
// project

struct ProjectOptions {
  std::string input;
  std::string output;
  std::string kind_text;
  std::string q_text;
  std::string mode_text;
  std::size_t knn = 8;
  std::size_t iters = 4;
};

void run_project(const ProjectOptions& opt) {
  ProjectionConfig cfg;
  cfg.q = parse_q_text(opt.q_text);
  cfg.mode = parse_mode_text(opt.mode_text);
  cfg.knn_k = opt.knn;
  cfg.iterations_l = opt.iters;

  // A QMAT input is used as the dissimilarity matrix directly; point files
  // go through the pairwise kernel selected by --dissimilarity.
  DistanceMatrix dissimilarities;
  ByteReader probe = ByteReader::from_file(opt.input);
  if (probe.peek_magic("QMAT")) {
    QmatFile file = read_qmat(probe);
    probe.finish();
    dissimilarities = std::move(file.matrix);
  } else {
    if (opt.kind_text.empty()) {
      throw UsageError("--dissimilarity is required for point-file input");
    }
    const Dataset points = load_point_file(opt.input);
    dissimilarities = points.pairwise(parse_kind_text(opt.kind_text));
  }

  const ProjectedMatrix projected = cfg.mode == ProjectionMode::exact
                                        ? canonical_exact(dissimilarities, cfg.q)
                                        : canonical_approx(dissimilarities, cfg);
  save_qmat(projected.base, projected.q, opt.output);
  std::cout << "project: n=" << projected.base.size() << " q=" << opt.q_text
            << " mode=" << opt.mode_text << " -> " << opt.output << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string input;
  std::string targets;
  std::string output;
  std::string q_text;
  std::string hidden_text = "128,64,128";
  std::size_t dim_out = 0;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  double dropout = 0.2;
};

void run_train(const TrainOptions& opt) {
  TrainConfig cfg;
  cfg.q = parse_q_text(opt.q_text);
  cfg.epochs = opt.epochs;
  cfg.embed_dim = opt.dim_out;
  cfg.seed = opt.seed;
  cfg.hidden_widths = parse_width_list(opt.hidden_text);
  cfg.dropout_rate = opt.dropout;

  const RowMatrix points = load_qvec(opt.input);
  const QmatFile target_file = load_qmat(opt.targets);
  ProjectedMatrix targets;
  targets.base = target_file.matrix;
  targets.q = target_file.q;
  // Value-scale echo for the model file: the auto convention of the
  // projection (largest entry, 1 when the matrix is all zero).
  const double top = targets.base.max_entry();
  targets.scale_used = top > 0.0 ? top : 1.0;

  TrainResult result = train(points, targets, cfg);
  const double final_stress = result.report.stress_per_epoch.empty()
                                  ? 0.0
                                  : result.report.stress_per_epoch.back();
  ModelFile model{std::move(result.params), cfg.q, targets.scale_used};
  save_qmlp(model, opt.output);
  std::cout << "train: n=" << points.rows << " epochs=" << cfg.epochs
            << " final_stress=" << final_stress << " -> " << opt.output << '\n';
}

// ---------------------------------------------------------------------------
// build-index

struct BuildOptions {
  std::string input;
  std::string output;
  std::string kind_text;
  std::string q_text;
  std::string mode_text = "exact";
  std::string hidden_text;  // empty keeps the training default
  std::size_t subset_size = 0;
  std::size_t knn = 8;
  std::size_t iters = 4;
  std::size_t embedding_dim = 0;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double dropout = 0.2;
};

void run_build(const BuildOptions& opt) {
  IndexConfig cfg;
  cfg.kind = parse_kind_text(opt.kind_text);
  cfg.q = parse_q_text(opt.q_text);
  cfg.projection.mode = parse_mode_text(opt.mode_text);
  cfg.projection.knn_k = opt.knn;
  cfg.projection.iterations_l = opt.iters;
  cfg.projection_subset_size = opt.subset_size;
  cfg.embedding_dim = opt.embedding_dim;
  cfg.training.epochs = opt.epochs;
  if (!opt.hidden_text.empty()) {
    cfg.training.hidden_widths = parse_width_list(opt.hidden_text);
  }
  cfg.training.dropout_rate = opt.dropout;
  // One flag seeds everything: subset sampling and tree building through the
  // index seed, parameter initialization through the training seed.
  cfg.training.seed = opt.seed;
  cfg.seed = opt.seed;

  const Dataset data = load_point_file(opt.input);
  const Index index = build_index(data, cfg);
  save_index(index, opt.output);
  std::cout << "build-index: n=" << data.size() << " subset="
            << index.config.projection_subset_size << " embedding_dim="
            << index.config.embedding_dim << " -> " << opt.output << '\n';
}

// ---------------------------------------------------------------------------
// query

struct QueryOptions {
  std::string index;
  std::string queries;
  std::string output;
  std::size_t k = 0;
  std::size_t two_stage_k = 0;  // 0 selects the one-stage path
};

void run_query(const QueryOptions& opt) {
  if (opt.two_stage_k != 0 && opt.two_stage_k < opt.k) {
    throw UsageError("--two-stage-K must be at least --k");
  }
  const Index index = load_index(opt.index);
  const Dataset queries = load_point_file(opt.queries);

  std::vector<std::string> lines;
  lines.reserve(queries.size());
  double total_comparisons = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    QueryResult result;
    if (queries.is_dense()) {
      result = opt.two_stage_k != 0
                   ? two_stage_query(index, queries.dense_row(i), opt.k,
                                     opt.two_stage_k)
                   : query(index, queries.dense_row(i), opt.k);
    } else {
      result = opt.two_stage_k != 0
                   ? two_stage_query(index, queries.sparse_row(i), opt.k,
                                     opt.two_stage_k)
                   : query(index, queries.sparse_row(i), opt.k);
    }
    total_comparisons += static_cast<double>(result.comparisons);
    lines.push_back(result_line(i, result.neighbors, result.comparisons));
  }
  write_lines(opt.output, lines);
  const double mean = queries.size() == 0
                          ? 0.0
                          : total_comparisons / static_cast<double>(queries.size());
  std::cout << "query: queries=" << queries.size() << " k=" << opt.k
            << " mode=" << (opt.two_stage_k != 0 ? "two-stage" : "one-stage")
            << " mean_comparisons=" << mean << " -> " << opt.output << '\n';
}

// ---------------------------------------------------------------------------
// ground-truth

struct GroundTruthOptions {
  std::string data;
  std::string queries;
  std::string output;
  std::string kind_text;
  std::size_t k = 0;
};

void run_ground_truth(const GroundTruthOptions& opt) {
  const Dataset data = load_point_file(opt.data);
  const Dataset queries = load_point_file(opt.queries);
  const GroundTruth truth =
      brute_force_knn(data, queries, opt.k, parse_kind_text(opt.kind_text));

  std::vector<std::string> lines;
  lines.reserve(truth.per_query.size());
  for (std::size_t i = 0; i < truth.per_query.size(); ++i) {
    lines.push_back(result_line(i, truth.per_query[i], data.size()));
  }
  write_lines(opt.output, lines);
  std::cout << "ground-truth: queries=" << queries.size() << " k=" << opt.k
            << " -> " << opt.output << '\n';
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::string data;
  std::string queries;
  std::string output;
  std::string kind_text = "euclidean";
  std::string sweep_text;
  std::string method_text;
  std::size_t k = 0;
  std::size_t two_stage_k = 0;
  std::size_t subset_size = 0;
  std::size_t embedding_dim = 0;
  std::size_t epochs = 100;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
};

void run_bench(const BenchOptions& opt) {
  BenchmarkConfig cfg;
  cfg.method = parse_method_text(opt.method_text);
  cfg.k = opt.k;
  cfg.q_sweep = parse_q_sweep(opt.sweep_text);
  cfg.repetitions = opt.repetitions;
  if (cfg.method == BenchMethod::two_stage) {
    if (opt.two_stage_k == 0) {
      throw UsageError("--two-stage-K is required for --method two-stage");
    }
    if (opt.two_stage_k < opt.k) {
      throw UsageError("--two-stage-K must be at least --k");
    }
    cfg.broad_k = opt.two_stage_k;
  }
  cfg.index.kind = parse_kind_text(opt.kind_text);
  cfg.index.seed = opt.seed;
  cfg.index.training.seed = opt.seed;
  cfg.index.projection_subset_size = opt.subset_size;
  cfg.index.embedding_dim = opt.embedding_dim;
  cfg.index.training.epochs = opt.epochs;

  const Dataset data = load_point_file(opt.data);
  const Dataset queries = load_point_file(opt.queries);
  const std::vector<MetricsReport> reports = run_benchmark(data, queries, cfg);

  std::vector<std::string> lines;
  lines.reserve(reports.size());
  for (const MetricsReport& report : reports) lines.push_back(to_jsonl(report));
  write_lines(opt.output, lines);
  for (const std::string& line : lines) std::cout << line << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "q-metric nearest-neighbour toolkit: canonical projection of "
      "dissimilarity data, learned Euclidean embeddings, and pruned "
      "vantage-point tree search"};
  app.require_subcommand(1);

  ProjectOptions project_opt;
  CLI::App* project = app.add_subcommand(
      "project", "Replace pairwise dissimilarities by q-shortest path lengths "
                 "and write the projected QMAT");
  project->add_option("--input", project_opt.input,
                      "QVEC/QSET point file or QMAT dissimilarity matrix")
      ->required();
  project->add_option("--dissimilarity", project_opt.kind_text,
                      "euclidean|manhattan|cosine|correlation|jaccard "
                      "(required for point files, ignored for QMAT input)");
  project->add_option("--q", project_opt.q_text,
                      "metric order: finite number >= 1 or inf")
      ->required();
  project->add_option("--mode", project_opt.mode_text, "exact|approx")
      ->required();
  project->add_option("--knn", project_opt.knn,
                      "approx mode: neighbourhood size per relaxation row")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  project->add_option("--iters", project_opt.iters,
                      "approx mode: relaxation sweep count")
      ->capture_default_str();
  project->add_option("--output", project_opt.output, "output QMAT path")
      ->required();
  project->callback([&] { run_project(project_opt); });

  TrainOptions train_opt;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "Train the Euclidean embedding model on points and projected "
               "targets and write a QMLP");
  train_cmd->add_option("--input", train_opt.input, "QVEC point file")
      ->required();
  train_cmd->add_option("--targets", train_opt.targets,
                        "QMAT of projected target distances")
      ->required();
  train_cmd->add_option("--q", train_opt.q_text,
                        "metric order the targets were projected under")
      ->required();
  train_cmd->add_option("--dim-out", train_opt.dim_out,
                        "embedding output dimension")
      ->required()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", train_opt.epochs, "training epochs")
      ->required()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train_opt.seed, "training seed")->required();
  train_cmd->add_option("--hidden", train_opt.hidden_text,
                        "comma-separated hidden layer widths")
      ->capture_default_str();
  train_cmd->add_option("--dropout", train_opt.dropout,
                        "hidden dropout rate in [0, 1)")
      ->capture_default_str();
  train_cmd->add_option("--output", train_opt.output, "output QMLP path")
      ->required();
  train_cmd->callback([&] { run_train(train_opt); });

  BuildOptions build_opt;
  CLI::App* build = app.add_subcommand(
      "build-index", "Sample a subset, project, train the embedding, embed "
                     "all points, and write the QIDX index");
  build->add_option("--input", build_opt.input, "QVEC/QSET point file")
      ->required();
  build->add_option("--dissimilarity", build_opt.kind_text,
                    "euclidean|manhattan|cosine|correlation|jaccard")
      ->required();
  build->add_option("--q", build_opt.q_text,
                    "metric order: finite number >= 1 or inf")
      ->required();
  build->add_option("--subset-size", build_opt.subset_size,
                    "projection/training subset size (0 = auto)")
      ->required();
  build->add_option("--seed", build_opt.seed,
                    "seed for sampling, initialization, and tree building")
      ->required();
  build->add_option("--mode", build_opt.mode_text,
                    "projection mode: exact|approx")
      ->capture_default_str();
  build->add_option("--knn", build_opt.knn,
                    "approx projection: neighbourhood size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  build->add_option("--iters", build_opt.iters,
                    "approx projection: sweep count")
      ->capture_default_str();
  build->add_option("--embedding-dim", build_opt.embedding_dim,
                    "embedding output dimension (0 = auto)")
      ->capture_default_str();
  build->add_option("--epochs", build_opt.epochs, "training epochs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  build->add_option("--hidden", build_opt.hidden_text,
                    "comma-separated hidden layer widths");
  build->add_option("--dropout", build_opt.dropout,
                    "hidden dropout rate in [0, 1)")
      ->capture_default_str();
  build->add_option("--output", build_opt.output, "output QIDX path")
      ->required();
  build->callback([&] { run_build(build_opt); });

  QueryOptions query_opt;
  CLI::App* query_cmd = app.add_subcommand(
      "query", "Answer nearest-neighbour queries with a saved index and "
               "write one report line per query");
  query_cmd->add_option("--index", query_opt.index, "QIDX index path")
      ->required();
  query_cmd->add_option("--queries", query_opt.queries, "QVEC/QSET query file")
      ->required();
  query_cmd->add_option("--k", query_opt.k, "neighbours per query")
      ->required()
      ->check(CLI::PositiveNumber);
  query_cmd->add_option("--two-stage-K", query_opt.two_stage_k,
                        "broad candidate count; enables two-stage refinement")
      ->check(CLI::PositiveNumber);
  query_cmd->add_option("--output", query_opt.output, "output report path")
      ->required();
  query_cmd->callback([&] { run_query(query_opt); });

  GroundTruthOptions gt_opt;
  CLI::App* gt = app.add_subcommand(
      "ground-truth", "Exhaustively scan the dataset per query and write one "
                      "report line per query");
  gt->add_option("--data", gt_opt.data, "QVEC/QSET dataset file")->required();
  gt->add_option("--queries", gt_opt.queries, "QVEC/QSET query file")
      ->required();
  gt->add_option("--k", gt_opt.k, "neighbours per query")
      ->required()
      ->check(CLI::PositiveNumber);
  gt->add_option("--dissimilarity", gt_opt.kind_text,
                 "euclidean|manhattan|cosine|correlation|jaccard")
      ->required();
  gt->add_option("--output", gt_opt.output, "output report path")->required();
  gt->callback([&] { run_ground_truth(gt_opt); });

  BenchOptions bench_opt;
  CLI::App* bench = app.add_subcommand(
      "bench", "Run a search-method benchmark over an exponent sweep and "
               "write one metrics line per configuration");
  bench->add_option("--data", bench_opt.data, "QVEC/QSET dataset file")
      ->required();
  bench->add_option("--queries", bench_opt.queries, "QVEC/QSET query file")
      ->required();
  bench->add_option("--k", bench_opt.k, "neighbours per query")
      ->required()
      ->check(CLI::PositiveNumber);
  bench->add_option("--q-sweep", bench_opt.sweep_text,
                    "comma-separated exponents, e.g. 1,2,5,inf")
      ->required();
  bench->add_option("--method", bench_opt.method_text,
                    "one-stage|two-stage|projected-exact|brute")
      ->required();
  bench->add_option("--dissimilarity", bench_opt.kind_text,
                    "euclidean|manhattan|cosine|correlation|jaccard")
      ->capture_default_str();
  bench->add_option("--two-stage-K", bench_opt.two_stage_k,
                    "broad candidate count for --method two-stage")
      ->check(CLI::PositiveNumber);
  bench->add_option("--subset-size", bench_opt.subset_size,
                    "learned methods: projection subset size (0 = auto)")
      ->capture_default_str();
  bench->add_option("--embedding-dim", bench_opt.embedding_dim,
                    "learned methods: embedding dimension (0 = auto)")
      ->capture_default_str();
  bench->add_option("--epochs", bench_opt.epochs,
                    "learned methods: training epochs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--repetitions", bench_opt.repetitions,
                    "timing repetitions per query")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--seed", bench_opt.seed, "index construction seed")
      ->capture_default_str();
  bench->add_option("--output", bench_opt.output, "output report path")
      ->required();
  bench->callback([&] { run_bench(bench_opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const format_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const invalid_input& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const numeric_failure& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
