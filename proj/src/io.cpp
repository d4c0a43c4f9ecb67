#include "infsearch/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

namespace infsearch {
namespace {

constexpr std::uint8_t kFiniteTag = 0x00;
constexpr std::uint8_t kInfinityTag = 0xFF;

std::string printable_magic(const std::uint8_t* p) {
  std::string s;
  for (int i = 0; i < 4; ++i) {
    const char c = static_cast<char>(p[i]);
    s += (c >= 32 && c < 127) ? c : '?';
  }
  return s;
}

}  // namespace

void ByteWriter::magic(const char (&tag)[5]) {
  buf_.insert(buf_.end(), tag, tag + 4);
}

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::q_tag(QExponent q) {
  if (q.is_infinity()) {
    u8(kInfinityTag);
    f64(0.0);
  } else {
    u8(kFiniteTag);
    f64(q.value());
  }
}

void ByteWriter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw format_error("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(buf_.data()),
            static_cast<std::streamsize>(buf_.size()));
  if (!out) throw format_error("short write to " + path.string());
}

ByteReader::ByteReader(std::vector<std::uint8_t> bytes)
    : buf_(std::move(bytes)) {}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw format_error("cannot open " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw format_error("short read from " + path.string());
  return ByteReader(std::move(bytes));
}

void ByteReader::need(std::size_t n) const {
  if (pos_ + n > buf_.size()) {
    throw format_error("truncated stream: need " + std::to_string(n) +
                       " bytes at offset " + std::to_string(pos_) +
                       ", have " + std::to_string(buf_.size() - pos_));
  }
}

void ByteReader::expect_magic(const char (&tag)[5]) {
  need(4);
  if (std::memcmp(buf_.data() + pos_, tag, 4) != 0) {
    throw format_error(std::string("bad magic: expected ") + tag + ", found " +
                       printable_magic(buf_.data() + pos_));
  }
  pos_ += 4;
}

bool ByteReader::peek_magic(const char (&tag)[5]) const noexcept {
  return pos_ + 4 <= buf_.size() &&
         std::memcmp(buf_.data() + pos_, tag, 4) == 0;
}

std::uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
  }
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
  }
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

QExponent ByteReader::q_tag() {
  const std::uint8_t tag = u8();
  const double value = f64();
  if (tag == kInfinityTag) return QExponent::infinity();
  if (tag != kFiniteTag) {
    throw format_error("unknown q tag byte " + std::to_string(tag));
  }
  return QExponent::finite(value);
}

void ByteReader::finish() const {
  if (pos_ != buf_.size()) {
    throw format_error("trailing bytes: " + std::to_string(remaining()) +
                       " after the declared content");
  }
}

void ByteReader::require_payload(std::size_t elements,
                                 std::size_t bytes_each) const {
  if (bytes_each != 0 && elements > remaining() / bytes_each) {
    throw format_error("truncated stream: declared count " +
                       std::to_string(elements) + " x " +
                       std::to_string(bytes_each) +
                       " bytes exceeds the remaining " +
                       std::to_string(remaining()));
  }
}

void write_qvec(ByteWriter& out, const RowMatrix& points) {
  out.magic("QVEC");
  out.u32(static_cast<std::uint32_t>(points.rows));
  out.u32(static_cast<std::uint32_t>(points.cols));
  for (double v : points.data) out.f32(static_cast<float>(v));
}

RowMatrix read_qvec(ByteReader& in) {
  in.expect_magic("QVEC");
  const std::uint32_t count = in.u32();
  const std::uint32_t dim = in.u32();
  in.require_payload(static_cast<std::size_t>(count) * dim, 4);
  RowMatrix points(count, dim);
  for (double& v : points.data) v = static_cast<double>(in.f32());
  return points;
}

void write_qset(ByteWriter& out, const std::vector<SparseSet>& rows) {
  out.magic("QSET");
  out.u32(static_cast<std::uint32_t>(rows.size()));
  for (const SparseSet& row : rows) {
    out.u32(static_cast<std::uint32_t>(row.size()));
    for (std::uint32_t id : row) out.u32(id);
  }
}

std::vector<SparseSet> read_qset(ByteReader& in) {
  in.expect_magic("QSET");
  const std::uint32_t count = in.u32();
  in.require_payload(count, 4);
  std::vector<SparseSet> rows(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t length = in.u32();
    in.require_payload(length, 4);
    SparseSet& row = rows[r];
    row.resize(length);
    for (std::uint32_t i = 0; i < length; ++i) {
      row[i] = in.u32();
      if (i > 0 && row[i] <= row[i - 1]) {
        throw format_error("set row " + std::to_string(r) +
                           ": ids must be strictly ascending");
      }
    }
  }
  return rows;
}

void write_qmat(ByteWriter& out, const DistanceMatrix& matrix, QExponent q) {
  out.magic("QMAT");
  out.u32(static_cast<std::uint32_t>(matrix.size()));
  out.q_tag(q);
  for (double v : matrix.data()) out.f64(v);
}

QmatFile read_qmat(ByteReader& in) {
  in.expect_magic("QMAT");
  const std::uint32_t n = in.u32();
  QmatFile file;
  file.q = in.q_tag();
  in.require_payload(static_cast<std::size_t>(n) * n, 8);
  DistanceMatrix matrix(n);
  for (double& v : matrix.data()) v = in.f64();
  matrix.validate();
  file.matrix = std::move(matrix);
  return file;
}

void write_qmlp(ByteWriter& out, const ModelFile& model) {
  model.params.validate();
  out.magic("QMLP");
  const auto& layers = model.params.layers;
  out.u32(static_cast<std::uint32_t>(layers.size()));
  out.u32(static_cast<std::uint32_t>(layers.front().in_dim));
  for (const MlpLayer& layer : layers) {
    out.u32(static_cast<std::uint32_t>(layer.out_dim));
  }
  out.f64(model.params.dropout_rate);
  out.q_tag(model.q);
  out.f64(model.scale);
  for (const MlpLayer& layer : layers) {
    for (double w : layer.weights) out.f64(w);
    for (double b : layer.bias) out.f64(b);
  }
}

ModelFile read_qmlp(ByteReader& in) {
  in.expect_magic("QMLP");
  const std::uint32_t layer_count = in.u32();
  if (layer_count == 0) throw format_error("model needs at least one layer");
  in.require_payload(static_cast<std::size_t>(layer_count) + 1, 4);
  std::vector<std::uint32_t> dims(layer_count + 1);
  for (auto& d : dims) d = in.u32();
  ModelFile model;
  model.params.dropout_rate = in.f64();
  model.q = in.q_tag();
  model.scale = in.f64();
  if (!(model.scale > 0.0) || !std::isfinite(model.scale)) {
    throw format_error("model scale must be positive and finite");
  }
  model.params.layers.resize(layer_count);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    MlpLayer& layer = model.params.layers[l];
    layer.in_dim = dims[l];
    layer.out_dim = dims[l + 1];
    in.require_payload(
        static_cast<std::size_t>(layer.in_dim) * layer.out_dim, 8);
    layer.weights.resize(layer.in_dim * layer.out_dim);
    for (double& w : layer.weights) w = in.f64();
    layer.bias.resize(layer.out_dim);
    for (double& b : layer.bias) b = in.f64();
  }
  model.params.validate();
  return model;
}

void save_qvec(const RowMatrix& points, const std::filesystem::path& path) {
  ByteWriter out;
  write_qvec(out, points);
  out.save(path);
}

RowMatrix load_qvec(const std::filesystem::path& path) {
  ByteReader in = ByteReader::from_file(path);
  RowMatrix points = read_qvec(in);
  in.finish();
  return points;
}

void save_qset(const std::vector<SparseSet>& rows,
               const std::filesystem::path& path) {
  ByteWriter out;
  write_qset(out, rows);
  out.save(path);
}

std::vector<SparseSet> load_qset(const std::filesystem::path& path) {
  ByteReader in = ByteReader::from_file(path);
  std::vector<SparseSet> rows = read_qset(in);
  in.finish();
  return rows;
}

void save_qmat(const DistanceMatrix& matrix, QExponent q,
               const std::filesystem::path& path) {
  ByteWriter out;
  write_qmat(out, matrix, q);
  out.save(path);
}

QmatFile load_qmat(const std::filesystem::path& path) {
  ByteReader in = ByteReader::from_file(path);
  QmatFile file = read_qmat(in);
  in.finish();
  return file;
}

void save_qmlp(const ModelFile& model, const std::filesystem::path& path) {
  ByteWriter out;
  write_qmlp(out, model);
  out.save(path);
}

ModelFile load_qmlp(const std::filesystem::path& path) {
  ByteReader in = ByteReader::from_file(path);
  ModelFile model = read_qmlp(in);
  in.finish();
  return model;
}

Dataset load_point_file(const std::filesystem::path& path) {
  ByteReader in = ByteReader::from_file(path);
  if (in.peek_magic("QVEC")) {
    RowMatrix points = read_qvec(in);
    in.finish();
    return Dataset::dense(std::move(points));
  }
  if (in.peek_magic("QSET")) {
    std::vector<SparseSet> rows = read_qset(in);
    in.finish();
    return Dataset::sparse(std::move(rows));
  }
  throw format_error(path.string() + " is neither a QVEC nor a QSET file");
}

}  // namespace infsearch
