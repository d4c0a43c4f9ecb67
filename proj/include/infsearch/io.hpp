#pragma once

// On-disk binary formats: little-endian, magic-tagged, exact-length. Every
// loader checks its magic, validates declared sizes against the stream, and
// rejects trailing bytes; every writer/reader pair round-trips bit-exactly.
//
//   QVEC  dense vectors:   "QVEC", u32 count, u32 dim, count*dim f32 row-major
//   QSET  sparse sets:     "QSET", u32 count, per row u32 length + ascending u32 ids
//   QMAT  square matrix:   "QMAT", u32 n, q-tag, n*n f64 row-major
//   QMLP  embedding model: "QMLP", u32 layer count, u32 dims (input then each
//                          output), f64 dropout rate, q-tag, f64 scale, then
//                          per layer f64 weights row-major followed by f64 bias
//
// A q-tag is one u8 (0xFF = infinity, 0x00 = finite) followed by one f64
// (the exponent when finite, 0 otherwise). The index format ("QIDX") composes
// these sections and lives with the pipeline.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "infsearch/embedding.hpp"
#include "infsearch/qcore.hpp"

namespace infsearch {

// Malformed, truncated, or unreadable on-disk data raises format_error (see
// qcore.hpp); loaders also propagate invalid_input for well-formed files
// whose content violates semantic invariants.

// Accumulates a little-endian byte stream in memory; save() writes it in one
// shot so a failed write never leaves a partial file behind a successful one.
class ByteWriter {
 public:
  void magic(const char (&tag)[5]);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void q_tag(QExponent q);

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

// Consumes a byte stream with bounds checking; every read past the end and
// any bytes left after finish() raise format_error.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes);
  static ByteReader from_file(const std::filesystem::path& path);

  void expect_magic(const char (&tag)[5]);
  // True when the next four bytes equal the tag; consumes nothing.
  bool peek_magic(const char (&tag)[5]) const noexcept;
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  QExponent q_tag();
  void finish() const;
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  // Rejects declared element counts whose payload cannot fit in the remaining
  // bytes, so corrupt headers fail cleanly instead of attempting the
  // allocation. Overflow-safe for any count.
  void require_payload(std::size_t elements, std::size_t bytes_each) const;

 private:
  void need(std::size_t n) const;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

// Section-level writers/readers (magic included) so composite formats can
// embed them; the file-level helpers below add nothing but save/load+finish.
void write_qvec(ByteWriter& out, const RowMatrix& points);
RowMatrix read_qvec(ByteReader& in);
void write_qset(ByteWriter& out, const std::vector<SparseSet>& rows);
std::vector<SparseSet> read_qset(ByteReader& in);
void write_qmat(ByteWriter& out, const DistanceMatrix& matrix, QExponent q);

struct QmatFile {
  DistanceMatrix matrix;
  QExponent q = QExponent::finite(1.0);
};
QmatFile read_qmat(ByteReader& in);

struct ModelFile {
  MlpParams params;
  QExponent q = QExponent::finite(2.0);  // exponent the model was trained for
  double scale = 1.0;                    // value scale echo of its targets
};
void write_qmlp(ByteWriter& out, const ModelFile& model);
ModelFile read_qmlp(ByteReader& in);

// QVEC stores 32-bit floats (interchange format); loading widens exactly,
// saving narrows to the nearest float.
void save_qvec(const RowMatrix& points, const std::filesystem::path& path);
RowMatrix load_qvec(const std::filesystem::path& path);
void save_qset(const std::vector<SparseSet>& rows,
               const std::filesystem::path& path);
std::vector<SparseSet> load_qset(const std::filesystem::path& path);
// The matrix is validated (symmetric, zero diagonal, nonnegative, finite) on
// load; the q tag records the exponent the entries were projected under
// (finite 1 by convention for raw, unprojected dissimilarities).
void save_qmat(const DistanceMatrix& matrix, QExponent q,
               const std::filesystem::path& path);
QmatFile load_qmat(const std::filesystem::path& path);
void save_qmlp(const ModelFile& model, const std::filesystem::path& path);
ModelFile load_qmlp(const std::filesystem::path& path);

// Sniffs the magic and loads a dense (QVEC) or sparse (QSET) point file.
Dataset load_point_file(const std::filesystem::path& path);

}  // namespace infsearch
