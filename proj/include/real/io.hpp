#pragma once

// File formats. All integers and floats are little-endian.
//
// Feature dataset (.rlfv):
//   "RLFV1\0"                      6 bytes
//   u32 N, u32 d, u32 C            12 bytes
//   f32 features[N*d]              row-major
//   u32 labels[N]                  each < C
//   total length exactly 18 + 4*N*d + 4*N
//
// Checkpoint (.rlck):
//   "RLCK1\0"
//   u32 section_count
//   section*:  u32 tag, u32 n_u64, u32 n_f64, u32 n_mat,
//              u64[n_u64], f64[n_f64],
//              n_mat x (u32 rows, u32 cols, f64[rows*cols])
//   u32 crc32 over every byte between the magic and the crc
// Section tags: 1 backbone, 2 buffer, 3 classifier, 4 phase plan.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/crc.hpp>

#include "real/analytic.hpp"
#include "real/backbone.hpp"
#include "real/errors.hpp"
#include "real/numkit.hpp"
#include "real/protocol.hpp"

namespace real {

static_assert(std::numeric_limits<float>::is_iec559 && std::numeric_limits<double>::is_iec559);

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

namespace detail {

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  Bytes& bytes() { return out_; }

 private:
  Bytes out_;
};

class Reader {
 public:
  Reader(const Bytes& b, std::size_t begin, std::size_t end) : b_(b), pos_(begin), end_(end) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw LocatedError(ErrorKind::truncated, end_,
                         std::string("truncated ") + what + ": need " + std::to_string(n) +
                             " bytes at offset " + std::to_string(pos_) + ", data ends at " +
                             std::to_string(end_));
    }
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return uint<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

 private:
  const Bytes& b_;
  std::size_t pos_;
  std::size_t end_;
};

inline constexpr char kDatasetMagic[6] = {'R', 'L', 'F', 'V', '1', '\0'};
inline constexpr char kCheckpointMagic[6] = {'R', 'L', 'C', 'K', '1', '\0'};

inline void check_magic(const Bytes& b, const char (&magic)[6], const char* what) {
  if (b.size() < 6 || std::memcmp(b.data(), magic, 6) != 0) {
    throw LocatedError(ErrorKind::bad_magic, 0, std::string("bad magic: not a ") + what + " file");
  }
}

inline std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max())
    throw Error(ErrorKind::data, std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Feature datasets

inline Bytes encode_dataset(const LabeledSet& s) {
  if (s.x.rows() != s.y.size()) throw Error(ErrorKind::shape, "dataset rows != label count");
  detail::Writer w;
  w.raw(detail::kDatasetMagic, 6);
  w.u32(detail::to_u32(s.x.rows(), "sample count"));
  w.u32(detail::to_u32(s.x.cols(), "feature dim"));
  w.u32(detail::to_u32(s.num_classes, "class count"));
  for (double v : s.x.values()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) throw Error(ErrorKind::non_finite, "dataset value not finite as f32");
    w.f32(f);
  }
  for (auto c : s.y) {
    if (c >= s.num_classes) throw Error(ErrorKind::label_range, "label >= class count");
    w.u32(c);
  }
  return std::move(w.bytes());
}

inline LabeledSet decode_dataset(const Bytes& b) {
  detail::check_magic(b, detail::kDatasetMagic, "feature dataset");
  detail::Reader r(b, 6, b.size());
  const std::uint32_t n = r.u32("header");
  const std::uint32_t d = r.u32("header");
  const std::uint32_t c = r.u32("header");
  const std::uint64_t expected = 18 + 4ULL * n * d + 4ULL * n;
  if (b.size() < expected) {
    throw LocatedError(ErrorKind::truncated, b.size(),
                       "truncated dataset: " + std::to_string(b.size()) + " bytes, header implies " +
                           std::to_string(expected) + "; data ends at offset " +
                           std::to_string(b.size()));
  }
  if (b.size() > expected) {
    throw LocatedError(ErrorKind::trailing_data, expected,
                       "trailing bytes after offset " + std::to_string(expected));
  }
  LabeledSet s;
  s.num_classes = c;
  s.x = Matrix(n, d);
  for (double& v : s.x.values()) {
    const std::size_t at = r.pos();
    const float f = r.f32("features");
    if (!std::isfinite(f)) {
      throw LocatedError(ErrorKind::non_finite, at, "non-finite feature at offset " + std::to_string(at));
    }
    v = f;
  }
  s.y.resize(n);
  for (auto& lab : s.y) {
    const std::size_t at = r.pos();
    lab = r.u32("labels");
    if (lab >= c) {
      throw LocatedError(ErrorKind::label_range, at,
                         "label " + std::to_string(lab) + " >= class count " + std::to_string(c) +
                             " at offset " + std::to_string(at));
    }
  }
  return s;
}

/// CSV fallback: header row, feature columns, last column an integer label.
/// Features are rounded to f32 to match the binary format. When
/// `num_classes` is 0 the class count is max label + 1.
inline LabeledSet parse_csv_dataset(const std::string& text, std::size_t num_classes = 0) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::data, "csv: missing header row");
  std::vector<double> values;
  std::vector<std::uint32_t> labels;
  std::size_t cols = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2) throw LocatedError(ErrorKind::data, line_no, "csv: too few columns on line " + std::to_string(line_no));
    if (cols == 0) cols = cells.size() - 1;
    if (cells.size() - 1 != cols) throw LocatedError(ErrorKind::data, line_no, "csv: ragged row on line " + std::to_string(line_no));
    try {
      for (std::size_t j = 0; j < cols; ++j) {
        const float f = static_cast<float>(std::stod(cells[j]));
        if (!std::isfinite(f)) throw LocatedError(ErrorKind::non_finite, line_no, "csv: non-finite value on line " + std::to_string(line_no));
        values.push_back(f);
      }
      const long long lab = std::stoll(cells.back());
      if (lab < 0) throw LocatedError(ErrorKind::label_range, line_no, "csv: negative label on line " + std::to_string(line_no));
      labels.push_back(static_cast<std::uint32_t>(lab));
    } catch (const std::logic_error&) {
      throw LocatedError(ErrorKind::data, line_no, "csv: unparsable value on line " + std::to_string(line_no));
    }
  }
  LabeledSet s;
  s.x = Matrix(labels.size(), cols, std::move(values));
  s.y = std::move(labels);
  std::uint32_t max_label = 0;
  for (auto l : s.y) max_label = std::max(max_label, l);
  s.num_classes = num_classes ? num_classes : (s.y.empty() ? 0 : max_label + 1);
  for (std::size_t i = 0; i < s.y.size(); ++i)
    if (s.y[i] >= s.num_classes) throw LocatedError(ErrorKind::label_range, i + 2, "csv: label out of range");
  return s;
}

inline std::string to_csv(const LabeledSet& s) {
  std::ostringstream out;
  out.precision(9);
  for (std::size_t j = 0; j < s.x.cols(); ++j) out << "f" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (double v : s.x.row(i)) out << static_cast<float>(v) << ",";
    out << s.y[i] << "\n";
  }
  return out.str();
}

/// Loads .rlfv, or CSV when the path ends in ".csv".
inline LabeledSet load_dataset(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) {
    const Bytes b = read_file(path);
    return parse_csv_dataset(std::string(b.begin(), b.end()));
  }
  return decode_dataset(read_file(path));
}

inline void save_dataset(const std::string& path, const LabeledSet& s) {
  write_file(path, encode_dataset(s));
}

// ---------------------------------------------------------------------------
// Checkpoints

struct ModelBundle {
  std::optional<Mlp> backbone;
  std::optional<BufferLayer> buffer;
  std::optional<AnalyticClassifier> classifier;
  std::optional<PhasePlan> plan;
};

enum class SectionTag : std::uint32_t { backbone = 1, buffer = 2, classifier = 3, plan = 4 };

namespace detail {

struct Section {
  std::uint32_t tag = 0;
  std::vector<std::uint64_t> ints;
  std::vector<double> reals;
  std::vector<Matrix> mats;
};

inline void write_section(Writer& w, const Section& s) {
  w.u32(s.tag);
  w.u32(to_u32(s.ints.size(), "section ints"));
  w.u32(to_u32(s.reals.size(), "section reals"));
  w.u32(to_u32(s.mats.size(), "section matrices"));
  for (auto v : s.ints) w.u64(v);
  for (double v : s.reals) w.f64(v);
  for (const Matrix& m : s.mats) {
    w.u32(to_u32(m.rows(), "rows"));
    w.u32(to_u32(m.cols(), "cols"));
    for (double v : m.values()) w.f64(v);
  }
}

inline Section read_section(Reader& r) {
  Section s;
  s.tag = r.u32("section header");
  const std::uint32_t ni = r.u32("section header");
  const std::uint32_t nr = r.u32("section header");
  const std::uint32_t nm = r.u32("section header");
  r.need(8ULL * ni + 8ULL * nr, "section scalars");
  for (std::uint32_t i = 0; i < ni; ++i) s.ints.push_back(r.u64("section ints"));
  for (std::uint32_t i = 0; i < nr; ++i) s.reals.push_back(r.f64("section reals"));
  for (std::uint32_t i = 0; i < nm; ++i) {
    const std::uint32_t rows = r.u32("matrix dims");
    const std::uint32_t cols = r.u32("matrix dims");
    r.need(8ULL * rows * cols, "matrix payload");
    Matrix m(rows, cols);
    for (double& v : m.values()) v = r.f64("matrix payload");
    s.mats.push_back(std::move(m));
  }
  return s;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::corruption, "checkpoint section inconsistent: " + what);
}

}  // namespace detail

inline Bytes encode_checkpoint(const ModelBundle& m) {
  using detail::Section;
  std::vector<Section> sections;
  if (m.backbone) {
    Section s{static_cast<std::uint32_t>(SectionTag::backbone), {m.backbone->frozen() ? 1ULL : 0ULL}, {}, m.backbone->weights()};
    sections.push_back(std::move(s));
  }
  if (m.buffer) {
    sections.push_back(Section{static_cast<std::uint32_t>(SectionTag::buffer),
                               {m.buffer->d_cnn(), m.buffer->d_b(), m.buffer->seed().value,
                                static_cast<std::uint64_t>(m.buffer->activation())},
                               {m.buffer->scale()},
                               {m.buffer->weight()}});
  }
  if (m.classifier) {
    sections.push_back(Section{static_cast<std::uint32_t>(SectionTag::classifier),
                               {m.classifier->classes_seen, m.classifier->phase_index},
                               {m.classifier->gamma},
                               {m.classifier->weight, m.classifier->memory}});
  }
  if (m.plan) {
    Section s{static_cast<std::uint32_t>(SectionTag::plan), {m.plan->total_classes, m.plan->phases, m.plan->groups.size()}, {}, {}};
    for (const auto& g : m.plan->groups) s.ints.push_back(g.size());
    for (const auto& g : m.plan->groups) s.ints.insert(s.ints.end(), g.begin(), g.end());
    sections.push_back(std::move(s));
  }
  detail::Writer body;
  body.u32(detail::to_u32(sections.size(), "section count"));
  for (const auto& s : sections) detail::write_section(body, s);
  boost::crc_32_type crc;
  crc.process_bytes(body.bytes().data(), body.bytes().size());

  detail::Writer w;
  w.raw(detail::kCheckpointMagic, 6);
  w.raw(body.bytes().data(), body.bytes().size());
  w.u32(crc.checksum());
  return std::move(w.bytes());
}

inline ModelBundle decode_checkpoint(const Bytes& b) {
  detail::check_magic(b, detail::kCheckpointMagic, "checkpoint");
  if (b.size() < 6 + 4 + 4) {
    throw LocatedError(ErrorKind::truncated, b.size(), "truncated checkpoint");
  }
  const std::size_t crc_at = b.size() - 4;
  detail::Reader tail(b, crc_at, b.size());
  const std::uint32_t stored = tail.u32("crc");
  boost::crc_32_type crc;
  crc.process_bytes(b.data() + 6, crc_at - 6);
  if (crc.checksum() != stored) {
    throw LocatedError(ErrorKind::corruption, crc_at, "checkpoint CRC mismatch");
  }
  detail::Reader r(b, 6, crc_at);
  const std::uint32_t count = r.u32("section count");
  ModelBundle m;
  for (std::uint32_t i = 0; i < count; ++i) {
    detail::Section s = detail::read_section(r);
    switch (static_cast<SectionTag>(s.tag)) {
      case SectionTag::backbone: {
        detail::require(s.ints.size() == 1 && !s.mats.empty(), "backbone");
        Mlp net = Mlp::from_weights(std::move(s.mats));
        if (s.ints[0]) net.freeze();
        m.backbone = std::move(net);
        break;
      }
      case SectionTag::buffer: {
        detail::require(s.ints.size() == 4 && s.reals.size() == 1 && s.mats.size() == 1, "buffer");
        detail::require(s.mats[0].rows() == s.ints[0] && s.mats[0].cols() == s.ints[1], "buffer dims");
        m.buffer = BufferLayer::from_weight(std::move(s.mats[0]), RngSeed{s.ints[2]}, s.reals[0],
                                            static_cast<BufferActivation>(s.ints[3]));
        break;
      }
      case SectionTag::classifier: {
        detail::require(s.ints.size() == 2 && s.reals.size() == 1 && s.mats.size() == 2, "classifier");
        AnalyticClassifier c;
        c.classes_seen = s.ints[0];
        c.phase_index = s.ints[1];
        c.gamma = s.reals[0];
        c.weight = std::move(s.mats[0]);
        c.memory = std::move(s.mats[1]);
        detail::require(c.weight.cols() == c.classes_seen && c.weight.rows() == c.memory.rows() &&
                            c.memory.rows() == c.memory.cols(),
                        "classifier dims");
        m.classifier = std::move(c);
        break;
      }
      case SectionTag::plan: {
        detail::require(s.ints.size() >= 3, "plan header");
        PhasePlan p;
        p.total_classes = s.ints[0];
        p.phases = s.ints[1];
        const std::size_t ng = s.ints[2];
        detail::require(s.ints.size() >= 3 + ng, "plan group sizes");
        std::size_t at = 3 + ng;
        for (std::size_t g = 0; g < ng; ++g) {
          const std::size_t sz = s.ints[3 + g];
          detail::require(s.ints.size() >= at + sz, "plan groups");
          std::vector<std::uint32_t> grp;
          for (std::size_t j = 0; j < sz; ++j) grp.push_back(static_cast<std::uint32_t>(s.ints[at + j]));
          at += sz;
          p.class_order.insert(p.class_order.end(), grp.begin(), grp.end());
          p.groups.push_back(std::move(grp));
        }
        detail::require(at == s.ints.size() && p.class_order.size() == p.total_classes, "plan size");
        m.plan = std::move(p);
        break;
      }
      default:
        throw Error(ErrorKind::corruption, "unknown checkpoint section tag " + std::to_string(s.tag));
    }
  }
  if (r.remaining() != 0) {
    throw LocatedError(ErrorKind::trailing_data, r.pos(), "unparsed bytes before checkpoint CRC");
  }
  return m;
}

inline void save_checkpoint(const std::string& path, const ModelBundle& m) {
  write_file(path, encode_checkpoint(m));
}

inline ModelBundle load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace real
