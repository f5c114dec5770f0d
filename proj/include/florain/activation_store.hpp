#pragma once

// Labeled activation vectors, the FLRN binary format, and a synthetic
// generator.
//
// FLRN layout (little-endian):
//   0  magic "FLRN"
//   4  u32 format version (1)
//   8  u32 D
//  12  u32 H            (D must be divisible by H; head dim d = D / H)
//  16  u32 N            (record count)
//  20  N records of { u32 question_id, u8 label, 3 zero bytes, D x f32 }
//
// label: 0 = Undesirable, 1 = Desirable.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "florain/detail/bytes.hpp"
#include "florain/detail/random.hpp"
#include "florain/error.hpp"

namespace florain {

enum class Label : std::uint8_t { Undesirable = 0, Desirable = 1 };

struct ActivationRecord {
  std::uint32_t question_id = 0;
  Label label = Label::Desirable;
  Eigen::VectorXf vector;

  bool desirable() const noexcept { return label == Label::Desirable; }

  friend bool operator==(const ActivationRecord& a, const ActivationRecord& b) {
    return a.question_id == b.question_id && a.label == b.label &&
           a.vector.size() == b.vector.size() &&
           (a.vector.size() == 0 ||
            std::memcmp(a.vector.data(), b.vector.data(), sizeof(float) * a.vector.size()) == 0);
  }
};

inline constexpr std::size_t kDatasetHeaderBytes = 20;
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

inline constexpr std::size_t dataset_record_bytes(std::size_t dim) { return 8 + 4 * dim; }

/// Immutable collection of records sharing one dimension. Every invariant is
/// checked at construction, so a live instance is always valid.
class ActivationDataset {
 public:
  ActivationDataset(std::uint32_t dim, std::uint32_t head_count, std::vector<ActivationRecord> records)
      : dim_(dim), head_count_(head_count), records_(std::move(records)) {
    require(dim_ > 0, ErrorKind::InvalidArgument, "dimension D must be positive");
    require(head_count_ > 0, ErrorKind::InvalidArgument, "head count H must be positive");
    require(dim_ % head_count_ == 0, ErrorKind::DimensionMismatch,
            "D = " + std::to_string(dim_) + " is not a multiple of H = " + std::to_string(head_count_));
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      require(r.vector.size() == static_cast<Eigen::Index>(dim_), ErrorKind::DimensionMismatch,
              "record " + std::to_string(i) + " has length " + std::to_string(r.vector.size()));
      require(r.label == Label::Desirable || r.label == Label::Undesirable, ErrorKind::MalformedRecord,
              "record " + std::to_string(i) + " has an unknown label");
      require(r.vector.allFinite(), ErrorKind::NonFiniteValue,
              "record " + std::to_string(i) + " contains NaN or Inf");
    }
    if (auto q = first_question_without_desirable(); q) {
      throw Error(ErrorKind::MissingDesirable,
                  "question " + std::to_string(*q) + " has no desirable record");
    }
  }

  std::uint32_t dim() const noexcept { return dim_; }
  std::uint32_t head_count() const noexcept { return head_count_; }
  std::uint32_t head_dim() const noexcept { return dim_ / head_count_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const std::vector<ActivationRecord>& records() const noexcept { return records_; }
  const ActivationRecord& operator[](std::size_t i) const { return records_[i]; }

  /// Distinct question ids, ascending.
  std::vector<std::uint32_t> question_ids() const {
    std::set<std::uint32_t> ids;
    for (const auto& r : records_) ids.insert(r.question_id);
    return {ids.begin(), ids.end()};
  }

  /// Activations as a D x N matrix of doubles (one column per record).
  Eigen::MatrixXd as_matrix() const {
    Eigen::MatrixXd out(dim_, static_cast<Eigen::Index>(records_.size()));
    for (std::size_t i = 0; i < records_.size(); ++i)
      out.col(static_cast<Eigen::Index>(i)) = records_[i].vector.cast<double>();
    return out;
  }

  friend bool operator==(const ActivationDataset&, const ActivationDataset&) = default;

 private:
  std::optional<std::uint32_t> first_question_without_desirable() const {
    std::map<std::uint32_t, bool> seen;
    for (const auto& r : records_) seen[r.question_id] |= r.desirable();
    for (const auto& [q, ok] : seen)
      if (!ok) return q;
    return std::nullopt;
  }

  std::uint32_t dim_;
  std::uint32_t head_count_;
  std::vector<ActivationRecord> records_;
};

// ---------------------------------------------------------------------------
// Serialization

inline std::string encode_dataset(const ActivationDataset& ds) {
  detail::ByteWriter w;
  w.reserve(kDatasetHeaderBytes + ds.size() * dataset_record_bytes(ds.dim()));
  w.raw("FLRN");
  w.u32(kDatasetFormatVersion);
  w.u32(ds.dim());
  w.u32(ds.head_count());
  w.u32(static_cast<std::uint32_t>(ds.size()));
  for (const auto& r : ds.records()) {
    w.u32(r.question_id);
    w.u8(static_cast<std::uint8_t>(r.label));
    w.u8(0);
    w.u8(0);
    w.u8(0);
    for (Eigen::Index j = 0; j < r.vector.size(); ++j) w.f32(r.vector[j]);
  }
  return w.take();
}

/// Parses a complete FLRN image. Errors carry the byte offset of the first
/// violation.
inline ActivationDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < kDatasetHeaderBytes)
    throw Error(ErrorKind::TruncatedFile, "header needs 20 bytes, file has " + std::to_string(bytes.size()),
                bytes.size());
  if (std::memcmp(bytes.data(), "FLRN", 4) != 0)
    throw Error(ErrorKind::MalformedHeader, "bad magic (expected \"FLRN\")", 0);
  in.seek(4);
  if (const auto version = in.u32(); version != kDatasetFormatVersion)
    throw Error(ErrorKind::MalformedHeader, "unsupported format version " + std::to_string(version), 4);
  const std::uint32_t dim = in.u32();
  const std::uint32_t heads = in.u32();
  const std::uint32_t count = in.u32();
  if (dim == 0) throw Error(ErrorKind::MalformedHeader, "D must be positive", 8);
  if (heads == 0) throw Error(ErrorKind::MalformedHeader, "H must be positive", 12);
  if (dim % heads != 0)
    throw Error(ErrorKind::DimensionMismatch,
                "D = " + std::to_string(dim) + " is not d x H for H = " + std::to_string(heads), 12);

  const std::uint64_t record_bytes = dataset_record_bytes(dim);
  const std::uint64_t expected = kDatasetHeaderBytes + std::uint64_t{count} * record_bytes;
  if (bytes.size() < expected) {
    // Name the first record that does not fit.
    const std::uint64_t complete = (bytes.size() - kDatasetHeaderBytes) / record_bytes;
    throw Error(ErrorKind::TruncatedFile,
                "header declares " + std::to_string(count) + " records but only " + std::to_string(complete) +
                    " fit in " + std::to_string(bytes.size()) + " bytes",
                kDatasetHeaderBytes + complete * record_bytes);
  }
  if (bytes.size() > expected)
    throw Error(ErrorKind::MalformedHeader,
                std::to_string(bytes.size() - expected) + " trailing bytes after " + std::to_string(count) +
                    " declared records",
                expected);

  std::vector<ActivationRecord> records(count);
  std::map<std::uint32_t, std::pair<std::uint64_t, bool>> questions;  // first offset, has desirable
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t start = in.offset();
    auto& r = records[i];
    r.question_id = in.u32();
    const std::uint8_t label = in.u8();
    if (label > 1)
      throw Error(ErrorKind::MalformedRecord, "record " + std::to_string(i) + " has label " + std::to_string(label),
                  start + 4);
    r.label = static_cast<Label>(label);
    for (int p = 0; p < 3; ++p) {
      const std::uint64_t at = in.offset();
      if (in.u8() != 0)
        throw Error(ErrorKind::MalformedRecord, "record " + std::to_string(i) + " has nonzero padding", at);
    }
    r.vector.resize(dim);
    for (std::uint32_t j = 0; j < dim; ++j) {
      const std::uint64_t at = in.offset();
      const float v = in.f32();
      if (!std::isfinite(v))
        throw Error(ErrorKind::NonFiniteValue,
                    "record " + std::to_string(i) + " component " + std::to_string(j) + " is not finite", at);
      r.vector[j] = v;
    }
    auto [it, inserted] = questions.try_emplace(r.question_id, start, false);
    it->second.second |= r.desirable();
  }
  for (const auto& [q, info] : questions) {
    if (!info.second)
      throw Error(ErrorKind::MissingDesirable, "question " + std::to_string(q) + " has no desirable record",
                  info.first);
  }
  return ActivationDataset(dim, heads, std::move(records));
}

inline ActivationDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::IoFailure, "read failed: " + path.string());
  return decode_dataset(bytes);
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

inline void save_dataset(const ActivationDataset& ds, const std::filesystem::path& path) {
  write_file(path, encode_dataset(ds));
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::uint32_t num_questions = 20;
  std::uint32_t samples_per_label = 8;
  std::uint32_t dim = 16;
  double cluster_separation = 4.0;
  double noise_scale = 1.0;
  std::uint64_t rng_seed = 0;
};

/// Draws a dataset from one PortableRng stream seeded with rng_seed, in this
/// order:
///   1. a shared unit direction g (D standard normals, normalized);
///   2. per question q = 0..Q-1:
///        c_q = (noise / 2) * z            (question center),
///        u_q = normalize(g + r_q / 4),    r_q = z / sqrt(D),
///        M desirable rows   c_q + noise * z,
///        M undesirable rows c_q + sep * u_q + noise * z,
///      where every z is a fresh D-vector of standard normals.
/// Undesirable answers thus differ from desirable ones along a mostly shared
/// direction with a smaller per-question component. Scaling sep and noise by
/// t scales the whole dataset by t (before f32 rounding). H is 1.
inline ActivationDataset generate_synthetic(const SyntheticSpec& spec) {
  require(spec.num_questions > 0, ErrorKind::InvalidArgument, "num_questions must be positive");
  require(spec.samples_per_label > 0, ErrorKind::InvalidArgument,
          "samples_per_label must be positive (each question needs a desirable sample)");
  require(spec.dim > 0, ErrorKind::InvalidArgument, "dim must be positive");
  require(spec.cluster_separation > 0 && std::isfinite(spec.cluster_separation), ErrorKind::InvalidArgument,
          "cluster_separation must be positive");
  require(spec.noise_scale > 0 && std::isfinite(spec.noise_scale), ErrorKind::InvalidArgument,
          "noise_scale must be positive");

  const Eigen::Index dim = spec.dim;
  detail::PortableRng rng(spec.rng_seed);
  auto draw = [&](double scale) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index j = 0; j < dim; ++j) v[j] = scale * rng.normal();
    return v;
  };
  auto unit = [](Eigen::VectorXd v) {
    const double n = v.norm();
    return n > 0 ? Eigen::VectorXd(v / n) : v;
  };

  const Eigen::VectorXd shared = unit(draw(1.0));
  std::vector<ActivationRecord> records;
  records.reserve(std::size_t{spec.num_questions} * spec.samples_per_label * 2);
  for (std::uint32_t q = 0; q < spec.num_questions; ++q) {
    const Eigen::VectorXd center = draw(0.5 * spec.noise_scale);
    const Eigen::VectorXd direction = unit(shared + 0.25 * draw(1.0 / std::sqrt(static_cast<double>(dim))));
    for (Label label : {Label::Desirable, Label::Undesirable}) {
      const Eigen::VectorXd mean =
          label == Label::Desirable ? center : Eigen::VectorXd(center + spec.cluster_separation * direction);
      for (std::uint32_t m = 0; m < spec.samples_per_label; ++m) {
        records.push_back({q, label, (mean + draw(spec.noise_scale)).cast<float>()});
      }
    }
  }
  return ActivationDataset(spec.dim, 1, std::move(records));
}

}  // namespace florain
