#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "florain/activation_store.hpp"
#include "test_util.hpp"

using namespace florain;

namespace {

ActivationDataset small_dataset() {
  std::vector<ActivationRecord> rows;
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXf v(8);
    for (int j = 0; j < 8; ++j) v[j] = static_cast<float>(i * 10 + j) * 0.25f;
    rows.push_back({static_cast<std::uint32_t>(i / 2), i == 1 ? Label::Undesirable : Label::Desirable, v});
  }
  return ActivationDataset(8, 2, rows);
}

ActivationDataset random_dataset(std::uint64_t seed, std::size_t n, std::uint32_t dim, std::uint32_t heads) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss;
  std::vector<ActivationRecord> rows;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXf v(dim);
    for (auto& x : v) x = gauss(rng);
    const auto q = static_cast<std::uint32_t>(i % 37);
    // The first record of every question is desirable.
    const Label label = i < 37 || rng() % 2 ? Label::Desirable : Label::Undesirable;
    rows.push_back({q, label, v});
  }
  return ActivationDataset(dim, heads, rows);
}

std::vector<std::uint8_t> as_bytes(const std::string& s) { return {s.begin(), s.end()}; }

ErrorKind decode_error(const std::vector<std::uint8_t>& bytes, std::uint64_t* offset = nullptr) {
  try {
    decode_dataset(bytes);
  } catch (const Error& e) {
    if (offset) *offset = e.offset().value_or(~0ull);
    return e.kind();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return ErrorKind::InvalidArgument;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void put_f32(std::vector<std::uint8_t>& b, std::size_t at, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(b, at, u);
}

}  // namespace

TEST(ActivationStore, HeaderLayoutIsLittleEndian) {
  const auto bytes = as_bytes(encode_dataset(small_dataset()));
  ASSERT_GE(bytes.size(), 20u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FLRN");
  const std::vector<std::uint8_t> expected = {1, 0, 0, 0, 8, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0};
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin() + 4, bytes.begin() + 20), expected);
  // Record 1: question 0, label 0, zero padding, then 0x40200000 = 2.5f.
  const std::size_t r1 = 20 + dataset_record_bytes(8);
  EXPECT_EQ(bytes[r1] | bytes[r1 + 1] | bytes[r1 + 2] | bytes[r1 + 3], 0);
  EXPECT_EQ(bytes[r1 + dataset_record_bytes(8)], 1);
  EXPECT_EQ(bytes[r1 + 4], 0);
  EXPECT_EQ(bytes[r1 + 5] | bytes[r1 + 6] | bytes[r1 + 7], 0);
  const std::vector<std::uint8_t> two_and_half = {0x00, 0x00, 0x20, 0x40};
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin() + r1 + 8, bytes.begin() + r1 + 12), two_and_half);
}

TEST(ActivationStore, LoadsThreeRecordFile) {
  TempDir dir;
  save_dataset(small_dataset(), dir / "a.flrn");
  const auto ds = load_dataset(dir / "a.flrn");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim(), 8u);
  EXPECT_EQ(ds.head_count(), 2u);
  EXPECT_EQ(ds.head_dim(), 4u);
  EXPECT_EQ(ds, small_dataset());
}

TEST(ActivationStore, EmptyDatasetIsHeaderOnly) {
  TempDir dir;
  const ActivationDataset empty(4, 1, {});
  save_dataset(empty, dir / "e.flrn");
  EXPECT_EQ(std::filesystem::file_size(dir / "e.flrn"), kDatasetHeaderBytes);
  EXPECT_EQ(kDatasetHeaderBytes, 20u);
  EXPECT_EQ(load_dataset(dir / "e.flrn"), empty);
}

TEST(ActivationStore, FileSizeIsHeaderPlusRecords) {
  TempDir dir;
  Eigen::VectorXf v = Eigen::VectorXf::Constant(6, 1.5f);
  save_dataset(ActivationDataset(6, 3, {{0, Label::Desirable, v}}), dir / "one.flrn");
  EXPECT_EQ(std::filesystem::file_size(dir / "one.flrn"), 20u + 8u + 4u * 6u);
}

TEST(ActivationStore, ThousandRecordsRoundTripByteExact) {
  TempDir dir;
  const auto ds = random_dataset(7, 1000, 12, 3);
  save_dataset(ds, dir / "a.flrn");
  const auto loaded = load_dataset(dir / "a.flrn");
  EXPECT_EQ(loaded, ds);
  save_dataset(loaded, dir / "b.flrn");
  EXPECT_EQ(read_bytes(dir / "a.flrn"), read_bytes(dir / "b.flrn"));
}

TEST(ActivationStore, RoundTripPropertyOverShapes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::uint32_t heads = 1 + seed % 4;
    const std::uint32_t dim = heads * (1 + seed % 5);
    const auto ds = random_dataset(seed, 40 + seed * 3, dim, heads);
    const auto bytes = encode_dataset(ds);
    const auto decoded = decode_dataset(as_bytes(bytes));
    EXPECT_EQ(decoded, ds);
    EXPECT_EQ(encode_dataset(decoded), bytes);
  }
}

TEST(ActivationStore, PreservesSignedZeroAndSubnormals) {
  Eigen::VectorXf v(4);
  v << -0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max(), -1e-30f;
  const ActivationDataset ds(4, 1, {{9, Label::Desirable, v}});
  EXPECT_EQ(decode_dataset(as_bytes(encode_dataset(ds))), ds);
  EXPECT_TRUE(std::signbit(decode_dataset(as_bytes(encode_dataset(ds)))[0].vector[0]));
}

TEST(ActivationStore, RejectsHeadCountNotDividingDim) {
  auto bytes = as_bytes(encode_dataset(small_dataset()));
  put_u32(bytes, 12, 3);
  std::uint64_t offset = 0;
  EXPECT_EQ(decode_error(bytes, &offset), ErrorKind::DimensionMismatch);
  EXPECT_EQ(offset, 12u);
}

TEST(ActivationStore, RejectsNanInRecordTwo) {
  auto bytes = as_bytes(encode_dataset(small_dataset()));
  const std::size_t at = 20 + 2 * dataset_record_bytes(8) + 8 + 4 * 5;
  put_f32(bytes, at, std::numeric_limits<float>::quiet_NaN());
  std::uint64_t offset = 0;
  EXPECT_EQ(decode_error(bytes, &offset), ErrorKind::NonFiniteValue);
  EXPECT_EQ(offset, at);
  put_f32(bytes, at, std::numeric_limits<float>::infinity());
  EXPECT_EQ(decode_error(bytes), ErrorKind::NonFiniteValue);
}

TEST(ActivationStore, RejectsBadMagicAndVersion) {
  auto bytes = as_bytes(encode_dataset(small_dataset()));
  bytes[0] = 'X';
  std::uint64_t offset = 99;
  EXPECT_EQ(decode_error(bytes, &offset), ErrorKind::MalformedHeader);
  EXPECT_EQ(offset, 0u);
  bytes = as_bytes(encode_dataset(small_dataset()));
  put_u32(bytes, 4, 2);
  EXPECT_EQ(decode_error(bytes, &offset), ErrorKind::MalformedHeader);
  EXPECT_EQ(offset, 4u);
}

TEST(ActivationStore, RejectsZeroDimOrHeads) {
  auto bytes = as_bytes(encode_dataset(small_dataset()));
  put_u32(bytes, 8, 0);
  EXPECT_EQ(decode_error(bytes), ErrorKind::MalformedHeader);
  bytes = as_bytes(encode_dataset(small_dataset()));
  put_u32(bytes, 12, 0);
  EXPECT_EQ(decode_error(bytes), ErrorKind::MalformedHeader);
}

TEST(ActivationStore, TruncationNamesFirstIncompleteRecord) {
  const auto full = as_bytes(encode_dataset(small_dataset()));
  const std::size_t rec = dataset_record_bytes(8);
  std::vector<std::uint8_t> cut(full.begin(), full.begin() + 20 + rec + 5);
  std::uint64_t offset = 0;
  EXPECT_EQ(decode_error(cut, &offset), ErrorKind::TruncatedFile);
  EXPECT_EQ(offset, 20 + rec);
  EXPECT_EQ(decode_error(std::vector<std::uint8_t>(full.begin(), full.begin() + 10)), ErrorKind::TruncatedFile);
}

TEST(ActivationStore, RejectsTrailingBytes) {
  auto bytes = as_bytes(encode_dataset(small_dataset()));
  bytes.push_back(0);
  EXPECT_EQ(decode_error(bytes), ErrorKind::MalformedHeader);
}

TEST(ActivationStore, RejectsBadLabelAndPadding) {
  auto bytes = as_bytes(encode_dataset(small_dataset()));
  bytes[20 + 4] = 2;
  EXPECT_EQ(decode_error(bytes), ErrorKind::MalformedRecord);
  bytes = as_bytes(encode_dataset(small_dataset()));
  bytes[20 + 6] = 1;
  EXPECT_EQ(decode_error(bytes), ErrorKind::MalformedRecord);
}

TEST(ActivationStore, RejectsQuestionWithoutDesirable) {
  auto bytes = as_bytes(encode_dataset(small_dataset()));
  // Record 2 is question 1's only record; relabel it undesirable.
  const std::size_t r2 = 20 + 2 * dataset_record_bytes(8);
  bytes[r2 + 4] = 0;
  std::uint64_t offset = 0;
  EXPECT_EQ(decode_error(bytes, &offset), ErrorKind::MissingDesirable);
  EXPECT_EQ(offset, r2);
}

TEST(ActivationStore, ConstructorValidatesInvariants) {
  Eigen::VectorXf v = Eigen::VectorXf::Zero(4);
  EXPECT_THROW(ActivationDataset(4, 3, {}), Error);
  EXPECT_THROW(ActivationDataset(0, 1, {}), Error);
  EXPECT_THROW(ActivationDataset(5, 1, {{0, Label::Desirable, v}}), Error);
  EXPECT_THROW(ActivationDataset(4, 1, {{0, Label::Undesirable, v}}), Error);
  v[2] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(ActivationDataset(4, 1, {{0, Label::Desirable, v}}), Error);
}

TEST(ActivationStore, MissingFileIsIoFailure) {
  try {
    load_dataset("/nonexistent/dir/x.flrn");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoFailure);
  }
}

// Every single-bit flip in the header either is rejected or yields a dataset
// whose invariants hold and which re-encodes to the same corrupted image.
TEST(ActivationStore, HeaderBitFlipsNeverYieldInvalidDataset) {
  const auto clean = as_bytes(encode_dataset(random_dataset(3, 50, 8, 2)));
  for (std::size_t byte = 0; byte < kDatasetHeaderBytes; ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      auto bytes = clean;
      bytes[byte] ^= static_cast<std::uint8_t>(1u << bit);
      try {
        const auto ds = decode_dataset(bytes);
        EXPECT_EQ(ds.dim() % ds.head_count(), 0u);
        EXPECT_EQ(as_bytes(encode_dataset(ds)), bytes) << "byte " << byte << " bit " << bit;
      } catch (const Error&) {
      }
    }
  }
}

TEST(ActivationStore, RandomCorruptionIsRejectedOrConsistent) {
  const auto clean = as_bytes(encode_dataset(random_dataset(4, 30, 6, 3)));
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    auto bytes = clean;
    const int edits = 1 + static_cast<int>(rng() % 4);
    for (int e = 0; e < edits; ++e) bytes[rng() % bytes.size()] = static_cast<std::uint8_t>(rng());
    try {
      const auto ds = decode_dataset(bytes);
      EXPECT_EQ(as_bytes(encode_dataset(ds)), bytes);
    } catch (const Error&) {
    }
  }
}

TEST(Synthetic, RejectsZeroSamplesPerLabel) {
  SyntheticSpec spec;
  spec.num_questions = 1;
  spec.samples_per_label = 0;
  EXPECT_THROW(generate_synthetic(spec), Error);
}

TEST(Synthetic, SameSeedSameDataset) {
  SyntheticSpec spec;
  spec.rng_seed = 42;
  EXPECT_EQ(encode_dataset(generate_synthetic(spec)), encode_dataset(generate_synthetic(spec)));
  auto other = spec;
  other.rng_seed = 43;
  EXPECT_NE(encode_dataset(generate_synthetic(spec)), encode_dataset(generate_synthetic(other)));
}

TEST(Synthetic, ShapeAndLabels) {
  const auto ds = generate_synthetic({});
  EXPECT_EQ(ds.dim(), 16u);
  EXPECT_EQ(ds.head_count(), 1u);
  EXPECT_EQ(ds.size(), 20u * 8u * 2u);
  EXPECT_EQ(ds.question_ids().size(), 20u);
}

TEST(Synthetic, ClassMeansAreWellSeparated) {
  SyntheticSpec spec;
  spec.cluster_separation = 10;
  spec.noise_scale = 0.1;
  spec.num_questions = 20;
  spec.samples_per_label = 8;
  const auto ds = generate_synthetic(spec);
  for (std::uint32_t q = 0; q < 20; ++q) {
    Eigen::VectorXd pos = Eigen::VectorXd::Zero(ds.dim()), neg = pos;
    for (const auto& r : ds.records())
      if (r.question_id == q) (r.desirable() ? pos : neg) += r.vector.cast<double>() / 8.0;
    EXPECT_GE((pos - neg).norm(), 5.0) << "question " << q;
  }
}

TEST(Synthetic, ScalesLinearlyWithSeparationAndNoise) {
  SyntheticSpec a, b;
  b.cluster_separation = 3 * a.cluster_separation;
  b.noise_scale = 3 * a.noise_scale;
  const auto x = generate_synthetic(a).as_matrix(), y = generate_synthetic(b).as_matrix();
  EXPECT_LE((3 * x - y).cwiseAbs().maxCoeff(), 1e-5 * y.cwiseAbs().maxCoeff());
}
