#pragma once

// Sample-dependent low-rank map
//   f(a) = (I + L(a) R^T) a + s,   L(a)_{:,i} = phi(W_{:,i} o a + b_{:,i}),
// with W, b, R in R^{D x k}, s in R^D and o the Hadamard product.
//
// Parameter file (little-endian):
//   0  magic "FLRP"
//   4  u32 format version (1)
//   8  u32 D
//  12  u32 k
//  16  u8  phi (0 = Tanh, 1 = LinearIdentity)
//  17  W, b, R as D x k f64 row-major, then s as D f64

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "florain/activation_store.hpp"
#include "florain/detail/bytes.hpp"
#include "florain/detail/random.hpp"
#include "florain/error.hpp"
#include "florain/parallel.hpp"

namespace florain {

enum class Activation : std::uint8_t { Tanh = 0, LinearIdentity = 1 };

struct InterventionParams {
  Eigen::MatrixXd W;
  Eigen::MatrixXd b;
  Eigen::MatrixXd R;
  Eigen::VectorXd s;
  Activation phi = Activation::Tanh;

  Eigen::Index dim() const noexcept { return W.rows(); }
  Eigen::Index rank() const noexcept { return W.cols(); }

  /// Throws unless all blocks agree on (D, k), k <= D and every entry is finite.
  void validate() const {
    const Eigen::Index d = W.rows(), k = W.cols();
    require(d > 0 && k > 0, ErrorKind::InvalidArgument, "D and k must be positive");
    require(k <= d, ErrorKind::InvalidArgument, "rank k must not exceed D");
    require(b.rows() == d && b.cols() == k && R.rows() == d && R.cols() == k && s.size() == d,
            ErrorKind::DimensionMismatch, "parameter blocks disagree on D x k");
    require(W.allFinite() && b.allFinite() && R.allFinite() && s.allFinite(), ErrorKind::NonFiniteValue,
            "parameters contain NaN or Inf");
  }

  static InterventionParams zeros(Eigen::Index dim, Eigen::Index rank, Activation phi = Activation::Tanh) {
    return {Eigen::MatrixXd::Zero(dim, rank), Eigen::MatrixXd::Zero(dim, rank), Eigen::MatrixXd::Zero(dim, rank),
            Eigen::VectorXd::Zero(dim), phi};
  }

  friend bool operator==(const InterventionParams& x, const InterventionParams& y) {
    return x.phi == y.phi && x.W.rows() == y.W.rows() && x.W.cols() == y.W.cols() && x.W == y.W && x.b == y.b &&
           x.R == y.R && x.s == y.s;
  }
};

namespace detail {
inline void check_input(const InterventionParams& params, Eigen::Index n) {
  if (n != params.dim())
    throw Error(ErrorKind::DimensionMismatch,
                "activation has dimension " + std::to_string(n) + ", map expects " + std::to_string(params.dim()));
}

/// Pre-activation Z = W o (a 1^T) + b.
inline Eigen::MatrixXd pre_activation(const InterventionParams& params, const Eigen::Ref<const Eigen::VectorXd>& a) {
  return (params.W.array().colwise() * a.array() + params.b.array()).matrix();
}
}  // namespace detail

inline Eigen::MatrixXd compute_L(const InterventionParams& params, const Eigen::Ref<const Eigen::VectorXd>& a) {
  detail::check_input(params, a.size());
  Eigen::MatrixXd z = detail::pre_activation(params, a);
  if (params.phi == Activation::Tanh) z = z.array().tanh().matrix();
  return z;
}

/// a + L(a) (R^T a) + s. The rank-k product is formed first; no D x D
/// intermediate exists.
inline Eigen::VectorXd apply(const InterventionParams& params, const Eigen::Ref<const Eigen::VectorXd>& a) {
  const Eigen::MatrixXd l = compute_L(params, a);
  const Eigen::VectorXd projected = params.R.transpose() * a;
  return a + l * projected + params.s;
}

inline std::vector<Eigen::VectorXd> apply_batch(const InterventionParams& params,
                                                const std::vector<Eigen::VectorXd>& rows) {
  for (const auto& a : rows) detail::check_input(params, a.size());
  std::vector<Eigen::VectorXd> out(rows.size());
  for_each_block(rows.size(), [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = apply(params, rows[i]);
  });
  return out;
}

/// W = 0, s = 0, b and R ~ N(0, init_scale^2), drawn (b first, then R, both
/// row-major) from PortableRng(seed). The zero point is a saddle of the
/// training loss; the noise breaks it while leaving the map near identity.
inline InterventionParams init_params(Eigen::Index dim, Eigen::Index rank, std::uint64_t seed,
                                      double init_scale = 1e-3, Activation phi = Activation::Tanh) {
  require(dim > 0 && rank > 0 && rank <= dim, ErrorKind::InvalidArgument, "need 0 < k <= D");
  require(init_scale >= 0 && std::isfinite(init_scale), ErrorKind::InvalidArgument, "init_scale must be >= 0");
  auto params = InterventionParams::zeros(dim, rank, phi);
  detail::PortableRng rng(seed);
  for (Eigen::MatrixXd* m : {&params.b, &params.R})
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < rank; ++j) (*m)(i, j) = init_scale * rng.normal();
  return params;
}

// ---------------------------------------------------------------------------
// Parameter file

inline constexpr std::uint32_t kParamsFormatVersion = 1;
inline constexpr std::size_t kParamsHeaderBytes = 17;

inline std::string encode_params(const InterventionParams& params) {
  params.validate();
  const Eigen::Index d = params.dim(), k = params.rank();
  detail::ByteWriter w;
  w.reserve(kParamsHeaderBytes + 8 * static_cast<std::size_t>(3 * d * k + d));
  w.raw("FLRP");
  w.u32(kParamsFormatVersion);
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(k));
  w.u8(static_cast<std::uint8_t>(params.phi));
  for (const Eigen::MatrixXd* m : {&params.W, &params.b, &params.R})
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < k; ++j) w.f64((*m)(i, j));
  for (Eigen::Index i = 0; i < d; ++i) w.f64(params.s[i]);
  return w.take();
}

inline InterventionParams decode_params(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kParamsHeaderBytes)
    throw Error(ErrorKind::TruncatedFile, "parameter header needs 17 bytes", bytes.size());
  if (std::memcmp(bytes.data(), "FLRP", 4) != 0)
    throw Error(ErrorKind::MalformedHeader, "bad magic (expected \"FLRP\")", 0);
  detail::ByteReader in(bytes);
  in.seek(4);
  if (const auto version = in.u32(); version != kParamsFormatVersion)
    throw Error(ErrorKind::MalformedHeader, "unsupported parameter format version " + std::to_string(version), 4);
  const std::uint32_t d = in.u32();
  const std::uint32_t k = in.u32();
  const std::uint8_t phi = in.u8();
  if (d == 0) throw Error(ErrorKind::MalformedHeader, "D must be positive", 8);
  if (k == 0 || k > d) throw Error(ErrorKind::MalformedHeader, "k must satisfy 0 < k <= D", 12);
  if (phi > 1) throw Error(ErrorKind::MalformedHeader, "unknown activation code " + std::to_string(phi), 16);
  const std::uint64_t expected = kParamsHeaderBytes + 8 * (3 * std::uint64_t{d} * k + d);
  if (bytes.size() < expected)
    throw Error(ErrorKind::TruncatedFile, "parameter payload is short", bytes.size());
  if (bytes.size() > expected) throw Error(ErrorKind::MalformedHeader, "trailing bytes after parameters", expected);

  auto params = InterventionParams::zeros(d, k, static_cast<Activation>(phi));
  auto read = [&](double& target) {
    const std::uint64_t at = in.offset();
    target = in.f64();
    if (!std::isfinite(target)) throw Error(ErrorKind::NonFiniteValue, "non-finite parameter", at);
  };
  for (Eigen::MatrixXd* m : {&params.W, &params.b, &params.R})
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < k; ++j) read((*m)(i, j));
  for (Eigen::Index i = 0; i < d; ++i) read(params.s[i]);
  return params;
}

inline void save_params(const InterventionParams& params, const std::filesystem::path& path) {
  write_file(path, encode_params(params));
}

inline InterventionParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

}  // namespace florain
