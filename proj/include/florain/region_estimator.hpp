#pragma once

// Per-question ellipsoids estimated from labeled activations:
//   class means -> extrapolated centers -> pooled covariance -> shrunk shared
//   precision -> radii that cover every desirable sample.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "florain/activation_store.hpp"
#include "florain/error.hpp"
#include "florain/geometry.hpp"
#include "florain/parallel.hpp"

namespace florain {

inline constexpr double kDirectionEpsilon = 1e-12;

struct MeanSummary {
  std::map<std::uint32_t, Eigen::VectorXd> per_question_desirable;
  /// nullopt exactly for questions without undesirable records.
  std::map<std::uint32_t, std::optional<Eigen::VectorXd>> per_question_undesirable;
  Eigen::VectorXd global_desirable;
  /// nullopt when the dataset has no undesirable record at all.
  std::optional<Eigen::VectorXd> global_undesirable;
  std::size_t desirable_count = 0;
};

/// Class means per question and pooled over all records (not averaged over
/// question means).
inline MeanSummary compute_means(const ActivationDataset& ds) {
  const Eigen::Index dim = ds.dim();
  struct Acc {
    Eigen::VectorXd sum[2];
    std::size_t count[2] = {0, 0};
  };
  std::map<std::uint32_t, Acc> acc;
  Eigen::VectorXd total[2] = {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim)};
  std::size_t total_count[2] = {0, 0};
  for (const auto& r : ds.records()) {
    auto [it, inserted] = acc.try_emplace(r.question_id);
    if (inserted) {
      it->second.sum[0] = Eigen::VectorXd::Zero(dim);
      it->second.sum[1] = Eigen::VectorXd::Zero(dim);
    }
    const int l = r.desirable() ? 1 : 0;
    const Eigen::VectorXd v = r.vector.cast<double>();
    it->second.sum[l] += v;
    ++it->second.count[l];
    total[l] += v;
    ++total_count[l];
  }
  if (total_count[1] == 0) throw Error(ErrorKind::NoDesirableSamples, "dataset has no desirable records");

  MeanSummary out;
  for (const auto& [q, a] : acc) {
    // Dataset invariants guarantee a desirable record for every question.
    out.per_question_desirable.emplace(q, a.sum[1] / static_cast<double>(a.count[1]));
    if (a.count[0] > 0)
      out.per_question_undesirable.emplace(q, Eigen::VectorXd(a.sum[0] / static_cast<double>(a.count[0])));
    else
      out.per_question_undesirable.emplace(q, std::nullopt);
  }
  out.global_desirable = total[1] / static_cast<double>(total_count[1]);
  if (total_count[0] > 0) out.global_undesirable = total[0] / static_cast<double>(total_count[0]);
  out.desirable_count = total_count[1];
  return out;
}

/// Pushes the desirable mean away from the undesirable side:
///   mu_q = mu_q+ + lambda (alpha d_q/|d_q| + (1 - alpha) d/|d|)
/// with d_q = mu_q+ - mu_q- and d = mu+ - mu-. A question without a usable
/// d_q puts its whole weight on the global direction.
inline Eigen::VectorXd extrapolate_center(const MeanSummary& summary, std::uint32_t question, double lambda,
                                          double alpha) {
  const auto it = summary.per_question_desirable.find(question);
  if (it == summary.per_question_desirable.end())
    throw Error(ErrorKind::MissingRegion, "question " + std::to_string(question) + " is not in the summary");
  require(lambda >= 0 && std::isfinite(lambda), ErrorKind::InvalidArgument, "lambda must be finite and >= 0");
  require(alpha >= 0 && alpha <= 1, ErrorKind::InvalidArgument, "alpha must lie in [0, 1]");
  const Eigen::VectorXd& desirable = it->second;
  if (lambda == 0) return desirable;

  if (!summary.global_undesirable)
    throw Error(ErrorKind::DegenerateGlobalDirection, "no undesirable records; use lambda = 0");
  const Eigen::VectorXd global = summary.global_desirable - *summary.global_undesirable;
  const double global_norm = global.norm();
  if (global_norm < kDirectionEpsilon)
    throw Error(ErrorKind::DegenerateGlobalDirection,
                "desirable and undesirable global means coincide; use lambda = 0");

  Eigen::VectorXd direction = global / global_norm;
  const auto& undesirable = summary.per_question_undesirable.at(question);
  if (undesirable) {
    const Eigen::VectorXd local = desirable - *undesirable;
    const double local_norm = local.norm();
    if (local_norm >= kDirectionEpsilon) direction = alpha * (local / local_norm) + (1 - alpha) * direction;
  }
  return desirable + lambda * direction;
}

/// S = 1/(N+ - 1) sum over desirable rows of (x - c_q)(x - c_q)^T, with c_q
/// the supplied center of the row's question.
inline Eigen::MatrixXd empirical_covariance(const ActivationDataset& ds,
                                            const std::map<std::uint32_t, Eigen::VectorXd>& centers) {
  const Eigen::Index dim = ds.dim();
  std::vector<const ActivationRecord*> rows;
  for (const auto& r : ds.records()) {
    if (!r.desirable()) continue;
    const auto c = centers.find(r.question_id);
    if (c == centers.end())
      throw Error(ErrorKind::MissingRegion, "no center for question " + std::to_string(r.question_id));
    if (c->second.size() != dim)
      throw Error(ErrorKind::DimensionMismatch, "center for question " + std::to_string(r.question_id) +
                                                    " has dimension " + std::to_string(c->second.size()));
    rows.push_back(&r);
  }
  if (rows.size() < 2)
    throw Error(ErrorKind::InsufficientSamples,
                "covariance needs at least 2 desirable records, found " + std::to_string(rows.size()));

  std::vector<Eigen::MatrixXd> partial(block_count(rows.size()));
  for_each_block(rows.size(), [&](std::size_t b, std::size_t begin, std::size_t end) {
    Eigen::MatrixXd residuals(dim, static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i)
      residuals.col(static_cast<Eigen::Index>(i - begin)) =
          rows[i]->vector.cast<double>() - centers.at(rows[i]->question_id);
    partial[b] = residuals * residuals.transpose();
  });
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& p : partial) s += p;
  s /= static_cast<double>(rows.size() - 1);
  return (s + s.transpose()) / 2;
}

/// Inverse of the shrunk covariance beta S + (1 - beta) diag(S) + delta I,
/// delta = 1e-8 max(1, max_j S_jj).
inline Eigen::MatrixXd shrink_precision(const Eigen::MatrixXd& s, double beta) {
  require(s.rows() == s.cols() && s.rows() > 0, ErrorKind::DimensionMismatch, "S must be square");
  require(beta > 0 && beta < 1, ErrorKind::InvalidArgument, "beta must lie in (0, 1)");
  require(s.allFinite(), ErrorKind::NonFiniteValue, "S has non-finite entries");
  require(s.diagonal().minCoeff() >= 0, ErrorKind::InvalidArgument, "S has a negative diagonal entry");

  const Eigen::Index n = s.rows();
  const double floor = 1e-8 * std::max(1.0, s.diagonal().maxCoeff());
  Eigen::MatrixXd target = beta * s;
  target.diagonal() = s.diagonal() + floor * Eigen::VectorXd::Ones(n);
  // Off-diagonal entries carry only the beta share; the diagonal is complete.

  Eigen::LLT<Eigen::MatrixXd> llt(target);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::ShrinkageFailed, "shrunk covariance is not positive definite");
  Eigen::MatrixXd precision = llt.solve(Eigen::MatrixXd::Identity(n, n));
  precision = (precision + precision.transpose()) / 2;
  if (!precision.allFinite()) throw Error(ErrorKind::ShrinkageFailed, "shrunk covariance is numerically singular");
  try {
    Precision check(precision);
  } catch (const Error& e) {
    throw Error(ErrorKind::ShrinkageFailed, std::string("inverted covariance failed SPD check: ") + e.what());
  }
  return precision;
}

/// Block-diagonal variant: S is split into `blocks` equal diagonal blocks
/// (one per attention head), each shrunk and inverted on its own; cross-head
/// covariances are dropped.
inline Eigen::MatrixXd shrink_precision_blocked(const Eigen::MatrixXd& s, double beta, std::uint32_t blocks) {
  require(blocks > 0 && s.rows() % blocks == 0, ErrorKind::DimensionMismatch,
          "block count " + std::to_string(blocks) + " does not divide dimension " + std::to_string(s.rows()));
  if (blocks == 1) return shrink_precision(s, beta);
  const Eigen::Index width = s.rows() / blocks;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s.rows(), s.cols());
  for (std::uint32_t h = 0; h < blocks; ++h) {
    const Eigen::Index at = h * width;
    out.block(at, at, width, width) = shrink_precision(s.block(at, at, width, width), beta);
  }
  return out;
}

/// Smallest radius putting every row inside the ellipsoid: max_i (x_i - mu)^T P (x_i - mu).
inline double estimate_radius(const Eigen::VectorXd& center, const Precision& precision,
                              const std::vector<Eigen::VectorXd>& desirable_rows) {
  require(!desirable_rows.empty(), ErrorKind::InsufficientSamples, "radius needs at least one desirable row");
  require(center.size() == precision.dim(), ErrorKind::DimensionMismatch, "center/precision dimension mismatch");
  double radius = 0;
  for (const auto& x : desirable_rows) {
    require(x.size() == center.size(), ErrorKind::DimensionMismatch, "row/center dimension mismatch");
    radius = std::max(radius, precision.quadratic_form(x - center));
  }
  return radius;
}

inline double estimate_radius(const Eigen::VectorXd& center, const Eigen::MatrixXd& precision,
                              const std::vector<Eigen::VectorXd>& desirable_rows) {
  return estimate_radius(center, Precision(precision), desirable_rows);
}

// ---------------------------------------------------------------------------

enum class CenterMode {
  Extrapolated,  ///< covariance residuals taken about the extrapolated centers
  Raw,           ///< residuals about the desirable sample means
};

struct RegionConfig {
  double lambda = 5.0;
  double alpha = 0.2;
  double beta = 0.5;
  CenterMode center_mode = CenterMode::Extrapolated;
  std::uint32_t blocks = 1;  ///< 1 = full covariance; H = block-diagonal per head

  friend bool operator==(const RegionConfig&, const RegionConfig&) = default;
};

struct RegionSet {
  std::map<std::uint32_t, EllipsoidRegion> regions;
  PrecisionPtr shared_precision;
  RegionConfig hyper;

  Eigen::Index dim() const { return shared_precision ? shared_precision->dim() : 0; }

  const EllipsoidRegion& at(std::uint32_t question) const {
    const auto it = regions.find(question);
    if (it == regions.end())
      throw Error(ErrorKind::MissingRegion, "no region for question " + std::to_string(question));
    return it->second;
  }
};

inline RegionSet build_regions(const ActivationDataset& ds, const RegionConfig& config) {
  require(config.beta > 0 && config.beta < 1, ErrorKind::InvalidArgument, "beta must lie in (0, 1)");
  require(config.lambda >= 0 && std::isfinite(config.lambda), ErrorKind::InvalidArgument, "lambda must be >= 0");
  require(config.alpha >= 0 && config.alpha <= 1, ErrorKind::InvalidArgument, "alpha must lie in [0, 1]");

  const MeanSummary means = compute_means(ds);
  std::map<std::uint32_t, Eigen::VectorXd> centers;
  for (const auto& [q, unused] : means.per_question_desirable)
    centers.emplace(q, extrapolate_center(means, q, config.lambda, config.alpha));

  const Eigen::MatrixXd s = empirical_covariance(
      ds, config.center_mode == CenterMode::Extrapolated ? centers : means.per_question_desirable);
  auto precision = make_precision(shrink_precision_blocked(s, config.beta, config.blocks));

  std::map<std::uint32_t, std::vector<Eigen::VectorXd>> desirable_rows;
  for (const auto& r : ds.records())
    if (r.desirable()) desirable_rows[r.question_id].push_back(r.vector.cast<double>());

  RegionSet out{{}, precision, config};
  for (auto& [q, center] : centers) {
    const double radius = estimate_radius(center, *precision, desirable_rows.at(q));
    out.regions.emplace(q, EllipsoidRegion(std::move(center), precision, radius));
  }
  return out;
}

}  // namespace florain
