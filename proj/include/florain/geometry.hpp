#pragma once

// Mahalanobis geometry of an ellipsoid {x : (x - mu)^T P (x - mu) <= rho},
// where P is a precision (inverse covariance) matrix.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "florain/error.hpp"

namespace florain {

inline constexpr double kSymmetryTolerance = 1e-10;
inline constexpr double kContainsTolerance = 1e-12;

/// sqrt(max(t, 0)); absorbs tiny negative rounding in quadratic forms.
inline double safe_sqrt(double t) { return std::sqrt(std::max(t, 0.0)); }

/// Validated SPD precision matrix with its Cholesky factor P = L L^T.
/// Shared (by pointer) between every region that uses the same metric.
class Precision {
 public:
  explicit Precision(Eigen::MatrixXd matrix) : matrix_(std::move(matrix)) {
    require(matrix_.rows() == matrix_.cols() && matrix_.rows() > 0, ErrorKind::DimensionMismatch,
            "precision must be a nonempty square matrix");
    require(matrix_.allFinite(), ErrorKind::NonFiniteValue, "precision has non-finite entries");
    const double scale = std::max(matrix_.cwiseAbs().maxCoeff(), 1e-300);
    const double asym = (matrix_ - matrix_.transpose()).cwiseAbs().maxCoeff();
    require(asym <= kSymmetryTolerance * scale, ErrorKind::NotPositiveDefinite,
            "precision is not symmetric (max asymmetry " + std::to_string(asym) + ")");
    factor_.compute(matrix_);
    require(factor_.info() == Eigen::Success, ErrorKind::NotPositiveDefinite,
            "precision is not positive definite");
    const double min_pivot = factor_.matrixLLT().diagonal().minCoeff();
    require(min_pivot > 0 && std::isfinite(min_pivot), ErrorKind::NotPositiveDefinite,
            "precision has a non-positive Cholesky pivot");
  }

  Eigen::Index dim() const noexcept { return matrix_.rows(); }
  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
  const Eigen::LLT<Eigen::MatrixXd>& factor() const noexcept { return factor_; }

  /// v^T P v = ||L^T v||^2, never negative.
  double quadratic_form(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return (factor_.matrixU() * v).squaredNorm();
  }

 private:
  Eigen::MatrixXd matrix_;
  Eigen::LLT<Eigen::MatrixXd> factor_;
};

using PrecisionPtr = std::shared_ptr<const Precision>;

inline PrecisionPtr make_precision(Eigen::MatrixXd matrix) {
  return std::make_shared<const Precision>(std::move(matrix));
}

class EllipsoidRegion {
 public:
  EllipsoidRegion(Eigen::VectorXd center, PrecisionPtr precision, double radius)
      : center_(std::move(center)), precision_(std::move(precision)), radius_(radius) {
    require(precision_ != nullptr, ErrorKind::InvalidArgument, "region needs a precision matrix");
    require(center_.size() == precision_->dim(), ErrorKind::DimensionMismatch,
            "center has dimension " + std::to_string(center_.size()) + ", precision " +
                std::to_string(precision_->dim()));
    require(center_.allFinite(), ErrorKind::NonFiniteValue, "center has non-finite entries");
    require(std::isfinite(radius_) && radius_ >= 0, ErrorKind::InvalidArgument, "radius must be finite and >= 0");
  }

  EllipsoidRegion(Eigen::VectorXd center, Eigen::MatrixXd precision, double radius)
      : EllipsoidRegion(std::move(center), make_precision(std::move(precision)), radius) {}

  Eigen::Index dim() const noexcept { return center_.size(); }
  const Eigen::VectorXd& center() const noexcept { return center_; }
  const Precision& precision() const noexcept { return *precision_; }
  const PrecisionPtr& precision_ptr() const noexcept { return precision_; }
  double radius() const noexcept { return radius_; }

 private:
  Eigen::VectorXd center_;
  PrecisionPtr precision_;
  double radius_;
};

namespace detail {
inline void check_dim(const EllipsoidRegion& region, Eigen::Index n, const char* what) {
  if (n != region.dim())
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + " has dimension " + std::to_string(n) +
                                                  ", region has " + std::to_string(region.dim()));
}
}  // namespace detail

/// Squared Mahalanobis distance (x - y)^T P (x - y) under the region's metric.
inline double mahalanobis_sq(const EllipsoidRegion& region, const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& y) {
  detail::check_dim(region, x.size(), "x");
  detail::check_dim(region, y.size(), "y");
  return region.precision().quadratic_form(x - y);
}

/// Squared Mahalanobis distance from the region center.
inline double center_distance_sq(const EllipsoidRegion& region, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return mahalanobis_sq(region, x, region.center());
}

inline bool contains(const EllipsoidRegion& region, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return center_distance_sq(region, x) <= region.radius() + kContainsTolerance;
}

/// Closed-form Mahalanobis projection onto the ellipsoid. Interior points are
/// returned unchanged; exterior points are scaled radially toward the center,
///   x* = mu + sqrt(rho / c) (y - mu),  c = (y - mu)^T P (y - mu).
inline Eigen::VectorXd project(const EllipsoidRegion& region, const Eigen::Ref<const Eigen::VectorXd>& y) {
  const double c = center_distance_sq(region, y);
  if (c <= region.radius() + kContainsTolerance) return y;
  if (region.radius() == 0)
    throw Error(ErrorKind::DegenerateRadius, "cannot project onto a zero-radius region from outside its center");
  const double scale = safe_sqrt(region.radius()) / safe_sqrt(c);
  return region.center() + scale * (y - region.center());
}

/// Squared hinge ((sqrt(c) - sqrt(rho))_+)^2: the distance from y to its
/// projection, measured in the same metric.
inline double projection_residual_sq(const EllipsoidRegion& region, const Eigen::Ref<const Eigen::VectorXd>& y) {
  const double gap = safe_sqrt(center_distance_sq(region, y)) - safe_sqrt(region.radius());
  return gap > 0 ? gap * gap : 0.0;
}

}  // namespace florain
