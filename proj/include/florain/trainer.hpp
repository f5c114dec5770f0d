#pragma once

// Training objective
//   F(W, R, b, s) = sum_i [ (sqrt(c_q(f(a_i), mu_q)) - sqrt(rho_q))_+ ]^2
// over every record (desirable and undesirable), its analytic gradient, and
// the plain / scaled gradient-descent optimizers.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "florain/activation_store.hpp"
#include "florain/error.hpp"
#include "florain/geometry.hpp"
#include "florain/intervention_map.hpp"
#include "florain/parallel.hpp"
#include "florain/region_estimator.hpp"

namespace florain {

enum class Optimizer { PlainGD, ScaledGD };

struct TrainingConfig {
  double eta = 1e-3;
  double epsilon = 1e-2;  ///< ScaledGD preconditioner regularizer
  std::size_t max_steps = 2000;
  Optimizer optimizer = Optimizer::PlainGD;
  double loss_floor = 0.0;  ///< stop once loss <= loss_floor
  double grad_tol = 1e-10;  ///< stop once the full gradient norm <= grad_tol
  double hinge_eps = 1e-12;
  std::uint64_t seed = 0;

  void validate() const {
    require(eta > 0 && std::isfinite(eta), ErrorKind::InvalidArgument, "eta must be positive");
    require(epsilon > 0 && std::isfinite(epsilon), ErrorKind::InvalidArgument, "epsilon must be positive");
    require(max_steps > 0, ErrorKind::InvalidArgument, "max_steps must be positive");
    require(loss_floor >= 0 && grad_tol >= 0, ErrorKind::InvalidArgument, "stop thresholds must be >= 0");
    require(loss_floor > 0 || grad_tol > 0, ErrorKind::InvalidArgument,
            "at most one of loss_floor and grad_tol may be 0");
    require(hinge_eps > 0 && std::isfinite(hinge_eps), ErrorKind::InvalidArgument, "hinge_eps must be positive");
  }
};

enum class StopReason { MaxSteps, LossFloor, GradientTolerance };

struct TrainReport {
  std::vector<std::pair<std::size_t, double>> loss_trajectory;  // (step, loss)
  double final_loss = 0;
  double feasible_fraction = 0;
  std::size_t steps_taken = 0;
  double wall_time_seconds = 0;
  StopReason stop_reason = StopReason::MaxSteps;
};

struct Gradients {
  Eigen::MatrixXd W;
  Eigen::MatrixXd R;
  Eigen::MatrixXd b;
  Eigen::VectorXd s;

  static Gradients zeros(Eigen::Index dim, Eigen::Index rank) {
    return {Eigen::MatrixXd::Zero(dim, rank), Eigen::MatrixXd::Zero(dim, rank), Eigen::MatrixXd::Zero(dim, rank),
            Eigen::VectorXd::Zero(dim)};
  }

  Gradients& operator+=(const Gradients& o) {
    W += o.W;
    R += o.R;
    b += o.b;
    s += o.s;
    return *this;
  }

  double squared_norm() const { return W.squaredNorm() + R.squaredNorm() + b.squaredNorm() + s.squaredNorm(); }
  double norm() const { return std::sqrt(squared_norm()); }
};

/// The objective bound to a dataset and its regions. Activations are widened
/// to f64 once and each record is paired with its region up front.
class Objective {
 public:
  Objective(const ActivationDataset& ds, const RegionSet& regions) : regions_(&regions) {
    require(regions.dim() == static_cast<Eigen::Index>(ds.dim()), ErrorKind::DimensionMismatch,
            "regions have dimension " + std::to_string(regions.dim()) + ", dataset " + std::to_string(ds.dim()));
    activations_ = ds.as_matrix();
    targets_.reserve(ds.size());
    for (const auto& r : ds.records()) targets_.push_back(&regions.at(r.question_id));
  }

  Eigen::Index dim() const noexcept { return activations_.rows(); }
  std::size_t size() const noexcept { return targets_.size(); }
  const Eigen::MatrixXd& activations() const noexcept { return activations_; }
  const EllipsoidRegion& region(std::size_t i) const { return *targets_[i]; }

  double loss(const InterventionParams& params) const {
    check(params);
    std::vector<double> partial(block_count(size()), 0.0);
    for_each_block(size(), [&](std::size_t blk, std::size_t begin, std::size_t end) {
      double sum = 0;
      for (std::size_t i = begin; i < end; ++i)
        sum += projection_residual_sq(*targets_[i], apply(params, activations_.col(static_cast<Eigen::Index>(i))));
      partial[blk] = sum;
    });
    double total = 0;
    for (double p : partial) total += p;
    return total;
  }

  /// Loss and its gradient in one pass. Records inside their region add
  /// exactly zero; the distance in the hinge derivative is sqrt(c + hinge_eps).
  std::pair<double, Gradients> loss_and_gradients(const InterventionParams& params, double hinge_eps) const {
    check(params);
    const Eigen::Index d = params.dim(), k = params.rank();
    std::vector<double> partial_loss(block_count(size()), 0.0);
    std::vector<Gradients> partial(block_count(size()));
    for_each_block(size(), [&](std::size_t blk, std::size_t begin, std::size_t end) {
      Gradients g = Gradients::zeros(d, k);
      double sum = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const auto a = activations_.col(static_cast<Eigen::Index>(i));
        const EllipsoidRegion& region = *targets_[i];
        const Eigen::VectorXd u = params.R.transpose() * a;
        const Eigen::MatrixXd l = compute_L(params, a);
        const Eigen::VectorXd offset = a + l * u + params.s - region.center();
        const double c = region.precision().quadratic_form(offset);
        const double gap = safe_sqrt(c) - safe_sqrt(region.radius());
        if (!(gap > 0)) continue;
        sum += gap * gap;

        const double coef = 2.0 * (1.0 - safe_sqrt(region.radius()) / std::sqrt(c + hinge_eps));
        const Eigen::VectorXd df = coef * (region.precision().matrix() * offset);
        g.s += df;
        g.R.noalias() += a * (l.transpose() * df).transpose();
        Eigen::MatrixXd dz = df * u.transpose();
        if (params.phi == Activation::Tanh) dz.array() *= 1.0 - l.array().square();
        g.b += dz;
        g.W.array() += dz.array().colwise() * a.array();
      }
      partial_loss[blk] = sum;
      partial[blk] = std::move(g);
    });
    double total = 0;
    Gradients grads = Gradients::zeros(d, k);
    for (std::size_t blk = 0; blk < partial.size(); ++blk) {
      total += partial_loss[blk];
      grads += partial[blk];
    }
    return {total, std::move(grads)};
  }

  /// Share of records whose mapped activation lies inside its region.
  double feasible_fraction(const InterventionParams& params) const {
    check(params);
    if (size() == 0) return 1.0;
    std::vector<std::size_t> inside(block_count(size()), 0);
    for_each_block(size(), [&](std::size_t blk, std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i)
        inside[blk] += contains(*targets_[i], apply(params, activations_.col(static_cast<Eigen::Index>(i))));
    });
    std::size_t total = 0;
    for (auto n : inside) total += n;
    return static_cast<double>(total) / static_cast<double>(size());
  }

 private:
  void check(const InterventionParams& params) const {
    params.validate();
    require(params.dim() == dim(), ErrorKind::DimensionMismatch,
            "parameters have D = " + std::to_string(params.dim()) + ", data " + std::to_string(dim()));
  }

  const RegionSet* regions_;
  Eigen::MatrixXd activations_;
  std::vector<const EllipsoidRegion*> targets_;
};

inline double loss(const InterventionParams& params, const ActivationDataset& ds, const RegionSet& regions) {
  return Objective(ds, regions).loss(params);
}

inline Gradients gradients(const InterventionParams& params, const ActivationDataset& ds, const RegionSet& regions,
                           double hinge_eps = 1e-12) {
  return Objective(ds, regions).loss_and_gradients(params, hinge_eps).second;
}

namespace detail {
inline void check_shapes(const InterventionParams& params, const Gradients& grads) {
  const auto d = params.dim(), k = params.rank();
  require(grads.W.rows() == d && grads.W.cols() == k && grads.R.rows() == d && grads.R.cols() == k &&
              grads.b.rows() == d && grads.b.cols() == k && grads.s.size() == d,
          ErrorKind::DimensionMismatch, "gradient shapes do not match parameters");
}

/// G (F^T F + eps I)^{-1}, solved on the k x k system.
inline Eigen::MatrixXd right_precondition(const Eigen::MatrixXd& grad, const Eigen::MatrixXd& factor, double epsilon,
                                          const char* name) {
  const Eigen::Index k = factor.cols();
  const Eigen::MatrixXd gram = factor.transpose() * factor + epsilon * Eigen::MatrixXd::Identity(k, k);
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::PreconditionerFailure, std::string("k x k solve failed for the ") + name + " update");
  Eigen::MatrixXd out = llt.solve(grad.transpose()).transpose();
  if (!out.allFinite())
    throw Error(ErrorKind::PreconditionerFailure, std::string("non-finite preconditioned ") + name + " step");
  return out;
}
}  // namespace detail

inline InterventionParams step_plain(const InterventionParams& params, const Gradients& grads, double eta) {
  detail::check_shapes(params, grads);
  InterventionParams next = params;
  next.W -= eta * grads.W;
  next.R -= eta * grads.R;
  next.b -= eta * grads.b;
  next.s -= eta * grads.s;
  return next;
}

/// Scaled step; every preconditioner is built from the current iterate:
///   W -= eta grad_W (R^T R + eps I)^-1     R -= eta grad_R (W^T W + eps I)^-1
///   b -= eta grad_b (b^T b + eps I)^-1     s -= eta grad_s / (s^T s + eps)
inline InterventionParams step_scaled(const InterventionParams& params, const Gradients& grads, double eta,
                                      double epsilon) {
  detail::check_shapes(params, grads);
  require(epsilon > 0, ErrorKind::InvalidArgument, "epsilon must be positive");
  InterventionParams next = params;
  next.W -= eta * detail::right_precondition(grads.W, params.R, epsilon, "W");
  next.R -= eta * detail::right_precondition(grads.R, params.W, epsilon, "R");
  next.b -= eta * detail::right_precondition(grads.b, params.b, epsilon, "b");
  next.s -= (eta / (params.s.squaredNorm() + epsilon)) * grads.s;
  return next;
}

/// Full-batch descent from `init` until max_steps updates, loss <= loss_floor
/// or gradient norm <= grad_tol, whichever comes first.
inline std::pair<InterventionParams, TrainReport> train(const ActivationDataset& ds, const RegionSet& regions,
                                                        const TrainingConfig& config, InterventionParams init) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const Objective objective(ds, regions);
  InterventionParams params = std::move(init);
  TrainReport report;

  for (std::size_t step = 0;; ++step) {
    auto [value, grads] = objective.loss_and_gradients(params, config.hinge_eps);
    if (!std::isfinite(value))
      throw Error(ErrorKind::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step));
    report.loss_trajectory.emplace_back(step, value);
    report.final_loss = value;
    report.steps_taken = step;
    if (value <= config.loss_floor) {
      report.stop_reason = StopReason::LossFloor;
      break;
    }
    if (grads.norm() <= config.grad_tol) {
      report.stop_reason = StopReason::GradientTolerance;
      break;
    }
    if (step == config.max_steps) {
      report.stop_reason = StopReason::MaxSteps;
      break;
    }
    params = config.optimizer == Optimizer::PlainGD ? step_plain(params, grads, config.eta)
                                                    : step_scaled(params, grads, config.eta, config.epsilon);
    if (!(params.W.allFinite() && params.R.allFinite() && params.b.allFinite() && params.s.allFinite()))
      throw Error(ErrorKind::NonFiniteLoss, "parameters became non-finite at step " + std::to_string(step + 1));
  }

  report.feasible_fraction = objective.feasible_fraction(params);
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(params), std::move(report)};
}

}  // namespace florain
