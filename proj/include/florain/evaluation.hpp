#pragma once

// Apply-time inference, region diagnostics and the finite-difference gradient
// check used by the CLI.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "florain/activation_store.hpp"
#include "florain/detail/random.hpp"
#include "florain/error.hpp"
#include "florain/geometry.hpp"
#include "florain/intervention_map.hpp"
#include "florain/json_io.hpp"
#include "florain/parallel.hpp"
#include "florain/region_estimator.hpp"
#include "florain/trainer.hpp"

namespace florain {

/// Region statistics before and after the map. mean_shift (average
/// ||f(a) - a||) is a geometric proxy for how far the intervention moves
/// activations; it is not a distributional (KL) measure.
struct EvalSummary {
  double pre_feasible_fraction = 0;
  double post_feasible_fraction = 0;
  double mean_residual_pre = 0;
  double mean_residual_post = 0;
  double mean_shift = 0;
  std::size_t records = 0;
};

inline EvalSummary evaluate(const InterventionParams& params, const ActivationDataset& ds, const RegionSet& regions) {
  const Objective objective(ds, regions);
  params.validate();
  require(params.dim() == objective.dim(), ErrorKind::DimensionMismatch, "parameter and dataset D differ");
  struct Partial {
    double inside_pre = 0, inside_post = 0, residual_pre = 0, residual_post = 0, shift = 0;
  };
  std::vector<Partial> partial(block_count(objective.size()));
  for_each_block(objective.size(), [&](std::size_t blk, std::size_t begin, std::size_t end) {
    Partial p;
    for (std::size_t i = begin; i < end; ++i) {
      const auto a = objective.activations().col(static_cast<Eigen::Index>(i));
      const EllipsoidRegion& region = objective.region(i);
      const Eigen::VectorXd mapped = apply(params, a);
      p.inside_pre += contains(region, a);
      p.inside_post += contains(region, mapped);
      p.residual_pre += projection_residual_sq(region, a);
      p.residual_post += projection_residual_sq(region, mapped);
      p.shift += (mapped - a).norm();
    }
    partial[blk] = p;
  });
  Partial total;
  for (const auto& p : partial) {
    total.inside_pre += p.inside_pre;
    total.inside_post += p.inside_post;
    total.residual_pre += p.residual_pre;
    total.residual_post += p.residual_post;
    total.shift += p.shift;
  }
  EvalSummary out;
  out.records = objective.size();
  if (out.records == 0) {
    out.pre_feasible_fraction = out.post_feasible_fraction = 1.0;
    return out;
  }
  const double n = static_cast<double>(out.records);
  out.pre_feasible_fraction = total.inside_pre / n;
  out.post_feasible_fraction = total.inside_post / n;
  out.mean_residual_pre = total.residual_pre / n;
  out.mean_residual_post = total.residual_post / n;
  out.mean_shift = total.shift / n;
  return out;
}

inline json eval_to_json(const EvalSummary& s) {
  return {
      {"format_version", kJsonFormatVersion},
      {"kind", "eval_summary"},
      {"records", s.records},
      {"pre_feasible_fraction", s.pre_feasible_fraction},
      {"post_feasible_fraction", s.post_feasible_fraction},
      {"mean_residual_pre", s.mean_residual_pre},
      {"mean_residual_post", s.mean_residual_post},
      {"mean_shift", s.mean_shift},
      {"mean_shift_note", "proxy: mean Euclidean displacement ||f(a) - a||, not a KL divergence"},
  };
}

/// Maps every activation of a dataset. Labels, question ids, H and record
/// order are kept; mapped values are rounded to f32 for storage.
inline ActivationDataset apply_dataset(const InterventionParams& params, const ActivationDataset& ds) {
  params.validate();
  if (params.dim() != static_cast<Eigen::Index>(ds.dim()))
    throw Error(ErrorKind::DimensionMismatch, "parameters have D = " + std::to_string(params.dim()) +
                                                  ", dataset has D = " + std::to_string(ds.dim()));
  std::vector<ActivationRecord> out(ds.records());
  for_each_block(out.size(), [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i].vector = apply(params, out[i].vector.cast<double>()).cast<float>();
  });
  return ActivationDataset(ds.dim(), ds.head_count(), std::move(out));
}

inline void cmd_apply(const std::filesystem::path& params_path, const std::filesystem::path& data_path,
                      const std::filesystem::path& out_path) {
  const auto params = load_params(params_path);
  const auto ds = load_dataset(data_path);
  // Dimension check and mapping both complete before the output is opened.
  save_dataset(apply_dataset(params, ds), out_path);
}

inline EvalSummary cmd_eval(const std::filesystem::path& params_path, const std::filesystem::path& data_path,
                            const std::filesystem::path& regions_path) {
  return evaluate(load_params(params_path), load_dataset(data_path), load_regions(regions_path));
}

// ---------------------------------------------------------------------------
// Gradient check

inline constexpr Eigen::Index kGradCheckMaxDim = 32;
inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckReport {
  double error_W = 0, error_R = 0, error_b = 0, error_s = 0;
  bool passed = false;

  double max_error() const { return std::max({error_W, error_R, error_b, error_s}); }
};

/// ||analytic - numeric|| / max(||analytic||, ||numeric||); 0 when both vanish.
inline double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  return scale == 0 ? 0.0 : (analytic - numeric).norm() / scale;
}

/// Central differences of the objective, one coordinate at a time.
inline Gradients numeric_gradients(const Objective& objective, const InterventionParams& params,
                                   double h = kGradCheckStep) {
  Gradients out = Gradients::zeros(params.dim(), params.rank());
  InterventionParams probe = params;
  auto differentiate = [&](double& coordinate) {
    const double saved = coordinate;
    coordinate = saved + h;
    const double up = objective.loss(probe);
    coordinate = saved - h;
    const double down = objective.loss(probe);
    coordinate = saved;
    return (up - down) / (2 * h);
  };
  for (Eigen::Index i = 0; i < params.dim(); ++i) {
    for (Eigen::Index j = 0; j < params.rank(); ++j) {
      out.W(i, j) = differentiate(probe.W(i, j));
      out.R(i, j) = differentiate(probe.R(i, j));
      out.b(i, j) = differentiate(probe.b(i, j));
    }
    out.s[i] = differentiate(probe.s[i]);
  }
  return out;
}

inline GradCheckReport check_gradients(const Objective& objective, const InterventionParams& params,
                                       double hinge_eps = 1e-12) {
  const Gradients analytic = objective.loss_and_gradients(params, hinge_eps).second;
  const Gradients numeric = numeric_gradients(objective, params);
  GradCheckReport r;
  r.error_W = relative_error(analytic.W, numeric.W);
  r.error_R = relative_error(analytic.R, numeric.R);
  r.error_b = relative_error(analytic.b, numeric.b);
  r.error_s = relative_error(analytic.s, numeric.s);
  r.passed = r.max_error() <= kGradCheckTolerance;
  return r;
}

/// Random tanh parameters with every block drawn N(0, scale^2) from
/// PortableRng(seed), in the order W, b, R (row-major), then s.
inline InterventionParams random_params(Eigen::Index dim, Eigen::Index rank, std::uint64_t seed, double scale = 0.5) {
  require(dim > 0 && rank > 0 && rank <= dim, ErrorKind::InvalidArgument, "need 0 < k <= D");
  auto params = InterventionParams::zeros(dim, rank);
  detail::PortableRng rng(seed);
  for (Eigen::MatrixXd* m : {&params.W, &params.b, &params.R})
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < rank; ++j) (*m)(i, j) = scale * rng.normal();
  for (Eigen::Index i = 0; i < dim; ++i) params.s[i] = scale * rng.normal();
  return params;
}

inline GradCheckReport gradient_check(const ActivationDataset& ds, const RegionSet& regions, Eigen::Index rank,
                                      std::uint64_t seed) {
  if (static_cast<Eigen::Index>(ds.dim()) > kGradCheckMaxDim)
    throw Error(ErrorKind::InstanceTooLarge, "gradient check supports D <= 32, got D = " + std::to_string(ds.dim()));
  require(rank > 0 && rank <= static_cast<Eigen::Index>(ds.dim()), ErrorKind::InvalidArgument, "need 0 < k <= D");
  const Objective objective(ds, regions);
  return check_gradients(objective, random_params(ds.dim(), rank, seed));
}

inline GradCheckReport cmd_gradcheck(const std::filesystem::path& data_path, const std::filesystem::path& regions_path,
                                     Eigen::Index rank, std::uint64_t seed) {
  const auto ds = load_dataset(data_path);
  if (static_cast<Eigen::Index>(ds.dim()) > kGradCheckMaxDim)
    throw Error(ErrorKind::InstanceTooLarge, "gradient check supports D <= 32, got D = " + std::to_string(ds.dim()));
  return gradient_check(ds, load_regions(regions_path), rank, seed);
}

}  // namespace florain
