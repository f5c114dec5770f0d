#pragma once

// JSON artifacts: regions.json (estimated ellipsoids) and report.json
// (training report). Matrices and centers are embedded as base64 of
// little-endian f64, row-major.

#include <openssl/evp.h>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "florain/activation_store.hpp"
#include "florain/detail/bytes.hpp"
#include "florain/error.hpp"
#include "florain/region_estimator.hpp"
#include "florain/trainer.hpp"

namespace florain {

using json = nlohmann::json;

inline constexpr int kJsonFormatVersion = 1;

namespace detail {

inline std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw Error(ErrorKind::MalformedJson, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorKind::MalformedJson, "invalid base64 payload");
  std::size_t size = static_cast<std::size_t>(n);
  // EVP_DecodeBlock counts the zero bytes implied by '=' padding.
  for (auto it = text.rbegin(); it != text.rend() && *it == '='; ++it) --size;
  out.resize(size);
  return out;
}

inline std::string encode_f64(const double* data, std::size_t n) {
  ByteWriter w;
  w.reserve(8 * n);
  for (std::size_t i = 0; i < n; ++i) w.f64(data[i]);
  return base64_encode(w.bytes());
}

inline std::vector<double> decode_f64(const std::string& text, std::size_t expected) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != 8 * expected)
    throw Error(ErrorKind::MalformedJson,
                "expected " + std::to_string(expected) + " f64 values, payload has " + std::to_string(bytes.size()) +
                    " bytes");
  ByteReader in(bytes);
  std::vector<double> out(expected);
  for (auto& v : out) v = in.f64();
  return out;
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedJson, path.string() + ": " + e.what());
  }
}

inline void write_json(const json& doc, const std::filesystem::path& path) {
  write_file(path, doc.dump(2) + "\n");
}

inline void check_version(const json& doc, const char* kind) {
  if (!doc.is_object() || doc.value("format_version", 0) != kJsonFormatVersion || doc.value("kind", "") != kind)
    throw Error(ErrorKind::MalformedJson, std::string("not a version-1 ") + kind + " document");
}

}  // namespace detail

inline std::string_view to_string(CenterMode mode) {
  return mode == CenterMode::Extrapolated ? "extrapolated" : "raw";
}

inline CenterMode parse_center_mode(std::string_view text) {
  if (text == "extrapolated") return CenterMode::Extrapolated;
  if (text == "raw") return CenterMode::Raw;
  throw Error(ErrorKind::InvalidArgument, "unknown center mode '" + std::string(text) + "'");
}

inline std::string_view to_string(Optimizer o) { return o == Optimizer::PlainGD ? "plain" : "scaled"; }

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::MaxSteps: return "max_steps";
    case StopReason::LossFloor: return "loss_floor";
    case StopReason::GradientTolerance: return "grad_tol";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// regions.json

inline json regions_to_json(const RegionSet& set) {
  const Eigen::Index dim = set.dim();
  // Row-major copy; the matrix is symmetric but the layout is still fixed.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> p = set.shared_precision->matrix();
  json regions = json::object();
  for (const auto& [q, region] : set.regions) {
    regions[std::to_string(q)] = {
        {"center", detail::encode_f64(region.center().data(), static_cast<std::size_t>(dim))},
        {"radius", region.radius()},
    };
  }
  return {
      {"format_version", kJsonFormatVersion},
      {"kind", "regions"},
      {"dim", dim},
      {"hyper",
       {{"lambda", set.hyper.lambda},
        {"alpha", set.hyper.alpha},
        {"beta", set.hyper.beta},
        {"center_mode", to_string(set.hyper.center_mode)},
        {"blocks", set.hyper.blocks}}},
      {"precision",
       {{"encoding", "base64-f64le-rowmajor"},
        {"rows", dim},
        {"cols", dim},
        {"data", detail::encode_f64(p.data(), static_cast<std::size_t>(dim * dim))}}},
      {"regions", std::move(regions)},
  };
}

inline RegionSet regions_from_json(const json& doc) {
  detail::check_version(doc, "regions");
  try {
    const auto dim = doc.at("dim").get<std::size_t>();
    if (dim == 0) throw Error(ErrorKind::MalformedJson, "dim must be positive");
    const auto& pj = doc.at("precision");
    if (pj.at("rows").get<std::size_t>() != dim || pj.at("cols").get<std::size_t>() != dim)
      throw Error(ErrorKind::DimensionMismatch, "precision shape disagrees with dim");
    const auto values = detail::decode_f64(pj.at("data").get<std::string>(), dim * dim);
    const Eigen::Index n = static_cast<Eigen::Index>(dim);
    const Eigen::MatrixXd p = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), n, n);

    RegionSet set;
    set.shared_precision = make_precision(p);
    const auto& hj = doc.at("hyper");
    set.hyper.lambda = hj.at("lambda").get<double>();
    set.hyper.alpha = hj.at("alpha").get<double>();
    set.hyper.beta = hj.at("beta").get<double>();
    set.hyper.center_mode = parse_center_mode(hj.at("center_mode").get<std::string>());
    set.hyper.blocks = hj.at("blocks").get<std::uint32_t>();
    for (const auto& [key, rj] : doc.at("regions").items()) {
      std::size_t used = 0;
      const unsigned long q = std::stoul(key, &used);
      if (used != key.size() || q > UINT32_MAX) throw Error(ErrorKind::MalformedJson, "bad question id '" + key + "'");
      const auto c = detail::decode_f64(rj.at("center").get<std::string>(), dim);
      set.regions.emplace(static_cast<std::uint32_t>(q),
                          EllipsoidRegion(Eigen::Map<const Eigen::VectorXd>(c.data(), n), set.shared_precision,
                                          rj.at("radius").get<double>()));
    }
    return set;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedJson, std::string("regions document: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(ErrorKind::MalformedJson, "regions document has a non-numeric question id");
  } catch (const std::out_of_range&) {
    throw Error(ErrorKind::MalformedJson, "regions document has an out-of-range question id");
  }
}

inline void save_regions(const RegionSet& set, const std::filesystem::path& path) {
  detail::write_json(regions_to_json(set), path);
}

inline RegionSet load_regions(const std::filesystem::path& path) { return regions_from_json(detail::read_json(path)); }

// ---------------------------------------------------------------------------
// report.json

/// `extra_config` is merged into the config echo (rank, init scale, ...).
/// Wall time is omitted unless requested so reports stay byte-reproducible.
inline json report_to_json(const TrainReport& report, const TrainingConfig& config,
                           const json& extra_config = json::object(), bool include_timing = false) {
  json cfg = {
      {"eta", config.eta},
      {"epsilon", config.epsilon},
      {"max_steps", config.max_steps},
      {"optimizer", to_string(config.optimizer)},
      {"loss_floor", config.loss_floor},
      {"grad_tol", config.grad_tol},
      {"hinge_eps", config.hinge_eps},
      {"seed", config.seed},
  };
  if (!extra_config.is_null()) cfg.update(extra_config);
  json trajectory = json::array();
  for (const auto& [step, value] : report.loss_trajectory) trajectory.push_back({step, value});
  json doc = {
      {"format_version", kJsonFormatVersion},
      {"kind", "train_report"},
      {"config", std::move(cfg)},
      {"loss_trajectory", std::move(trajectory)},
      {"final_loss", report.final_loss},
      {"feasible_fraction", report.feasible_fraction},
      {"steps_taken", report.steps_taken},
      {"stop_reason", to_string(report.stop_reason)},
  };
  if (include_timing) doc["wall_time_seconds"] = report.wall_time_seconds;
  return doc;
}

inline TrainReport report_from_json(const json& doc) {
  detail::check_version(doc, "train_report");
  try {
    TrainReport r;
    for (const auto& point : doc.at("loss_trajectory"))
      r.loss_trajectory.emplace_back(point.at(0).get<std::size_t>(), point.at(1).get<double>());
    r.final_loss = doc.at("final_loss").get<double>();
    r.feasible_fraction = doc.at("feasible_fraction").get<double>();
    r.steps_taken = doc.at("steps_taken").get<std::size_t>();
    const auto reason = doc.at("stop_reason").get<std::string>();
    r.stop_reason = reason == "loss_floor" ? StopReason::LossFloor
                    : reason == "grad_tol" ? StopReason::GradientTolerance
                                           : StopReason::MaxSteps;
    r.wall_time_seconds = doc.value("wall_time_seconds", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedJson, std::string("report document: ") + e.what());
  }
}

}  // namespace florain
