// florain: command-line front end.
//
//   florain gen       --questions Q --per-label M --dim D --sep S --noise T --seed K --out FILE
//   florain estimate  --data FILE --lambda L --alpha A --beta B [--center-mode extrapolated|raw] [--blocks H]
//                     --out regions.json
//   florain train     --data FILE --regions regions.json --rank K --eta E --steps N
//                     [--optimizer plain|scaled --epsilon EPS] --seed S --out params.florain --report report.json
//   florain apply     --params params.florain --data FILE --out FILE
//   florain eval      --params params.florain --data FILE --regions regions.json
//   florain gradcheck --data FILE --regions regions.json --rank K --seed S
//
// Exit status is 0 on success, 2 on usage errors and a per-class code for
// library errors; the error is also written to stderr as one JSON line.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "florain/florain.hpp"

namespace {

using namespace florain;

struct Global {
  unsigned threads = 0;
  bool quiet = false;
};

void note(const Global& g, const std::string& line) {
  if (!g.quiet) std::cout << line << '\n';
}

void print_json(const json& doc) { std::cout << doc.dump(2) << '\n'; }

void error_line(const std::string& kind, int code, const std::string& message, std::optional<std::uint64_t> offset) {
  json err = {{"error", kind}, {"code", code}, {"message", message}};
  if (offset) err["offset"] = *offset;
  std::cerr << err.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probe-free low-rank activation intervention toolkit"};
  app.require_subcommand(1);
  Global global;
  app.add_option("--threads", global.threads, "worker threads (0 = hardware concurrency)")->capture_default_str();
  app.add_flag("--quiet", global.quiet, "suppress progress output");

  // gen
  SyntheticSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "write a synthetic activation dataset");
  gen->add_option("--questions", spec.num_questions)->capture_default_str();
  gen->add_option("--per-label", spec.samples_per_label)->capture_default_str();
  gen->add_option("--dim", spec.dim)->capture_default_str();
  gen->add_option("--sep", spec.cluster_separation)->capture_default_str();
  gen->add_option("--noise", spec.noise_scale)->capture_default_str();
  gen->add_option("--seed", spec.rng_seed)->capture_default_str();
  gen->add_option("--out", gen_out)->required();

  // estimate
  RegionConfig region_config;
  std::string est_data, est_out, center_mode = "extrapolated";
  auto* estimate = app.add_subcommand("estimate", "estimate per-question ellipsoids");
  estimate->add_option("--data", est_data)->required();
  estimate->add_option("--lambda", region_config.lambda)->capture_default_str();
  estimate->add_option("--alpha", region_config.alpha)->capture_default_str();
  estimate->add_option("--beta", region_config.beta)->capture_default_str();
  estimate->add_option("--center-mode", center_mode)
      ->check(CLI::IsMember({"extrapolated", "raw"}))
      ->capture_default_str();
  estimate->add_option("--blocks", region_config.blocks, "1 = full covariance, H = block-diagonal per head")
      ->capture_default_str();
  estimate->add_option("--out", est_out)->required();

  // train
  TrainingConfig train_config;
  std::string train_data, train_regions, train_out, train_report, optimizer = "plain";
  Eigen::Index rank = 0;
  double init_scale = 1e-3;
  bool timing = false;
  auto* trainc = app.add_subcommand("train", "fit the intervention map");
  trainc->add_option("--data", train_data)->required();
  trainc->add_option("--regions", train_regions)->required();
  trainc->add_option("--rank", rank)->required();
  trainc->add_option("--eta", train_config.eta)->capture_default_str();
  trainc->add_option("--steps", train_config.max_steps)->capture_default_str();
  trainc->add_option("--optimizer", optimizer)->check(CLI::IsMember({"plain", "scaled"}))->capture_default_str();
  trainc->add_option("--epsilon", train_config.epsilon)->capture_default_str();
  trainc->add_option("--seed", train_config.seed)->capture_default_str();
  trainc->add_option("--init-scale", init_scale)->capture_default_str();
  trainc->add_option("--loss-floor", train_config.loss_floor)->capture_default_str();
  trainc->add_option("--grad-tol", train_config.grad_tol)->capture_default_str();
  trainc->add_flag("--timing", timing, "include wall time in the report");
  trainc->add_option("--out", train_out)->required();
  trainc->add_option("--report", train_report)->required();

  // apply
  std::string apply_params, apply_data, apply_out;
  auto* applyc = app.add_subcommand("apply", "map every activation of a dataset");
  applyc->add_option("--params", apply_params)->required();
  applyc->add_option("--data", apply_data)->required();
  applyc->add_option("--out", apply_out)->required();

  // eval
  std::string eval_params, eval_data, eval_regions;
  auto* evalc = app.add_subcommand("eval", "region diagnostics before and after the map");
  evalc->add_option("--params", eval_params)->required();
  evalc->add_option("--data", eval_data)->required();
  evalc->add_option("--regions", eval_regions)->required();

  // gradcheck
  std::string gc_data, gc_regions;
  Eigen::Index gc_rank = 0;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
  gradcheck->add_option("--data", gc_data)->required();
  gradcheck->add_option("--regions", gc_regions)->required();
  gradcheck->add_option("--rank", gc_rank)->required();
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("UsageError", 2, e.what(), std::nullopt);
    return 2;
  }

  try {
    set_thread_count(global.threads);

    if (*gen) {
      const auto ds = generate_synthetic(spec);
      save_dataset(ds, gen_out);
      note(global, "wrote " + std::to_string(ds.size()) + " records (D = " + std::to_string(ds.dim()) + ") to " +
                       gen_out);
    } else if (*estimate) {
      region_config.center_mode = parse_center_mode(center_mode);
      const auto regions = build_regions(load_dataset(est_data), region_config);
      save_regions(regions, est_out);
      note(global, "wrote " + std::to_string(regions.regions.size()) + " regions to " + est_out);
    } else if (*trainc) {
      train_config.optimizer = optimizer == "scaled" ? Optimizer::ScaledGD : Optimizer::PlainGD;
      train_config.validate();
      const auto ds = load_dataset(train_data);
      const auto regions = load_regions(train_regions);
      const auto init = init_params(ds.dim(), rank, train_config.seed, init_scale);
      const auto [params, report] = train(ds, regions, train_config, init);
      save_params(params, train_out);
      const json extra = {{"rank", rank}, {"init_scale", init_scale}, {"data", train_data}, {"regions", train_regions}};
      detail::write_json(report_to_json(report, train_config, extra, timing), train_report);
      char line[160];
      std::snprintf(line, sizeof line, "loss %.6g -> %.6g after %zu steps, feasible %.4f",
                    report.loss_trajectory.front().second, report.final_loss, report.steps_taken,
                    report.feasible_fraction);
      note(global, line);
    } else if (*applyc) {
      cmd_apply(apply_params, apply_data, apply_out);
      note(global, "wrote " + apply_out);
    } else if (*evalc) {
      print_json(eval_to_json(cmd_eval(eval_params, eval_data, eval_regions)));
    } else if (*gradcheck) {
      const auto r = cmd_gradcheck(gc_data, gc_regions, gc_rank, gc_seed);
      print_json({{"format_version", kJsonFormatVersion},
                  {"kind", "gradcheck"},
                  {"tolerance", kGradCheckTolerance},
                  {"max_relative_error", {{"W", r.error_W}, {"R", r.error_R}, {"b", r.error_b}, {"s", r.error_s}}},
                  {"passed", r.passed}});
      if (!r.passed) {
        const auto kind = ErrorKind::GradientCheckFailed;
        error_line(std::string(to_string(kind)), exit_code(kind), "analytic and numeric gradients disagree",
                   std::nullopt);
        return exit_code(kind);
      }
    }
  } catch (const Error& e) {
    error_line(std::string(to_string(e.kind())), exit_code(e.kind()), e.what(), e.offset());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    error_line("Unexpected", 1, e.what(), std::nullopt);
    return 1;
  }
  return 0;
}
