// Smallest end-to-end use of the library: synthesize activations, estimate
// regions, train a rank-4 map and report how many records land inside.

#include <cstdio>

#include "florain/florain.hpp"

int main() {
  using namespace florain;

  SyntheticSpec spec;
  spec.num_questions = 12;
  spec.samples_per_label = 40;
  const auto ds = generate_synthetic(spec);
  const auto regions = build_regions(ds, RegionConfig{});

  TrainingConfig config;
  config.eta = 3e-3;
  config.max_steps = 500;
  const auto [params, report] = train(ds, regions, config, init_params(ds.dim(), 4, 0));

  const auto summary = evaluate(params, ds, regions);
  std::printf("loss %.4g -> %.4g in %zu steps\n", report.loss_trajectory.front().second, report.final_loss,
              report.steps_taken);
  std::printf("inside region: %.3f before, %.3f after\n", summary.pre_feasible_fraction,
              summary.post_feasible_fraction);
  return 0;
}
