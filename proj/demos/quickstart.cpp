// Runs the full pipeline on the synthetic suite and prints per-phase accuracy.

#include <cstdio>

#include "real/protocol.hpp"

int main() {
  real::PipelineConfig cfg;
  cfg.phases = 5;
  const real::Dataset data = real::make_synthetic(cfg.synthetic);
  const real::PhasePlan plan = real::make_phase_plan(data.train.num_classes, cfg.phases, cfg.seeds.plan);
  const real::CilRunReport rep = real::run_cil(data, plan, cfg);
  for (std::size_t k = 0; k < rep.accuracies.size(); ++k)
    std::printf("phase %zu  accuracy %.4f\n", k, rep.accuracies[k]);
  std::printf("average %.4f  last %.4f\n", rep.summary.average, rep.summary.last);
  std::printf("base split %.4f  incremental split %.4f\n", rep.split.base, rep.split.incremental);
}
