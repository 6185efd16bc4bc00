#pragma once

#include <string>
#include <vector>

#include "kale/config.hpp"

namespace kale {

// Stage names in canonical dependency order.
extern const std::vector<std::string> kPipelineStages;

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // outputs already valid for the recorded inputs
};

// Runs the requested stages (config key "stages", default: all) in
// dependency order under config "out_dir". Each stage is idempotent: it is
// skipped when its outputs exist and its inputs' digests match the run
// manifest. `force` reruns everything. A lock file serializes pipelines per
// output directory.
std::vector<StageOutcome> run_pipeline(const KeyValueConfig& config, bool force = false);

}  // namespace kale
