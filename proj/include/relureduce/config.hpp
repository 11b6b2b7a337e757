#pragma once
#include <string>
#include <utility>
#include <vector>

#include "relureduce/builders.hpp"
#include "relureduce/dataset.hpp"
#include "relureduce/engine.hpp"
#include "relureduce/pipeline.hpp"

namespace relureduce {

struct IoConfig {
  std::string out_dir = ".";
  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string measurements_csv;  // stage,relus,acc_wo_kd,acc_w_kd
  std::string accuracy_csv;      // culled,thinned,alpha,rho,accuracy
  std::string candidates_csv;    // culled,thinned,alpha,rho,relus,accuracy
  std::string latency_csv;       // kilo_relus,seconds
};

// One file drives every command: sections arch / train / kd / pipeline / io
// plus a top-level thread count. The dataset descriptor and reduction knobs
// live inside "pipeline". Unknown keys anywhere are rejected.
struct RunConfig {
  ArchitectureSpec arch;
  TrainConfig train;
  KDConfig kd;
  DataConfig data;
  double w = 0.07;
  std::vector<std::pair<double, double>> ladder = {{0.5, 1.0}, {1.0, 0.5}, {0.5, 0.5}};
  std::string parity = "keep-odd";
  std::vector<std::pair<double, double>> latency_points;  // empty -> bundled
  std::vector<std::string> cull_override;
  IoConfig io;
  int threads = 1;
};

// Missing sections and keys fall back to the defaults above; type errors and
// unknown keys throw config_error.
RunConfig config_from_json(const std::string& text);

// Canonical emission (sorted keys, two-space indent, trailing newline);
// config_from_json(config_to_json(c)) re-emits byte-identically.
std::string config_to_json(const RunConfig& cfg);

PipelineConfig pipeline_config(const RunConfig& cfg);

}  // namespace relureduce
