#pragma once
#include <string>
#include <vector>

#include "relureduce/graph.hpp"

namespace relureduce {

struct StageMeasurement {
  std::string stage;
  double relu_kilo = 0.0;        // stage ReLU count in thousands
  double acc_without_kd = -1.0;  // percent; negative when not measured
  double acc_with_kd = -1.0;     // percent
};

struct StageScore {
  std::string stage;
  double relu_kilo = 0.0;
  double score = 0.0;
};

struct CriticalityReport {
  double w = 0.07;
  std::vector<StageScore> scores;  // measurement order
  std::vector<std::string> order;  // ascending score: least critical first
  std::string most_critical;       // order.back(); never culled
};

// One probe per stage: ReLUs everywhere else are silenced, including the stem
// and any classifier activations, so probe k's ReLU count equals stage k's.
std::vector<NetworkGraph> probe_networks(const NetworkGraph& g);

// score = (acc_with_kd - min over stages) / relu_kilo^w. Ties rank the stage
// with more ReLUs first (cheaper accuracy, so less critical).
CriticalityReport criticality_scores(const std::vector<StageMeasurement>& measurements,
                                     double w = 0.07);

// Least to most critical; convenience over report.order.
std::vector<std::string> rank_stages(const CriticalityReport& report);

// "stage,relus,acc_wo_kd,acc_w_kd" rows, raw ReLU counts (converted to
// thousands on ingest); acc_wo_kd may be empty. A header row is skipped.
std::vector<StageMeasurement> measurements_from_csv(const std::string& csv);

// Deterministic report emission, ranked least to most critical.
std::string criticality_csv(const CriticalityReport& report);

}  // namespace relureduce
