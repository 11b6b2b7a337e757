#pragma once
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "relureduce/builders.hpp"
#include "relureduce/criticality.hpp"
#include "relureduce/dataset.hpp"
#include "relureduce/engine.hpp"
#include "relureduce/passes.hpp"

namespace relureduce {

struct CandidatePoint {
  ReduceStep step;
  long long relu_count = 0;
  double accuracy = 0.0;          // percent
  double latency_est = 0.0;       // seconds
  double acc_per_kilorelu = 0.0;  // accuracy / (relu_count / 1000)
};

struct LatencyModel {
  double slope = 0.0;      // seconds per kilo-ReLU
  double intercept = 0.0;  // seconds; clamped to >= 0 after the fit
  double r_squared = 0.0;  // of the unclamped least-squares line
  std::vector<std::pair<double, double>> fit_points;  // (kilo-ReLU, seconds)
};

struct PipelineConfig {
  ArchitectureSpec arch;
  TrainConfig train;
  KDConfig kd;  // distillation hyper-parameters; probes and candidates always
                // distill from the Full-ReLU teacher regardless of kd.enabled
  double w = 0.07;
  // reshape rungs applied on top of cull+thin, in emission order
  std::vector<std::pair<double, double>> ladder = {{0.5, 1.0}, {1.0, 0.5}, {0.5, 0.5}};
  std::string parity = "keep-odd";
  // (kilo-ReLU, seconds) pairs; empty selects the bundled reference points
  std::vector<std::pair<double, double>> latency_points;
  // explicit cull sequence (least critical first) replacing the ranked
  // prefix walk; culling the most critical stage is refused
  std::vector<std::string> cull_override;
  // drop candidates whose training diverges instead of failing the run
  bool keep_going = false;
};

struct PipelineInputs {
  DatasetPair data;  // required unless both tables below are supplied
  // pre-measured probe accuracies; when set, probe training is skipped
  std::vector<StageMeasurement> measurements;
  // candidate_key -> accuracy percent; when set, candidate training is skipped
  std::map<std::string, double> accuracy_table;
};

struct PipelineResult {
  double teacher_accuracy = -1.0;  // percent; -1 when no training ran
  std::vector<StageMeasurement> measurements;
  CriticalityReport criticality;
  LatencyModel latency;
  std::vector<CandidatePoint> candidates;  // iteration-major, 5 per iteration
  std::vector<CandidatePoint> pareto;      // non-dominated subset
  std::vector<TrainResult> candidate_training;  // parallel to candidates; empty in table mode
};

// Measured garbled-circuit inference times for one network family, used as
// the default latency fit.
const std::vector<std::pair<double, double>>& default_latency_points();

// Ordinary least squares over (kilo-ReLU, seconds). Throws config_error
// unless two distinct x values exist. A flat exact fit reports r_squared 1.
LatencyModel fit_latency_model(const std::vector<std::pair<double, double>>& points);

// max(0, slope * kilo_relus + intercept)
double estimate_latency(const LatencyModel& m, double kilo_relus);

// accuracy / (relu_count / 1000); throws config_error on relu_count <= 0
double acc_per_kilorelu(double accuracy, long long relu_count);

// Points not dominated by any other (<= ReLUs and >= accuracy, one strict),
// sorted by descending ReLU count.
std::vector<CandidatePoint> pareto_front(const std::vector<CandidatePoint>& points);

// Canonical lookup key "S1+S4|S2+S3|0.5|1" (culled and thinned label-sorted).
std::string candidate_key(const ReduceStep& step);

// Rows `culled,thinned,alpha,rho,accuracy`; "NA"/"none"/empty mean no
// thinning or no scaling. Returns candidate_key -> accuracy.
std::map<std::string, double> accuracy_table_from_csv(const std::string& csv);

// Rows `culled,thinned,alpha,rho,relus,accuracy[,...]` (extra columns are
// ignored); latency and accuracy-per-kilo-ReLU are recomputed.
std::vector<CandidatePoint> candidates_from_csv(const std::string& csv,
                                                const LatencyModel& m);

// `culled,thinned,alpha,rho,relus,accuracy,latency_s,acc_per_kilorelu`,
// byte-identical across runs.
std::string pareto_csv(const std::vector<CandidatePoint>& points);

// Teacher -> probes -> criticality -> D-1 compounding cull iterations with 5
// variants each (cull; +thin; +thin per ladder rung). The most critical stage
// is never culled. With a fixed seed the result is fully reproducible.
PipelineResult run_deepreduce(const PipelineConfig& cfg, const PipelineInputs& inputs);

}  // namespace relureduce
