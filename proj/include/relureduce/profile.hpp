#pragma once
#include <string>
#include <utility>
#include <vector>

#include "relureduce/graph.hpp"

namespace relureduce {

enum class Metric { Relus, Flops, Params };

struct CountRow {
  int node_id = -1;
  std::string kind;
  std::string stage;
  long long count = 0;
};

struct CountReport {
  Metric metric = Metric::Relus;
  std::vector<CountRow> per_layer;
  // S1..SD only; conv1/classifier counts are reported via stage_summary.
  std::vector<std::pair<std::string, long long>> per_stage;
  long long total = 0;
};

// Per-node contributions. FLOPs follow the multiply-accumulate convention:
// one MAC per output element per tap; BN/ReLU/pool/add count their output
// elements; flatten is free.
long long node_relus(const LayerNode& n);
long long node_flops(const LayerNode& n, const TensorShape& in);
long long node_params(const LayerNode& n, const TensorShape& in);

CountReport count_relus(const NetworkGraph& g);
CountReport count_flops(const NetworkGraph& g);
CountReport count_params(const NetworkGraph& g);

struct StageSummaryRow {
  std::string stage;  // conv1, S1..SD, classifier, Sk+FC, total
  long long relus = 0, flops = 0, params = 0;
};
// Partition totals plus, when the classifier holds ReLUs, combined "Sk+FC"
// rows (stage plus classifier activations, for measurements taken with the
// classifier left active).
std::vector<StageSummaryRow> stage_summary(const NetworkGraph& g);

struct DistributionRow {
  int node_id = -1;
  std::string kind;
  std::string stage;
  double relu_pct = 0.0, flop_pct = 0.0, param_pct = 0.0;
};
struct DistributionReport {
  std::vector<DistributionRow> rows;
};
// Throws build_error when a metric totals zero.
DistributionReport distribution_report(const NetworkGraph& g);

// Deterministic CSV emission (byte-identical across runs).
std::string counts_csv(const NetworkGraph& g);
std::string stage_summary_csv(const NetworkGraph& g);
std::string distribution_csv(const DistributionReport& report);

}  // namespace relureduce
