#include "relureduce/profile.hpp"

#include <cstdio>
#include <map>

#include "relureduce/errors.hpp"

namespace relureduce {

namespace {

// Input shape per node id (graph input for sources).
std::map<int, TensorShape> input_shapes(const NetworkGraph& g) {
  std::map<int, TensorShape> out_shapes, in_shapes;
  for (const auto& n : g.nodes) {
    in_shapes[n.id] = n.inputs.empty() ? g.input_shape : out_shapes.at(n.inputs[0]);
    out_shapes[n.id] = n.out_shape;
  }
  return in_shapes;
}

bool is_stage(const std::string& s) {
  return !s.empty() && s[0] == 'S' && s != "classifier";
}

CountReport count_metric(const NetworkGraph& g, Metric metric) {
  CountReport report;
  report.metric = metric;
  const auto ins = input_shapes(g);
  std::map<std::string, long long> by_stage;
  for (const auto& n : g.nodes) {
    long long c = 0;
    switch (metric) {
      case Metric::Relus: c = node_relus(n); break;
      case Metric::Flops: c = node_flops(n, ins.at(n.id)); break;
      case Metric::Params: c = node_params(n, ins.at(n.id)); break;
    }
    report.per_layer.push_back({n.id, kind_name(n.kind), n.stage, c});
    report.total += c;
    if (is_stage(n.stage)) by_stage[n.stage] += c;
  }
  for (const auto& [stage, count] : by_stage) report.per_stage.emplace_back(stage, count);
  return report;
}

}  // namespace

long long node_relus(const LayerNode& n) {
  return n.kind == LayerKind::ReLU ? n.out_shape.numel() : 0;
}

long long node_flops(const LayerNode& n, const TensorShape& in) {
  switch (n.kind) {
    case LayerKind::Conv2d:
      return n.out_shape.numel() * (in.c / n.groups) * n.kernel * n.kernel;
    case LayerKind::FullyConnected:
      return 1LL * in.c * n.out_features;
    case LayerKind::BatchNorm:
    case LayerKind::ReLU:
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
    case LayerKind::Add:
      return n.out_shape.numel();
    case LayerKind::Flatten:
      return 0;
  }
  return 0;
}

long long node_params(const LayerNode& n, const TensorShape& in) {
  switch (n.kind) {
    case LayerKind::Conv2d:
      return 1LL * n.out_channels * (in.c / n.groups) * n.kernel * n.kernel +
             (n.has_bias ? n.out_channels : 0);
    case LayerKind::BatchNorm:
      return 2LL * in.c;
    case LayerKind::FullyConnected:
      return 1LL * in.c * n.out_features + n.out_features;
    default:
      return 0;
  }
}

CountReport count_relus(const NetworkGraph& g) { return count_metric(g, Metric::Relus); }
CountReport count_flops(const NetworkGraph& g) { return count_metric(g, Metric::Flops); }
CountReport count_params(const NetworkGraph& g) { return count_metric(g, Metric::Params); }

std::vector<StageSummaryRow> stage_summary(const NetworkGraph& g) {
  const auto relus = count_relus(g);
  const auto flops = count_flops(g);
  const auto params = count_params(g);
  std::map<std::string, StageSummaryRow> rows;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const std::string& stage = g.nodes[i].stage;
    auto& row = rows[stage];
    row.stage = stage;
    row.relus += relus.per_layer[i].count;
    row.flops += flops.per_layer[i].count;
    row.params += params.per_layer[i].count;
  }

  std::vector<StageSummaryRow> out;
  auto take = [&](const std::string& stage) {
    if (rows.count(stage)) out.push_back(rows.at(stage));
  };
  take("conv1");
  std::vector<std::string> stage_labels;
  for (int k = 1; k <= 9; ++k) {
    const std::string label = "S" + std::to_string(k);
    if (rows.count(label)) stage_labels.push_back(label);
  }
  for (const auto& label : stage_labels) take(label);
  take("classifier");

  const bool classifier_relus = rows.count("classifier") && rows.at("classifier").relus > 0;
  if (classifier_relus) {
    for (const auto& label : stage_labels) {
      StageSummaryRow row = rows.at(label);
      row.stage = label + "+FC";
      row.relus += rows.at("classifier").relus;
      row.flops += rows.at("classifier").flops;
      row.params += rows.at("classifier").params;
      out.push_back(row);
    }
  }

  StageSummaryRow total{.stage = "total",
                        .relus = relus.total,
                        .flops = flops.total,
                        .params = params.total};
  out.push_back(total);
  return out;
}

DistributionReport distribution_report(const NetworkGraph& g) {
  const auto relus = count_relus(g);
  const auto flops = count_flops(g);
  const auto params = count_params(g);
  if (relus.total == 0) throw build_error("distribution_report: zero total for relus");
  if (flops.total == 0) throw build_error("distribution_report: zero total for flops");
  if (params.total == 0) throw build_error("distribution_report: zero total for params");
  DistributionReport report;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    DistributionRow row;
    row.node_id = g.nodes[i].id;
    row.kind = kind_name(g.nodes[i].kind);
    row.stage = g.nodes[i].stage;
    row.relu_pct = 100.0 * relus.per_layer[i].count / relus.total;
    row.flop_pct = 100.0 * flops.per_layer[i].count / flops.total;
    row.param_pct = 100.0 * params.per_layer[i].count / params.total;
    report.rows.push_back(row);
  }
  return report;
}

std::string counts_csv(const NetworkGraph& g) {
  const auto relus = count_relus(g);
  const auto flops = count_flops(g);
  const auto params = count_params(g);
  std::string out = "node_id,kind,stage,relus,flops,params\n";
  char line[256];
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    std::snprintf(line, sizeof(line), "%d,%s,%s,%lld,%lld,%lld\n", g.nodes[i].id,
                  kind_name(g.nodes[i].kind).c_str(), g.nodes[i].stage.c_str(),
                  relus.per_layer[i].count, flops.per_layer[i].count,
                  params.per_layer[i].count);
    out += line;
  }
  return out;
}

std::string stage_summary_csv(const NetworkGraph& g) {
  std::string out = "stage,relus,flops,params\n";
  char line[256];
  for (const auto& row : stage_summary(g)) {
    std::snprintf(line, sizeof(line), "%s,%lld,%lld,%lld\n", row.stage.c_str(), row.relus,
                  row.flops, row.params);
    out += line;
  }
  return out;
}

std::string distribution_csv(const DistributionReport& report) {
  std::string out = "node_id,kind,stage,relu_pct,flop_pct,param_pct\n";
  char line[256];
  for (const auto& row : report.rows) {
    std::snprintf(line, sizeof(line), "%d,%s,%s,%.6f,%.6f,%.6f\n", row.node_id,
                  row.kind.c_str(), row.stage.c_str(), row.relu_pct, row.flop_pct,
                  row.param_pct);
    out += line;
  }
  return out;
}

}  // namespace relureduce
