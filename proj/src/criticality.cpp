#include "relureduce/criticality.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "csv_internal.hpp"
#include "relureduce/errors.hpp"
#include "relureduce/passes.hpp"

namespace relureduce {

std::vector<NetworkGraph> probe_networks(const NetworkGraph& g) {
  const StageView sv = stage_view(g);
  std::vector<NetworkGraph> probes;
  probes.reserve(sv.stages.size());
  for (const auto& [label, ids] : sv.stages) {
    std::set<int> victims;
    for (const auto& n : g.nodes)
      if (n.kind == LayerKind::ReLU && n.stage != label) victims.insert(n.id);
    NetworkGraph p = drop_relus(g, victims);
    p.provenance.push_back("probe:" + label);
    probes.push_back(std::move(p));
  }
  return probes;
}

CriticalityReport criticality_scores(const std::vector<StageMeasurement>& measurements,
                                     double w) {
  if (measurements.size() < 2)
    throw config_error("criticality: need at least two stage measurements");
  double min_acc = 1e300;
  for (const auto& m : measurements) {
    if (m.acc_with_kd < 0.0)
      throw config_error("criticality: stage " + m.stage + " lacks a with-KD accuracy");
    if (m.acc_with_kd > 100.0)
      throw config_error("criticality: stage " + m.stage + " accuracy exceeds 100%");
    if (!(m.relu_kilo > 0.0))
      throw config_error("criticality: stage " + m.stage + " has a non-positive ReLU count");
    min_acc = std::min(min_acc, m.acc_with_kd);
  }

  CriticalityReport rep;
  rep.w = w;
  for (const auto& m : measurements)
    rep.scores.push_back(
        {m.stage, m.relu_kilo, (m.acc_with_kd - min_acc) / std::pow(m.relu_kilo, w)});

  std::vector<int> idx(rep.scores.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const auto& sa = rep.scores[a];
    const auto& sb = rep.scores[b];
    if (sa.score != sb.score) return sa.score < sb.score;
    if (sa.relu_kilo != sb.relu_kilo) return sa.relu_kilo > sb.relu_kilo;
    return sa.stage < sb.stage;
  });
  for (int i : idx) rep.order.push_back(rep.scores[i].stage);
  rep.most_critical = rep.order.back();
  return rep;
}

std::vector<std::string> rank_stages(const CriticalityReport& report) {
  return report.order;
}

std::vector<StageMeasurement> measurements_from_csv(const std::string& csv) {
  using csvi::parse_num;
  using csvi::split_fields;
  std::vector<StageMeasurement> out;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields[0] == "stage") continue;  // header
    if (fields.size() != 4)
      throw config_error("criticality: expected stage,relus,acc_wo_kd,acc_w_kd but got '" +
                         line + "'");
    StageMeasurement m;
    m.stage = fields[0];
    m.relu_kilo = parse_num(fields[1], line) / 1000.0;
    m.acc_without_kd = fields[2].empty() ? -1.0 : parse_num(fields[2], line);
    m.acc_with_kd = parse_num(fields[3], line);
    out.push_back(std::move(m));
  }
  return out;
}

std::string criticality_csv(const CriticalityReport& report) {
  std::string out = "rank,stage,kilo_relus,criticality\n";
  char buf[128];
  int rank = 1;
  for (const auto& stage : report.order) {
    const auto it = std::find_if(report.scores.begin(), report.scores.end(),
                                 [&](const StageScore& s) { return s.stage == stage; });
    std::snprintf(buf, sizeof buf, "%d,%s,%.3f,%.4f\n", rank++, stage.c_str(),
                  it->relu_kilo, it->score);
    out += buf;
  }
  return out;
}

}  // namespace relureduce
