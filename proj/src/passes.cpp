#include "relureduce/passes.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "relureduce/builders.hpp"
#include "relureduce/errors.hpp"

namespace relureduce {

namespace {

std::set<std::string> known_stages(const NetworkGraph& g) {
  std::set<std::string> labels;
  for (const auto& [label, ids] : stage_view(g).stages) labels.insert(label);
  return labels;
}

void check_stage_labels(const NetworkGraph& g, const std::vector<std::string>& stages,
                        const char* who) {
  const auto known = known_stages(g);
  for (const auto& s : stages)
    if (!known.count(s))
      throw build_error(std::string(who) + ": unknown stage label '" + s + "'");
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

NetworkGraph drop_relus(const NetworkGraph& g, const std::set<int>& victims) {
  std::map<int, int> redirect;
  for (const auto& n : g.nodes)
    if (victims.count(n.id)) redirect[n.id] = n.inputs.at(0);
  auto resolve = [&](int id) {
    while (redirect.count(id)) id = redirect.at(id);
    return id;
  };
  NetworkGraph out = g;
  out.nodes.clear();
  for (const auto& n : g.nodes) {
    if (victims.count(n.id)) continue;
    LayerNode copy = n;
    for (int& in : copy.inputs) in = resolve(in);
    out.nodes.push_back(std::move(copy));
  }
  if (victims.count(out.stem_relu)) out.stem_relu = -1;
  return out;
}

NetworkGraph cull(const NetworkGraph& g, const std::vector<std::string>& stages) {
  check_stage_labels(g, stages, "cull");
  const std::set<std::string> targets(stages.begin(), stages.end());
  std::set<int> victims;
  for (const auto& n : g.nodes) {
    if (n.kind != LayerKind::ReLU) continue;
    if (targets.count(n.stage) || n.id == g.stem_relu) victims.insert(n.id);
  }
  NetworkGraph out = drop_relus(g, victims);
  out.provenance.push_back("cull:" + (stages.empty() ? "none" : join(stages, "+")));
  return out;
}

NetworkGraph thin(const NetworkGraph& g, const std::vector<std::string>& stages,
                  const std::string& parity) {
  check_stage_labels(g, stages, "thin");
  if (parity != "keep-odd" && parity != "keep-even")
    throw build_error("thin: parity must be keep-odd or keep-even, got '" + parity + "'");
  const int keep_rem = parity == "keep-odd" ? 1 : 0;

  std::set<int> victims;
  for (const auto& stage : std::set<std::string>(stages.begin(), stages.end())) {
    std::vector<int> relus;  // topological order within the stage
    for (const auto& n : g.nodes)
      if (n.kind == LayerKind::ReLU && n.stage == stage) relus.push_back(n.id);
    const int n = static_cast<int>(relus.size());
    for (int i = 0; i < n; ++i) {
      const int pos_from_end = n - i;  // 1-based, anchored at the stage's last ReLU
      if (pos_from_end % 2 != keep_rem) victims.insert(relus[i]);
    }
  }
  NetworkGraph out = drop_relus(g, victims);
  out.provenance.push_back("thin:" + (stages.empty() ? "none" : join(stages, "+")) +
                           ";" + parity);
  return out;
}

NetworkGraph reshape(const NetworkGraph& g, double alpha, double rho) {
  if (alpha <= 0.0 || alpha > 1.0 || rho <= 0.0 || rho > 1.0)
    throw build_error("reshape: alpha and rho must lie in (0, 1]");
  NetworkGraph out = g;
  out.input_shape.h = scale_dim(g.input_shape.h, rho);
  out.input_shape.w = scale_dim(g.input_shape.w, rho);
  const int sink = g.output_id();
  for (auto& n : out.nodes) {
    if (n.kind == LayerKind::Conv2d) {
      n.out_channels = scale_channels(n.out_channels, alpha);
      if (n.groups > 1) n.groups = scale_channels(n.groups, alpha);
    } else if (n.kind == LayerKind::FullyConnected && n.id != sink) {
      n.out_features = scale_channels(n.out_features, alpha);
    }
  }
  char tag[64];
  std::snprintf(tag, sizeof(tag), "reshape:alpha=%g;rho=%g", alpha, rho);
  out.provenance.push_back(tag);
  return infer_shapes(out);  // throws if a dimension collapses
}

NetworkGraph apply_reduce_step(const NetworkGraph& g, const ReduceStep& step) {
  NetworkGraph out = cull(g, step.culled);
  out = thin(out, step.thinned, step.parity);
  if (step.alpha != 1.0 || step.rho != 1.0) out = reshape(out, step.alpha, step.rho);
  return out;
}

std::string step_label(const ReduceStep& step) {
  std::string label = "cull " + (step.culled.empty() ? "none" : join(step.culled, "+"));
  label += "; thin " + (step.thinned.empty() ? "none" : join(step.thinned, "+"));
  if (step.alpha != 1.0 || step.rho != 1.0) {
    char tail[48];
    std::snprintf(tail, sizeof(tail), "; alpha=%g rho=%g", step.alpha, step.rho);
    label += tail;
  }
  return label;
}

}  // namespace relureduce
