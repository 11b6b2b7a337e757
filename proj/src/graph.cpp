#include "relureduce/graph.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "json.hpp"
#include "relureduce/errors.hpp"

namespace relureduce {

namespace {

const std::map<LayerKind, std::string>& kind_names() {
  static const std::map<LayerKind, std::string> names = {
      {LayerKind::Conv2d, "conv2d"},
      {LayerKind::BatchNorm, "batchnorm"},
      {LayerKind::ReLU, "relu"},
      {LayerKind::MaxPool, "maxpool"},
      {LayerKind::AvgPool, "avgpool"},
      {LayerKind::FullyConnected, "fully_connected"},
      {LayerKind::Flatten, "flatten"},
      {LayerKind::Add, "add"},
  };
  return names;
}

bool is_stage_label(const std::string& s) {
  if (s.size() < 2 || s[0] != 'S') return false;
  for (size_t i = 1; i < s.size(); ++i)
    if (!isdigit(static_cast<unsigned char>(s[i]))) return false;
  return s[1] != '0';
}

int stage_index(const std::string& s) { return std::stoi(s.substr(1)); }

}  // namespace

std::string kind_name(LayerKind k) { return kind_names().at(k); }

LayerKind kind_from_name(const std::string& s) {
  for (const auto& [k, name] : kind_names())
    if (name == s) return k;
  throw config_error("kind_from_name: unknown layer kind '" + s + "'");
}

bool NetworkGraph::has_node(int id) const {
  return std::any_of(nodes.begin(), nodes.end(),
                     [&](const LayerNode& n) { return n.id == id; });
}

const LayerNode& NetworkGraph::node(int id) const {
  for (const auto& n : nodes)
    if (n.id == id) return n;
  throw build_error("NetworkGraph::node: no node with id " + std::to_string(id));
}

int NetworkGraph::output_id() const {
  std::set<int> consumed;
  for (const auto& n : nodes)
    for (int in : n.inputs) consumed.insert(in);
  int sink = -1;
  for (const auto& n : nodes) {
    if (consumed.count(n.id)) continue;
    if (sink != -1) throw build_error("NetworkGraph::output_id: graph has multiple sinks");
    sink = n.id;
  }
  if (sink == -1) throw build_error("NetworkGraph::output_id: graph has no sink");
  return sink;
}

std::vector<std::string> validate(const NetworkGraph& g) {
  std::vector<std::string> issues;
  if (g.nodes.empty()) {
    issues.push_back("graph has no nodes");
    return issues;
  }
  std::set<int> seen;
  for (const auto& n : g.nodes) {
    const std::string tag = kind_name(n.kind) + " node " + std::to_string(n.id);
    if (n.id < 0) issues.push_back(tag + ": negative id");
    if (!seen.insert(n.id).second) issues.push_back(tag + ": duplicate id");
    for (int in : n.inputs)
      if (!seen.count(in))
        issues.push_back(tag + ": input " + std::to_string(in) +
                         " is not an earlier node (list must be topological)");
    const size_t arity = n.inputs.size();
    if (n.kind == LayerKind::Add) {
      if (arity != 2) issues.push_back(tag + ": add expects exactly 2 inputs");
    } else if (arity > 1) {
      issues.push_back(tag + ": expects at most 1 input");
    }
    switch (n.kind) {
      case LayerKind::Conv2d:
        if (n.out_channels < 1) issues.push_back(tag + ": out_channels must be >= 1");
        if (n.kernel < 1) issues.push_back(tag + ": kernel must be >= 1");
        if (n.stride < 1) issues.push_back(tag + ": stride must be >= 1");
        if (n.padding < 0) issues.push_back(tag + ": padding must be >= 0");
        if (n.groups < 1) issues.push_back(tag + ": groups must be >= 1");
        if (n.groups >= 1 && n.out_channels % n.groups != 0)
          issues.push_back(tag + ": groups must divide out_channels");
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        if (!n.global_pool && n.kernel < 1) issues.push_back(tag + ": kernel must be >= 1");
        if (n.stride < 1) issues.push_back(tag + ": stride must be >= 1");
        break;
      case LayerKind::FullyConnected:
        if (n.out_features < 1) issues.push_back(tag + ": out_features must be >= 1");
        break;
      default:
        break;
    }
    if (!n.stage.empty() && n.stage != "conv1" && n.stage != "classifier" &&
        !is_stage_label(n.stage))
      issues.push_back(tag + ": malformed stage label '" + n.stage + "'");
  }

  // Exactly one sink.
  std::set<int> consumed;
  for (const auto& n : g.nodes)
    for (int in : n.inputs) consumed.insert(in);
  int sinks = 0;
  for (const auto& n : g.nodes)
    if (!consumed.count(n.id)) ++sinks;
  if (sinks != 1)
    issues.push_back("graph must have exactly one output node, found " +
                     std::to_string(sinks));

  // Stage labels, when present, must form a contiguous S1..SD with D in [3, 5].
  std::set<int> stage_ids;
  for (const auto& n : g.nodes)
    if (is_stage_label(n.stage)) stage_ids.insert(stage_index(n.stage));
  if (!stage_ids.empty()) {
    const int depth = *stage_ids.rbegin();
    if (static_cast<int>(stage_ids.size()) != depth || *stage_ids.begin() != 1)
      issues.push_back("stage labels are not contiguous from S1");
    else if (depth < 3 || depth > 5)
      issues.push_back("stage count " + std::to_string(depth) + " outside [3, 5]");
  }
  return issues;
}

NetworkGraph infer_shapes(const NetworkGraph& g) {
  NetworkGraph out = g;
  std::map<int, TensorShape> shapes;
  if (out.input_shape.c < 1 || out.input_shape.h < 1 || out.input_shape.w < 1)
    throw build_error("infer_shapes: input shape has non-positive dimensions");
  for (auto& n : out.nodes) {
    const std::string tag = kind_name(n.kind) + " node " + std::to_string(n.id);
    auto in_shape = [&](int slot) -> const TensorShape& {
      if (static_cast<int>(n.inputs.size()) <= slot)
        throw build_error("infer_shapes: " + tag + " is missing input " + std::to_string(slot));
      return shapes.at(n.inputs[slot]);
    };
    const TensorShape src = n.inputs.empty() ? out.input_shape : in_shape(0);
    TensorShape r;
    switch (n.kind) {
      case LayerKind::Conv2d: {
        if (src.c % n.groups != 0)
          throw build_error("infer_shapes: " + tag + ": groups " + std::to_string(n.groups) +
                            " do not divide input channels " + std::to_string(src.c));
        if (n.out_channels % n.groups != 0)
          throw build_error("infer_shapes: " + tag + ": groups do not divide out_channels");
        const int eh = src.h + 2 * n.padding - n.kernel;
        const int ew = src.w + 2 * n.padding - n.kernel;
        if (eh < 0 || ew < 0)
          throw build_error("infer_shapes: " + tag + ": input too small for kernel " +
                            std::to_string(n.kernel));
        r = {n.out_channels, eh / n.stride + 1, ew / n.stride + 1};
        break;
      }
      case LayerKind::BatchNorm:
      case LayerKind::ReLU:
        r = src;
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        const int kh = n.global_pool ? src.h : n.kernel;
        const int kw = n.global_pool ? src.w : n.kernel;
        if (kh > src.h || kw > src.w)
          throw build_error("infer_shapes: " + tag + ": input too small for pooling window");
        r = {src.c, (src.h - kh) / n.stride + 1, (src.w - kw) / n.stride + 1};
        break;
      }
      case LayerKind::FullyConnected:
        if (src.h != 1 || src.w != 1)
          throw build_error("infer_shapes: " + tag + ": expects flattened input, got " +
                            std::to_string(src.h) + "x" + std::to_string(src.w));
        r = {n.out_features, 1, 1};
        break;
      case LayerKind::Flatten:
        r = {static_cast<int>(src.numel()), 1, 1};
        break;
      case LayerKind::Add: {
        const TensorShape& a = in_shape(0);
        const TensorShape& b = in_shape(1);
        if (!(a == b))
          throw build_error("infer_shapes: " + tag + ": operand shapes differ");
        r = a;
        break;
      }
    }
    if (r.c < 1 || r.h < 1 || r.w < 1)
      throw build_error("infer_shapes: " + tag + ": a dimension collapsed below 1");
    n.out_shape = r;
    shapes[n.id] = r;
  }
  return out;
}

StageView stage_view(const NetworkGraph& g) {
  StageView view;
  std::map<int, std::vector<int>> staged;
  for (const auto& n : g.nodes) {
    if (n.stage == "conv1")
      view.conv1.push_back(n.id);
    else if (n.stage == "classifier")
      view.classifier.push_back(n.id);
    else if (is_stage_label(n.stage))
      staged[stage_index(n.stage)].push_back(n.id);
    else
      throw build_error("stage_view: node " + std::to_string(n.id) +
                        " has no stage assignment");
  }
  if (staged.empty()) throw build_error("stage_view: graph has no stages");
  const int depth = staged.rbegin()->first;
  if (static_cast<int>(staged.size()) != depth || staged.begin()->first != 1)
    throw build_error("stage_view: stage labels are not contiguous from S1");
  if (depth < 3 || depth > 5)
    throw build_error("stage_view: stage count " + std::to_string(depth) +
                      " outside [3, 5]");
  for (int k = 1; k <= depth; ++k)
    view.stages.emplace_back("S" + std::to_string(k), staged.at(k));

  // Stages must appear in order of non-increasing spatial resolution.
  int prev_h = 1 << 30;
  for (const auto& [label, ids] : view.stages) {
    const int h = g.node(ids.front()).out_shape.h;
    if (h > 0 && h > prev_h)
      throw build_error("stage_view: " + label + " increases spatial resolution");
    if (h > 0) prev_h = h;
  }
  return view;
}

NetworkGraph strip_residuals(const NetworkGraph& g) {
  // Resolve every Add to its main-path producer, chasing chains of Adds.
  std::map<int, int> redirect;
  for (const auto& n : g.nodes)
    if (n.kind == LayerKind::Add) redirect[n.id] = n.inputs.at(0);
  auto resolve = [&](int id) {
    while (redirect.count(id)) id = redirect.at(id);
    return id;
  };

  NetworkGraph out = g;
  out.nodes.clear();
  for (const auto& n : g.nodes) {
    if (n.kind == LayerKind::Add) continue;
    LayerNode copy = n;
    for (int& in : copy.inputs) in = resolve(in);
    out.nodes.push_back(std::move(copy));
  }

  // Drop nodes no longer reachable from the sink (dead shortcut projections).
  const int sink = resolve(g.output_id());
  std::set<int> live{sink};
  for (auto it = out.nodes.rbegin(); it != out.nodes.rend(); ++it)
    if (live.count(it->id))
      for (int in : it->inputs) live.insert(in);
  std::erase_if(out.nodes, [&](const LayerNode& n) { return !live.count(n.id); });
  out.provenance.push_back("strip_residuals");
  return out;
}

std::string graph_to_json(const NetworkGraph& g) {
  nlohmann::json j;
  j["name"] = g.name;
  j["family"] = g.family;
  j["input_shape"] = {{"c", g.input_shape.c}, {"h", g.input_shape.h}, {"w", g.input_shape.w}};
  j["num_classes"] = g.num_classes;
  j["stem_relu"] = g.stem_relu;
  j["provenance"] = g.provenance;
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    nlohmann::json nj;
    nj["id"] = n.id;
    nj["kind"] = kind_name(n.kind);
    nj["inputs"] = n.inputs;
    nj["out_channels"] = n.out_channels;
    nj["kernel"] = n.kernel;
    nj["stride"] = n.stride;
    nj["padding"] = n.padding;
    nj["groups"] = n.groups;
    nj["has_bias"] = n.has_bias;
    nj["global_pool"] = n.global_pool;
    nj["out_features"] = n.out_features;
    nj["shortcut"] = n.shortcut;
    nj["stage"] = n.stage;
    nj["out_shape"] = {{"c", n.out_shape.c}, {"h", n.out_shape.h}, {"w", n.out_shape.w}};
    nodes.push_back(std::move(nj));
  }
  j["nodes"] = std::move(nodes);
  return j.dump();
}

NetworkGraph graph_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    NetworkGraph g;
    g.name = j.at("name").get<std::string>();
    g.family = j.at("family").get<std::string>();
    g.input_shape = {j.at("input_shape").at("c").get<int>(),
                     j.at("input_shape").at("h").get<int>(),
                     j.at("input_shape").at("w").get<int>()};
    g.num_classes = j.at("num_classes").get<int>();
    g.stem_relu = j.at("stem_relu").get<int>();
    g.provenance = j.at("provenance").get<std::vector<std::string>>();
    for (const auto& nj : j.at("nodes")) {
      LayerNode n;
      n.id = nj.at("id").get<int>();
      n.kind = kind_from_name(nj.at("kind").get<std::string>());
      n.inputs = nj.at("inputs").get<std::vector<int>>();
      n.out_channels = nj.at("out_channels").get<int>();
      n.kernel = nj.at("kernel").get<int>();
      n.stride = nj.at("stride").get<int>();
      n.padding = nj.at("padding").get<int>();
      n.groups = nj.at("groups").get<int>();
      n.has_bias = nj.at("has_bias").get<bool>();
      n.global_pool = nj.at("global_pool").get<bool>();
      n.out_features = nj.at("out_features").get<int>();
      n.shortcut = nj.at("shortcut").get<bool>();
      n.stage = nj.at("stage").get<std::string>();
      n.out_shape = {nj.at("out_shape").at("c").get<int>(),
                     nj.at("out_shape").at("h").get<int>(),
                     nj.at("out_shape").at("w").get<int>()};
      g.nodes.push_back(std::move(n));
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("graph_from_json: ") + e.what());
  }
}

}  // namespace relureduce
