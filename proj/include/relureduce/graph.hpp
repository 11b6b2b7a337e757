#pragma once
#include <string>
#include <utility>
#include <vector>

namespace relureduce {

struct TensorShape {
  int c = 0, h = 0, w = 0;
  long long numel() const { return 1LL * c * h * w; }
  bool operator==(const TensorShape&) const = default;
};

enum class LayerKind {
  Conv2d,
  BatchNorm,
  ReLU,
  MaxPool,
  AvgPool,
  FullyConnected,
  Flatten,
  Add,
};

std::string kind_name(LayerKind k);
LayerKind kind_from_name(const std::string& s);

// Attributes are flat; only the fields relevant to `kind` carry meaning.
struct LayerNode {
  int id = -1;
  LayerKind kind = LayerKind::ReLU;
  std::vector<int> inputs;   // producer ids; empty means the node reads the graph input.
                             // Add nodes list [main path, shortcut].
  int out_channels = 0;      // conv2d
  int kernel = 0;            // conv2d + pools
  int stride = 1;            // conv2d + pools
  int padding = 0;           // conv2d
  int groups = 1;            // conv2d
  bool has_bias = false;     // conv2d (fully connected layers always carry bias)
  bool global_pool = false;  // pool window follows the incoming spatial size
  int out_features = 0;      // fully connected
  bool shortcut = false;     // lives on a residual projection path
  std::string stage;         // "conv1", "S1".."S5", "classifier", or "" for ad-hoc graphs
  TensorShape out_shape;     // filled in by infer_shapes
};

struct NetworkGraph {
  std::string name;
  std::string family;
  TensorShape input_shape;
  int num_classes = 0;
  int stem_relu = -1;  // ReLU that every cull drops regardless of stage; -1 if absent
  std::vector<LayerNode> nodes;  // topological order
  std::vector<std::string> provenance;

  bool has_node(int id) const;
  const LayerNode& node(int id) const;
  int output_id() const;  // the single sink
};

struct StageView {
  std::vector<int> conv1;  // empty when the stem is attributed to S1 (or absent)
  std::vector<std::pair<std::string, std::vector<int>>> stages;  // S1..SD in order
  std::vector<int> classifier;
  int depth() const { return static_cast<int>(stages.size()); }
};

// Returns human-readable violations; empty means the graph is well formed.
std::vector<std::string> validate(const NetworkGraph& g);

// Pure: returns a copy with every out_shape computed. Throws build_error on
// impossible geometry (groups not dividing channels, dimensions collapsing, ...).
NetworkGraph infer_shapes(const NetworkGraph& g);

// Partition into conv1 / S1..SD / classifier. Throws build_error unless the
// stage count D lies in [3, 5] and labels are contiguous.
StageView stage_view(const NetworkGraph& g);

// Remove residual Add nodes, rewiring consumers onto the main path. Shortcut
// subgraphs that become unreachable (projection convs) are dropped as well.
NetworkGraph strip_residuals(const NetworkGraph& g);

std::string graph_to_json(const NetworkGraph& g);
NetworkGraph graph_from_json(const std::string& text);

}  // namespace relureduce
