#include "relureduce/builders.hpp"

#include <cmath>

#include "relureduce/errors.hpp"

namespace relureduce {

int scale_channels(int c, double alpha) {
  return std::max(1, static_cast<int>(std::floor(alpha * c + 0.5)));
}

int scale_dim(int d, double rho) {
  return std::max(1, static_cast<int>(std::floor(rho * d)));
}

namespace {

struct graph_builder {
  NetworkGraph g;
  int next = 0;

  int put(LayerNode n) {
    n.id = next++;
    g.nodes.push_back(std::move(n));
    return next - 1;
  }
  int conv(int in, int out_ch, int k, int s, int p, int grp, const std::string& stage,
           bool shortcut = false) {
    LayerNode n;
    n.kind = LayerKind::Conv2d;
    if (in >= 0) n.inputs = {in};
    n.out_channels = out_ch;
    n.kernel = k;
    n.stride = s;
    n.padding = p;
    n.groups = grp;
    n.stage = stage;
    n.shortcut = shortcut;
    return put(std::move(n));
  }
  int bn(int in, const std::string& stage, bool shortcut = false) {
    LayerNode n;
    n.kind = LayerKind::BatchNorm;
    n.inputs = {in};
    n.stage = stage;
    n.shortcut = shortcut;
    return put(std::move(n));
  }
  int relu(int in, const std::string& stage) {
    LayerNode n;
    n.kind = LayerKind::ReLU;
    n.inputs = {in};
    n.stage = stage;
    return put(std::move(n));
  }
  int maxpool(int in, int k, int s, const std::string& stage) {
    LayerNode n;
    n.kind = LayerKind::MaxPool;
    n.inputs = {in};
    n.kernel = k;
    n.stride = s;
    n.stage = stage;
    return put(std::move(n));
  }
  int global_avgpool(int in, const std::string& stage) {
    LayerNode n;
    n.kind = LayerKind::AvgPool;
    n.inputs = {in};
    n.global_pool = true;
    n.stage = stage;
    return put(std::move(n));
  }
  int flatten(int in, const std::string& stage) {
    LayerNode n;
    n.kind = LayerKind::Flatten;
    n.inputs = {in};
    n.stage = stage;
    return put(std::move(n));
  }
  int fc(int in, int out, const std::string& stage) {
    LayerNode n;
    n.kind = LayerKind::FullyConnected;
    n.inputs = {in};
    n.out_features = out;
    n.has_bias = true;
    n.stage = stage;
    return put(std::move(n));
  }
  int add(int main, int shortcut, const std::string& stage) {
    LayerNode n;
    n.kind = LayerKind::Add;
    n.inputs = {main, shortcut};
    n.stage = stage;
    return put(std::move(n));
  }
};

struct resnet_plan {
  std::vector<int> blocks;    // per stage
  std::vector<int> channels;  // per stage
  int stem_channels = 64;
  bool stem_in_s1 = false;    // attribute the stem to S1 instead of conv1
  bool single_conv = false;   // stages are single conv-bn-relu blocks, no residual
  bool s1_single_conv = false;
};

NetworkGraph build_resnet(const ArchitectureSpec& spec, const resnet_plan& plan) {
  graph_builder b;
  b.g.input_shape = {spec.channels, scale_dim(spec.input, spec.rho),
                     scale_dim(spec.input, spec.rho)};
  b.g.num_classes = spec.classes;

  const int stem_ch = scale_channels(plan.stem_channels, spec.alpha);
  const std::string stem_stage = plan.stem_in_s1 ? "S1" : "conv1";
  int x = b.conv(-1, stem_ch, 3, 1, 1, 1, stem_stage);
  x = b.bn(x, stem_stage);
  x = b.relu(x, stem_stage);
  b.g.stem_relu = x;

  int in_ch = stem_ch;
  for (size_t s = 0; s < plan.blocks.size(); ++s) {
    const std::string stage = "S" + std::to_string(s + 1);
    const int ch = scale_channels(plan.channels[s], spec.alpha);
    for (int j = 0; j < plan.blocks[s]; ++j) {
      const int stride = (j == 0 && s > 0) ? 2 : 1;
      const bool plain =
          plan.single_conv || (plan.s1_single_conv && s == 0);
      if (plain) {
        x = b.conv(x, ch, 3, stride, 1, 1, stage);
        x = b.bn(x, stage);
        x = b.relu(x, stage);
      } else {
        const int block_in = x;
        int y = b.conv(x, ch, 3, stride, 1, 1, stage);
        y = b.bn(y, stage);
        y = b.relu(y, stage);
        y = b.conv(y, ch, 3, 1, 1, 1, stage);
        y = b.bn(y, stage);
        int sc = block_in;
        if (stride != 1 || in_ch != ch) {
          sc = b.conv(block_in, ch, 1, stride, 0, 1, stage, /*shortcut=*/true);
          sc = b.bn(sc, stage, /*shortcut=*/true);
        }
        x = b.add(y, sc, stage);
        x = b.relu(x, stage);
      }
      in_ch = ch;
    }
  }

  x = b.global_avgpool(x, "classifier");
  x = b.flatten(x, "classifier");
  b.fc(x, spec.classes, "classifier");
  return std::move(b.g);
}

NetworkGraph build_vgg16(const ArchitectureSpec& spec) {
  graph_builder b;
  b.g.input_shape = {spec.channels, scale_dim(spec.input, spec.rho),
                     scale_dim(spec.input, spec.rho)};
  b.g.num_classes = spec.classes;

  const std::vector<int> convs_per_stage = {2, 2, 3, 3, 3};
  const std::vector<int> channels = {64, 128, 256, 512, 512};
  int x = -1;
  for (size_t s = 0; s < convs_per_stage.size(); ++s) {
    const std::string stage = "S" + std::to_string(s + 1);
    const int ch = scale_channels(channels[s], spec.alpha);
    for (int j = 0; j < convs_per_stage[s]; ++j) {
      x = b.conv(x, ch, 3, 1, 1, 1, stage);
      x = b.bn(x, stage);
      x = b.relu(x, stage);
    }
    x = b.maxpool(x, 2, 2, stage);
  }
  x = b.flatten(x, "classifier");
  const int hidden = scale_channels(4096, spec.alpha);
  x = b.fc(x, hidden, "classifier");
  x = b.relu(x, "classifier");
  x = b.fc(x, hidden, "classifier");
  x = b.relu(x, "classifier");
  b.fc(x, spec.classes, "classifier");
  return std::move(b.g);
}

NetworkGraph build_mobilenetv1(const ArchitectureSpec& spec) {
  graph_builder b;
  b.g.input_shape = {spec.channels, scale_dim(spec.input, spec.rho),
                     scale_dim(spec.input, spec.rho)};
  b.g.num_classes = spec.classes;

  // (pointwise out channels, depthwise stride); the stem lives in S1.
  const std::vector<std::pair<int, int>> blocks = {
      {64, 1},  {128, 2}, {128, 1}, {256, 2},  {256, 1}, {512, 2}, {512, 1},
      {512, 1}, {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1}};

  int stage_no = 1;
  std::string stage = "S1";
  int in_ch = scale_channels(32, spec.alpha);
  int x = b.conv(-1, in_ch, 3, 1, 1, 1, stage);
  x = b.bn(x, stage);
  x = b.relu(x, stage);
  b.g.stem_relu = x;

  for (const auto& [out, stride] : blocks) {
    if (stride == 2) stage = "S" + std::to_string(++stage_no);
    const int out_ch = scale_channels(out, spec.alpha);
    x = b.conv(x, in_ch, 3, stride, 1, /*groups=*/in_ch, stage);
    x = b.bn(x, stage);
    x = b.relu(x, stage);
    x = b.conv(x, out_ch, 1, 1, 0, 1, stage);
    x = b.bn(x, stage);
    x = b.relu(x, stage);
    in_ch = out_ch;
  }

  x = b.global_avgpool(x, "classifier");
  x = b.flatten(x, "classifier");
  b.fc(x, spec.classes, "classifier");
  return std::move(b.g);
}

}  // namespace

NetworkGraph build_architecture(const ArchitectureSpec& spec) {
  if (spec.alpha <= 0.0 || spec.alpha > 1.0 || spec.rho <= 0.0 || spec.rho > 1.0)
    throw build_error("build_architecture: alpha and rho must lie in (0, 1]");
  if (spec.input < 1 || spec.channels < 1 || spec.classes < 2)
    throw build_error("build_architecture: bad input/channels/classes");

  NetworkGraph g;
  if (spec.family == "resnet18")
    g = build_resnet(spec, {{2, 2, 2, 2}, {64, 128, 256, 512}});
  else if (spec.family == "resnet34")
    g = build_resnet(spec, {{3, 4, 6, 3}, {64, 128, 256, 512}});
  else if (spec.family == "resnet10")
    g = build_resnet(spec, {{1, 1, 1, 1}, {64, 128, 256, 512}});
  else if (spec.family == "resnet9")
    g = build_resnet(spec, {.blocks = {1, 1, 1, 1},
                            .channels = {64, 128, 256, 512},
                            .s1_single_conv = true});
  else if (spec.family == "resnet6")
    g = build_resnet(spec, {.blocks = {1, 1, 1, 1},
                            .channels = {64, 128, 256, 512},
                            .single_conv = true});
  else if (spec.family == "resnet56")
    g = build_resnet(spec, {.blocks = {9, 9, 9},
                            .channels = {16, 32, 64},
                            .stem_channels = 16,
                            .stem_in_s1 = true});
  else if (spec.family == "vgg16")
    g = build_vgg16(spec);
  else if (spec.family == "mobilenetv1")
    g = build_mobilenetv1(spec);
  else
    throw build_error("build_architecture: unsupported family '" + spec.family + "'");

  g.family = spec.family;
  g.name = spec.family + "@" + std::to_string(spec.input);
  std::string origin = "build:" + g.name;
  if (spec.alpha != 1.0 || spec.rho != 1.0)
    origin += ";alpha=" + std::to_string(spec.alpha) + ";rho=" + std::to_string(spec.rho);
  g.provenance.push_back(origin);

  g = infer_shapes(g);
  if (spec.strip_residuals) g = infer_shapes(strip_residuals(g));
  const auto issues = validate(g);
  if (!issues.empty())
    throw build_error("build_architecture: " + g.name + ": " + issues.front());
  return g;
}

}  // namespace relureduce
