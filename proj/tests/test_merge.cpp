#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "relureduce/builders.hpp"
#include "relureduce/checkpoint.hpp"
#include "relureduce/engine.hpp"
#include "relureduce/errors.hpp"
#include "relureduce/merge.hpp"
#include "relureduce/passes.hpp"
#include "relureduce/profile.hpp"

using namespace relureduce;

namespace {

LayerNode gap_node(int id, int input) {
  return {.id = id, .kind = LayerKind::AvgPool, .inputs = {input}, .stride = 1,
          .global_pool = true};
}
LayerNode flatten_node(int id, int input) {
  return {.id = id, .kind = LayerKind::Flatten, .inputs = {input}};
}
LayerNode fc_node(int id, int input, int out) {
  return {.id = id, .kind = LayerKind::FullyConnected, .inputs = {input},
          .has_bias = true, .out_features = out};
}

// conv -> bn -> relu -> gap -> flatten -> fc
NetworkGraph conv_bn_net() {
  NetworkGraph g;
  g.input_shape = {3, 8, 8};
  g.num_classes = 2;
  g.nodes = {
      {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 4, .kernel = 3, .stride = 1,
       .padding = 1},
      {.id = 1, .kind = LayerKind::BatchNorm, .inputs = {0}},
      {.id = 2, .kind = LayerKind::ReLU, .inputs = {1}},
      gap_node(3, 2),
      flatten_node(4, 3),
      fc_node(5, 4, 2),
  };
  return infer_shapes(g);
}

// Runs one training-mode forward so running statistics move off init values.
ModelF warmed_model(const NetworkGraph& g, uint64_t seed) {
  auto m = make_model<float>(g, seed);
  rng_stream r(seed + 1);
  TensorF x({4, g.input_shape.c, g.input_shape.h, g.input_shape.w});
  for (auto& v : x.data) v = static_cast<float>(r.normal());
  Workspace<float> ws;
  forward(m, x, RunMode::Train, ws);
  return m;
}

int add_count(const NetworkGraph& g) {
  int c = 0;
  for (const auto& n : g.nodes)
    if (n.kind == LayerKind::Add) ++c;
  return c;
}

const LayerNode& only_conv(const NetworkGraph& g) {
  const LayerNode* found = nullptr;
  for (const auto& n : g.nodes)
    if (n.kind == LayerKind::Conv2d) {
      REQUIRE(found == nullptr);
      found = &n;
    }
  REQUIRE(found != nullptr);
  return *found;
}

}  // namespace

TEST_CASE("batchnorm folding") {
  auto m = warmed_model(conv_bn_net(), 3);

  SUBCASE("identity normalization leaves the kernel untouched") {
    auto id = make_model<float>(conv_bn_net(), 3);  // gamma 1, beta 0, mean 0, var 1
    auto& var = id.weights.at("n1.running_var");
    for (auto& v : var.data) v = 1.0f - 1e-5f;  // cancels the epsilon exactly
    auto folded = fold_batchnorm(id);
    CHECK(folded.weights.at("n0.weight").data == id.weights.at("n0.weight").data);
    for (float b : folded.weights.at("n0.bias").data) CHECK(b == 0.0f);
  }
  SUBCASE("random statistics: outputs match the unfolded net at 1e-5") {
    auto folded = fold_batchnorm(m);
    CHECK(folded.weights.count("n1.gamma") == 0);
    CHECK(folded.graph.nodes.size() == m.graph.nodes.size() - 1);
    auto rep = equivalence_check(m, folded, 100, 10, 1e-5);
    CHECK(rep.pass);
    CHECK(rep.n_samples == 100);
  }
  SUBCASE("a graph with no batchnorm comes back unchanged") {
    auto folded = fold_batchnorm(m);
    auto again = fold_batchnorm(folded);
    CHECK(checkpoint_bytes(again) == checkpoint_bytes(folded));
  }
  SUBCASE("batchnorm that does not follow a linear layer is rejected") {
    NetworkGraph g;
    g.input_shape = {3, 4, 4};
    g.num_classes = 2;
    g.nodes = {
        {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 4, .kernel = 3, .stride = 1,
         .padding = 1},
        {.id = 1, .kind = LayerKind::Conv2d, .inputs = {0}, .out_channels = 4, .kernel = 1,
         .shortcut = true},
        {.id = 2, .kind = LayerKind::Add, .inputs = {0, 1}},
        {.id = 3, .kind = LayerKind::BatchNorm, .inputs = {2}},
        gap_node(4, 3),
        flatten_node(5, 4),
        fc_node(6, 5, 2),
    };
    auto bad = make_model<float>(infer_shapes(g), 1);
    CHECK_THROWS_AS(fold_batchnorm(bad), build_error);
  }
}

TEST_CASE("composing unpadded conv pairs") {
  NetworkGraph g;
  g.input_shape = {3, 10, 10};
  g.num_classes = 2;
  g.nodes = {
      {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 5, .kernel = 3, .stride = 1,
       .has_bias = true},
      {.id = 1, .kind = LayerKind::Conv2d, .inputs = {0}, .out_channels = 6, .kernel = 3,
       .stride = 1, .has_bias = true},
      gap_node(2, 1),
      flatten_node(3, 2),
      fc_node(4, 3, 2),
  };
  auto m = make_model<float>(infer_shapes(g), 7);
  auto merged = merge_adjacent_linear(m);

  CHECK(conv_count(m.graph) == 2);
  CHECK(conv_count(merged.graph) == 1);
  const auto& c = only_conv(merged.graph);
  CHECK(c.kernel == 5);
  CHECK(c.stride == 1);
  CHECK(c.padding == 0);
  auto rep = equivalence_check(m, merged, 100, 10, 1e-4);
  CHECK(rep.pass);

  SUBCASE("hand-checkable 1x1 then 3x3 composition") {
    NetworkGraph h;
    h.input_shape = {1, 6, 6};
    h.num_classes = 2;
    h.nodes = {
        {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 1, .kernel = 1, .stride = 1,
         .has_bias = true},
        {.id = 1, .kind = LayerKind::Conv2d, .inputs = {0}, .out_channels = 1, .kernel = 3,
         .stride = 1, .has_bias = true},
        gap_node(2, 1),
        flatten_node(3, 2),
        fc_node(4, 3, 2),
    };
    auto hm = make_model<float>(infer_shapes(h), 1);
    hm.weights.at("n0.weight").data = {2.0f};
    hm.weights.at("n0.bias").data = {1.0f};
    auto& w2 = hm.weights.at("n1.weight");
    float sum = 0.0f;
    for (int i = 0; i < 9; ++i) {
      w2.data[i] = static_cast<float>(i + 1);
      sum += w2.data[i];
    }
    hm.weights.at("n1.bias").data = {0.5f};
    auto hmerged = merge_adjacent_linear(hm);
    const auto& composed = hmerged.weights.at("n1.weight");
    REQUIRE(composed.numel() == 9);
    for (int i = 0; i < 9; ++i)
      CHECK(composed.data[i] == doctest::Approx(2.0f * (i + 1)).epsilon(1e-6));
    // bias: b2 + sum(W2) * b1 = 0.5 + 45 * 1
    CHECK(hmerged.weights.at("n1.bias").data[0] == doctest::Approx(45.5f).epsilon(1e-6));
  }
  SUBCASE("three-conv chain collapses to one") {
    NetworkGraph h;
    h.input_shape = {2, 12, 12};
    h.num_classes = 2;
    h.nodes = {
        {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 3, .kernel = 3, .stride = 1},
        {.id = 1, .kind = LayerKind::Conv2d, .inputs = {0}, .out_channels = 4, .kernel = 3,
         .stride = 1},
        {.id = 2, .kind = LayerKind::Conv2d, .inputs = {1}, .out_channels = 5, .kernel = 1,
         .stride = 1},
        gap_node(3, 2),
        flatten_node(4, 3),
        fc_node(5, 4, 2),
    };
    auto hm = make_model<float>(infer_shapes(h), 2);
    auto hmerged = merge_adjacent_linear(hm);
    CHECK(conv_count(hmerged.graph) == 1);
    CHECK(only_conv(hmerged.graph).kernel == 5);
    CHECK(equivalence_check(hm, hmerged, 100, 10, 1e-4).pass);
  }
}

TEST_CASE("merging stops at activations and padded boundaries") {
  SUBCASE("conv-relu-conv stays put") {
    NetworkGraph g;
    g.input_shape = {3, 8, 8};
    g.num_classes = 2;
    g.nodes = {
        {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 4, .kernel = 3, .stride = 1},
        {.id = 1, .kind = LayerKind::ReLU, .inputs = {0}},
        {.id = 2, .kind = LayerKind::Conv2d, .inputs = {1}, .out_channels = 4, .kernel = 3,
         .stride = 1},
        gap_node(3, 2),
        flatten_node(4, 3),
        fc_node(5, 4, 2),
    };
    auto m = make_model<float>(infer_shapes(g), 4);
    auto merged = merge_adjacent_linear(m);
    CHECK(checkpoint_bytes(merged) == checkpoint_bytes(m));
  }
  SUBCASE("a padded second conv reads intermediate zeros no kernel reproduces") {
    NetworkGraph g;
    g.input_shape = {3, 8, 8};
    g.num_classes = 2;
    g.nodes = {
        {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 4, .kernel = 3, .stride = 1,
         .padding = 1},
        {.id = 1, .kind = LayerKind::Conv2d, .inputs = {0}, .out_channels = 4, .kernel = 3,
         .stride = 1, .padding = 1},
        gap_node(2, 1),
        flatten_node(3, 2),
        fc_node(4, 3, 2),
    };
    auto m = make_model<float>(infer_shapes(g), 4);
    auto merged = merge_adjacent_linear(m);
    CHECK(conv_count(merged.graph) == 2);  // skipped, not corrupted
    CHECK(equivalence_check(m, merged, 10, 5, 1e-6).pass);
  }
}

TEST_CASE("depthwise-separable pairs compose into one dense conv") {
  NetworkGraph g;
  g.input_shape = {4, 8, 8};
  g.num_classes = 3;
  g.nodes = {
      {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 4, .kernel = 3, .stride = 1,
       .padding = 1, .groups = 4},
      {.id = 1, .kind = LayerKind::Conv2d, .inputs = {0}, .out_channels = 8, .kernel = 1,
       .stride = 1},
      gap_node(2, 1),
      flatten_node(3, 2),
      fc_node(4, 3, 3),
  };
  auto m = make_model<float>(infer_shapes(g), 6);
  auto merged = merge_adjacent_linear(m);
  CHECK(conv_count(merged.graph) == 1);
  const auto& c = only_conv(merged.graph);
  CHECK(c.kernel == 3);
  CHECK(c.padding == 1);
  CHECK(c.groups == 1);
  CHECK(c.out_channels == 8);
  CHECK(equivalence_check(m, merged, 100, 10, 1e-4).pass);
}

TEST_CASE("residual arms fold into the main conv's taps") {
  SUBCASE("identity shortcut becomes +1 on the center tap") {
    NetworkGraph g;
    g.input_shape = {3, 8, 8};
    g.num_classes = 2;
    g.nodes = {
        {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 4, .kernel = 3, .stride = 1,
         .padding = 1},
        {.id = 1, .kind = LayerKind::ReLU, .inputs = {0}},
        {.id = 2, .kind = LayerKind::Conv2d, .inputs = {1}, .out_channels = 4, .kernel = 3,
         .stride = 1, .padding = 1},
        {.id = 3, .kind = LayerKind::Add, .inputs = {2, 1}},
        gap_node(4, 3),
        flatten_node(5, 4),
        fc_node(6, 5, 2),
    };
    auto m = make_model<float>(infer_shapes(g), 8);
    auto merged = merge_adjacent_linear(m);
    CHECK(add_count(merged.graph) == 0);
    CHECK(conv_count(merged.graph) == 2);
    CHECK(equivalence_check(m, merged, 100, 10, 1e-4).pass);
  }
  SUBCASE("1x1 projection shortcut sums into the aligned tap") {
    NetworkGraph g;
    g.input_shape = {3, 8, 8};
    g.num_classes = 2;
    g.nodes = {
        {.id = 0, .kind = LayerKind::Conv2d, .out_channels = 4, .kernel = 3, .stride = 1,
         .padding = 1},
        {.id = 1, .kind = LayerKind::ReLU, .inputs = {0}},
        {.id = 2, .kind = LayerKind::Conv2d, .inputs = {1}, .out_channels = 6, .kernel = 3,
         .stride = 2, .padding = 1},
        {.id = 3, .kind = LayerKind::Conv2d, .inputs = {1}, .out_channels = 6, .kernel = 1,
         .stride = 2, .shortcut = true},
        {.id = 4, .kind = LayerKind::Add, .inputs = {2, 3}},
        gap_node(5, 4),
        flatten_node(6, 5),
        fc_node(7, 6, 2),
    };
    auto m = make_model<float>(infer_shapes(g), 9);
    auto merged = merge_adjacent_linear(m);
    CHECK(add_count(merged.graph) == 0);
    CHECK(conv_count(merged.graph) == 2);  // projection conv absorbed
    CHECK(equivalence_check(m, merged, 100, 10, 1e-4).pass);
  }
}

TEST_CASE("equivalence probe reporting") {
  auto m = warmed_model(conv_bn_net(), 12);
  SUBCASE("perturbing one weight is detected") {
    auto other = m;
    other.weights.at("n0.weight").data[0] += 0.1f;
    auto rep = equivalence_check(m, other, 20, 5, 1e-4);
    CHECK(!rep.pass);
    CHECK(rep.max_rel_error > 1e-4);
  }
  SUBCASE("shape mismatches throw") {
    NetworkGraph g = conv_bn_net();
    g.input_shape = {3, 16, 16};
    auto other = make_model<float>(infer_shapes(g), 12);
    CHECK_THROWS_AS(equivalence_check(m, other, 4, 2, 1e-4), equivalence_error);
  }
}

TEST_CASE("culled depthwise network: fold + merge halves the conv stack") {
  ArchitectureSpec spec;
  spec.family = "mobilenetv1";
  spec.input = 16;
  spec.alpha = 0.25;
  auto g = build_architecture(spec);
  auto culled = cull(g, {"S1", "S2", "S3", "S4", "S5"});
  CHECK(count_relus(culled).total == 0);

  auto m = warmed_model(culled, 13);
  auto folded = fold_batchnorm(m);
  auto merged = merge_adjacent_linear(folded);

  CHECK(conv_count(m.graph) == 27);       // stem + 13 depthwise-separable pairs
  CHECK(conv_count(merged.graph) == 14);  // each pair composed; stem stays padded
  auto rep = equivalence_check(m, merged, 100, 10, 1e-4);
  CHECK(rep.pass);

  SUBCASE("a second pass is a no-op") {
    auto again = merge_adjacent_linear(merged);
    CHECK(checkpoint_bytes(again) == checkpoint_bytes(merged));
  }
}

TEST_CASE("culled residual network survives merging untouched but folded") {
  ArchitectureSpec spec;
  spec.family = "resnet10";
  spec.input = 16;
  spec.alpha = 0.25;
  auto g = build_architecture(spec);
  auto culled = cull(g, {"S1", "S2", "S3", "S4"});

  auto m = warmed_model(culled, 14);
  auto folded = fold_batchnorm(m);
  auto merged = merge_adjacent_linear(folded);

  // every in-block pair keeps its boundary padding, so only the fold applies
  CHECK(conv_count(merged.graph) == conv_count(m.graph));
  CHECK(validate(merged.graph).empty());
  auto rep = equivalence_check(m, merged, 100, 10, 1e-4);
  CHECK(rep.pass);
}
