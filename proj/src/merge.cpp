#include "relureduce/merge.hpp"

#include <algorithm>
#include <cmath>

#include "relureduce/errors.hpp"

namespace relureduce {

namespace {

std::string pname(int id, const char* suffix) {
  return "n" + std::to_string(id) + "." + suffix;
}

std::map<int, int> consumer_counts(const NetworkGraph& g) {
  std::map<int, int> counts;
  for (const auto& n : g.nodes)
    for (int in : n.inputs) ++counts[in];
  return counts;
}

const LayerNode* find_node(const NetworkGraph& g, int id) {
  for (const auto& n : g.nodes)
    if (n.id == id) return &n;
  return nullptr;
}

LayerNode* find_node(NetworkGraph& g, int id) {
  for (auto& n : g.nodes)
    if (n.id == id) return &n;
  return nullptr;
}

// Drop `dead` nodes and route consumers of old ids to replacements.
void rewire(NetworkGraph& g, const std::map<int, int>& replace,
            const std::vector<int>& dead) {
  std::vector<LayerNode> kept;
  kept.reserve(g.nodes.size());
  for (auto& n : g.nodes) {
    if (std::find(dead.begin(), dead.end(), n.id) != dead.end()) continue;
    for (int& in : n.inputs) {
      auto it = replace.find(in);
      while (it != replace.end()) {
        in = it->second;
        it = replace.find(in);
      }
    }
    kept.push_back(std::move(n));
  }
  g.nodes = std::move(kept);
}

void drop_weights(ModelF& m, int id) {
  const std::string prefix = "n" + std::to_string(id) + ".";
  for (auto it = m.weights.begin(); it != m.weights.end();)
    it = it->first.rfind(prefix, 0) == 0 ? m.weights.erase(it) : std::next(it);
}

TensorShape node_input_shape(const NetworkGraph& g, const LayerNode& n) {
  if (n.inputs.empty()) return g.input_shape;
  return find_node(g, n.inputs[0])->out_shape;
}

// ---- conv under conv -------------------------------------------------------

bool compose_conv_pair(ModelF& m, const LayerNode& a, LayerNode& b) {
  // exact only when b reads no intermediate zero padding
  if (b.padding != 0) return false;
  const TensorShape in = node_input_shape(m.graph, a);
  const int k = a.kernel + (b.kernel - 1) * a.stride;
  if (k > in.h + 2 * a.padding || k > in.w + 2 * a.padding) return false;

  const auto& w1 = m.weights.at(pname(a.id, "weight"));
  const auto& w2 = m.weights.at(pname(b.id, "weight"));
  const int M = a.out_channels, C = in.c, O = b.out_channels;
  const int ci1 = C / a.groups, gi1 = M / a.groups;
  const int mi2 = M / b.groups, oi2 = O / b.groups;

  TensorF w({O, C, k, k});
  TensorF bias({O});
  const TensorF* b1 = a.has_bias ? &m.weights.at(pname(a.id, "bias")) : nullptr;
  const TensorF* b2 = b.has_bias ? &m.weights.at(pname(b.id, "bias")) : nullptr;
  if (b2) bias.data = b2->data;

  for (int o = 0; o < O; ++o) {
    const int mlo = (o / oi2) * mi2;
    for (int mm = 0; mm < mi2; ++mm) {
      const int mid = mlo + mm;
      const int clo = (mid / gi1) * ci1;
      for (int t2h = 0; t2h < b.kernel; ++t2h)
        for (int t2w = 0; t2w < b.kernel; ++t2w) {
          const float w2v =
              w2.data[((static_cast<long long>(o) * mi2 + mm) * b.kernel + t2h) *
                          b.kernel +
                      t2w];
          if (b1) bias.data[o] += w2v * b1->data[mid];
          for (int cc = 0; cc < ci1; ++cc)
            for (int t1h = 0; t1h < a.kernel; ++t1h)
              for (int t1w = 0; t1w < a.kernel; ++t1w)
                w.data[((static_cast<long long>(o) * C + clo + cc) * k + t2h * a.stride +
                        t1h) *
                           k +
                       t2w * a.stride + t1w] +=
                    w2v * w1.data[((static_cast<long long>(mid) * ci1 + cc) * a.kernel +
                                   t1h) *
                                      a.kernel +
                                  t1w];
        }
    }
  }

  // b becomes the composed conv; a disappears
  b.kernel = k;
  b.stride = a.stride * b.stride;
  b.padding = a.padding;
  b.groups = 1;
  b.has_bias = b1 != nullptr || b2 != nullptr;
  b.inputs = a.inputs;
  drop_weights(m, b.id);
  drop_weights(m, a.id);
  m.weights.emplace(pname(b.id, "weight"), std::move(w));
  if (b.has_bias) m.weights.emplace(pname(b.id, "bias"), std::move(bias));
  rewire(m.graph, {}, {a.id});
  return true;
}

bool try_compose_convs(ModelF& m) {
  const auto counts = consumer_counts(m.graph);
  for (auto& b : m.graph.nodes) {
    if (b.kind != LayerKind::Conv2d || b.inputs.empty()) continue;
    const LayerNode* a = find_node(m.graph, b.inputs[0]);
    if (!a || a->kind != LayerKind::Conv2d) continue;
    if (counts.at(a->id) != 1) continue;
    if (compose_conv_pair(m, *a, b)) return true;
  }
  return false;
}

bool try_compose_fcs(ModelF& m) {
  const auto counts = consumer_counts(m.graph);
  for (auto& b : m.graph.nodes) {
    if (b.kind != LayerKind::FullyConnected || b.inputs.empty()) continue;
    const LayerNode* a = find_node(m.graph, b.inputs[0]);
    if (!a || a->kind != LayerKind::FullyConnected || counts.at(a->id) != 1) continue;
    const auto& w1 = m.weights.at(pname(a->id, "weight"));
    const auto& w2 = m.weights.at(pname(b.id, "weight"));
    const int I = w1.dim(1), M = a->out_features, O = b.out_features;
    TensorF w({O, I});
    TensorF bias({O});
    if (b.has_bias) bias.data = m.weights.at(pname(b.id, "bias")).data;
    const TensorF* b1 = a->has_bias ? &m.weights.at(pname(a->id, "bias")) : nullptr;
    for (int o = 0; o < O; ++o)
      for (int mm = 0; mm < M; ++mm) {
        const float w2v = w2.data[static_cast<long long>(o) * M + mm];
        if (b1) bias.data[o] += w2v * b1->data[mm];
        for (int i = 0; i < I; ++i)
          w.data[static_cast<long long>(o) * I + i] +=
              w2v * w1.data[static_cast<long long>(mm) * I + i];
      }
    const int dead = a->id;
    b.has_bias = b.has_bias || a->has_bias;
    b.inputs = a->inputs;
    drop_weights(m, b.id);
    drop_weights(m, dead);
    m.weights.emplace(pname(b.id, "weight"), std::move(w));
    if (b.has_bias) m.weights.emplace(pname(b.id, "bias"), std::move(bias));
    rewire(m.graph, {}, {dead});
    return true;
  }
  return false;
}

// ---- residual absorption ---------------------------------------------------

bool absorb_into(ModelF& m, const LayerNode& add, int main_id, int short_id) {
  LayerNode* conv = find_node(m.graph, main_id);
  if (!conv || conv->kind != LayerKind::Conv2d || conv->groups != 1) return false;
  if (consumer_counts(m.graph).at(main_id) != 1) return false;
  if (conv->padding >= conv->kernel) return false;  // no tap lines up
  const int src = conv->inputs.empty() ? -1 : conv->inputs[0];
  const TensorShape in = node_input_shape(m.graph, *conv);
  auto& w = m.weights.at(pname(conv->id, "weight"));
  const int tap = conv->padding;

  const LayerNode* other = find_node(m.graph, short_id);
  if (other && other->id == src && conv->stride == 1 && in.c == conv->out_channels) {
    // identity shortcut: +1 on the tap that reads the output pixel's position
    for (int c = 0; c < in.c; ++c)
      w.data[((static_cast<long long>(c) * in.c + c) * conv->kernel + tap) * conv->kernel +
             tap] += 1.0f;
    rewire(m.graph, {{add.id, conv->id}}, {add.id});
    return true;
  }
  if (other && other->kind == LayerKind::Conv2d && other->kernel == 1 &&
      other->padding == 0 && other->groups == 1 && other->stride == conv->stride &&
      other->inputs == conv->inputs &&
      consumer_counts(m.graph).at(short_id) == 1) {
    // projection shortcut: its 1x1 kernel lands on the same tap
    const auto& wp = m.weights.at(pname(short_id, "weight"));
    for (int o = 0; o < conv->out_channels; ++o)
      for (int c = 0; c < in.c; ++c)
        w.data[((static_cast<long long>(o) * in.c + c) * conv->kernel + tap) *
                   conv->kernel +
               tap] += wp.data[static_cast<long long>(o) * in.c + c];
    if (other->has_bias) {
      const auto& bp = m.weights.at(pname(short_id, "bias"));
      if (!conv->has_bias) {
        conv->has_bias = true;
        m.weights.emplace(pname(conv->id, "bias"), TensorF({conv->out_channels}));
      }
      auto& bc = m.weights.at(pname(conv->id, "bias"));
      for (int o = 0; o < conv->out_channels; ++o) bc.data[o] += bp.data[o];
    }
    drop_weights(m, short_id);
    rewire(m.graph, {{add.id, conv->id}}, {add.id, short_id});
    return true;
  }
  return false;
}

bool try_absorb_adds(ModelF& m) {
  for (const auto& n : m.graph.nodes)
    if (n.kind == LayerKind::Add) {
      const LayerNode add = n;  // copy; rewiring invalidates references
      if (absorb_into(m, add, add.inputs[0], add.inputs[1])) return true;
      if (absorb_into(m, add, add.inputs[1], add.inputs[0])) return true;
    }
  return false;
}

}  // namespace

int conv_count(const NetworkGraph& g) {
  int c = 0;
  for (const auto& n : g.nodes)
    if (n.kind == LayerKind::Conv2d) ++c;
  return c;
}

ModelF fold_batchnorm(const ModelF& m) {
  ModelF out = m;
  const double eps = 1e-5;
  bool any = false;
  for (const auto& n : m.graph.nodes) {
    if (n.kind != LayerKind::BatchNorm) continue;
    const auto counts = consumer_counts(out.graph);
    const LayerNode* bn = find_node(out.graph, n.id);
    LayerNode* prod = bn->inputs.empty() ? nullptr : find_node(out.graph, bn->inputs[0]);
    if (!prod ||
        (prod->kind != LayerKind::Conv2d && prod->kind != LayerKind::FullyConnected) ||
        counts.at(prod->id) != 1)
      throw build_error("fold_batchnorm: node " + std::to_string(n.id) +
                        " does not sit directly on a conv or fc it can fold into");
    const auto& gamma = out.weights.at(pname(n.id, "gamma"));
    const auto& beta = out.weights.at(pname(n.id, "beta"));
    const auto& mean = out.weights.at(pname(n.id, "running_mean"));
    const auto& var = out.weights.at(pname(n.id, "running_var"));
    const int C = static_cast<int>(gamma.data.size());

    auto& w = out.weights.at(pname(prod->id, "weight"));
    const long long per = w.numel() / C;
    if (!prod->has_bias) {
      prod->has_bias = true;
      out.weights.emplace(pname(prod->id, "bias"), TensorF({C}));
    }
    auto& bias = out.weights.at(pname(prod->id, "bias"));
    for (int c = 0; c < C; ++c) {
      const double scale = gamma.data[c] / std::sqrt(static_cast<double>(var.data[c]) + eps);
      for (long long i = 0; i < per; ++i)
        w.data[c * per + i] = static_cast<float>(w.data[c * per + i] * scale);
      bias.data[c] =
          static_cast<float>((bias.data[c] - mean.data[c]) * scale + beta.data[c]);
    }
    const int keep = prod->id;
    drop_weights(out, n.id);
    rewire(out.graph, {{n.id, keep}}, {n.id});
    any = true;
  }
  if (any) {
    out.graph = infer_shapes(out.graph);
    out.graph.provenance.push_back("fold_batchnorm");
  }
  return out;
}

ModelF merge_adjacent_linear(const ModelF& m) {
  ModelF out = m;
  bool changed = false;
  for (;;) {
    if (try_absorb_adds(out) || try_compose_convs(out) || try_compose_fcs(out)) {
      out.graph = infer_shapes(out.graph);
      changed = true;
      continue;
    }
    break;
  }
  if (changed) {
    const auto defects = validate(out.graph);
    if (!defects.empty())
      throw build_error("merge_adjacent_linear: produced an invalid graph: " + defects[0]);
    out.graph.provenance.push_back("merge_adjacent_linear");
  }
  return out;
}

EquivalenceReport equivalence_check(ModelF& a, ModelF& b, int n_samples, int batch_size,
                                    double tolerance, uint64_t seed) {
  if (!(a.graph.input_shape == b.graph.input_shape))
    throw equivalence_error("equivalence_check: input shapes differ");
  const auto& sa = a.graph.node(a.graph.output_id()).out_shape;
  const auto& sb = b.graph.node(b.graph.output_id()).out_shape;
  if (sa.numel() != sb.numel())
    throw equivalence_error("equivalence_check: output sizes differ");

  rng_stream r(seed);
  Workspace<float> wa, wb;
  EquivalenceReport rep;
  int done = 0;
  while (done < n_samples) {
    const int n = std::min(batch_size, n_samples - done);
    TensorF x({n, a.graph.input_shape.c, a.graph.input_shape.h, a.graph.input_shape.w});
    for (auto& v : x.data) v = static_cast<float>(r.normal());
    const TensorF& ya = forward(a, x, RunMode::Eval, wa);
    const TensorF& yb = forward(b, x, RunMode::Eval, wb);
    double diff = 0.0, mag = 0.0;
    for (long long i = 0; i < ya.numel(); ++i) {
      diff = std::max(diff, std::fabs(static_cast<double>(ya.data[i]) - yb.data[i]));
      mag = std::max(mag, std::fabs(static_cast<double>(ya.data[i])));
    }
    rep.max_rel_error = std::max(rep.max_rel_error, diff / std::max(mag, 1e-12));
    done += n;
  }
  rep.n_samples = n_samples;
  rep.pass = rep.max_rel_error <= tolerance;
  return rep;
}

}  // namespace relureduce
