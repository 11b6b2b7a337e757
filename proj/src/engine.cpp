#include "relureduce/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "relureduce/errors.hpp"

namespace relureduce {

double rng_stream::normal() {
  if (has_spare) {
    has_spare = false;
    return spare;
  }
  // Box-Muller; u clamped away from zero so log stays finite.
  double u = 0.0;
  do {
    u = uniform();
  } while (u <= 1e-300);
  const double v = uniform();
  const double r = std::sqrt(-2.0 * std::log(u));
  const double a = 6.283185307179586476925286766559 * v;
  spare = r * std::sin(a);
  has_spare = true;
  return r * std::cos(a);
}

namespace {

std::string pname(int id, const char* suffix) {
  return "n" + std::to_string(id) + "." + suffix;
}

// Input shape per node (first input only; Add operands share one shape).
std::map<int, TensorShape> input_shape_map(const NetworkGraph& g) {
  std::map<int, TensorShape> outs, ins;
  for (const auto& n : g.nodes) {
    ins[n.id] = n.inputs.empty() ? g.input_shape : outs.at(n.inputs[0]);
    outs[n.id] = n.out_shape;
  }
  return ins;
}

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(int M, int K, int N, const T* A, const T* B, T* C) {
  for (int m = 0; m < M; ++m) {
    T* crow = C + static_cast<long long>(m) * N;
    const T* arow = A + static_cast<long long>(m) * K;
    for (int k = 0; k < K; ++k) {
      const T a = arow[k];
      const T* brow = B + static_cast<long long>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T (rows of both operands contiguous)
template <class T>
void gemm_nt(int M, int K, int N, const T* A, const T* B, T* C) {
  for (int m = 0; m < M; ++m) {
    const T* arow = A + static_cast<long long>(m) * K;
    T* crow = C + static_cast<long long>(m) * N;
    for (int n = 0; n < N; ++n) {
      const T* brow = B + static_cast<long long>(n) * K;
      T acc = T(0);
      for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
      crow[n] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <class T>
void gemm_tn(int M, int K, int N, const T* A, const T* B, T* C) {
  for (int m = 0; m < M; ++m) {
    const T* arow = A + static_cast<long long>(m) * K;
    const T* brow = B + static_cast<long long>(m) * N;
    for (int k = 0; k < K; ++k) {
      const T a = arow[k];
      T* crow = C + static_cast<long long>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

struct ConvGeom {
  int C, H, W, OC, OH, OW, K, S, P, G, CG, OG;
};

ConvGeom conv_geom(const LayerNode& n, const TensorShape& in) {
  ConvGeom g;
  g.C = in.c;
  g.H = in.h;
  g.W = in.w;
  g.OC = n.out_channels;
  g.K = n.kernel;
  g.S = n.stride;
  g.P = n.padding;
  g.G = n.groups;
  g.CG = g.C / g.G;
  g.OG = g.OC / g.G;
  g.OH = (g.H + 2 * g.P - g.K) / g.S + 1;
  g.OW = (g.W + 2 * g.P - g.K) / g.S + 1;
  return g;
}

// col[(c*K+kh)*K+kw][oh*OW+ow] = x[c0+c][oh*S-P+kh][ow*S-P+kw] (0 outside)
template <class T>
void im2col(const ConvGeom& g, const T* x, int c0, T* col) {
  const int OHW = g.OH * g.OW;
  for (int c = 0; c < g.CG; ++c) {
    const T* plane = x + static_cast<long long>(c0 + c) * g.H * g.W;
    for (int kh = 0; kh < g.K; ++kh)
      for (int kw = 0; kw < g.K; ++kw) {
        T* dst = col + (static_cast<long long>((c * g.K + kh) * g.K + kw)) * OHW;
        for (int oh = 0; oh < g.OH; ++oh) {
          const int ih = oh * g.S - g.P + kh;
          T* row = dst + oh * g.OW;
          if (ih < 0 || ih >= g.H) {
            std::fill(row, row + g.OW, T(0));
            continue;
          }
          const T* src = plane + static_cast<long long>(ih) * g.W;
          for (int ow = 0; ow < g.OW; ++ow) {
            const int iw = ow * g.S - g.P + kw;
            row[ow] = (iw >= 0 && iw < g.W) ? src[iw] : T(0);
          }
        }
      }
  }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* col, int c0, T* dx) {
  const int OHW = g.OH * g.OW;
  for (int c = 0; c < g.CG; ++c) {
    T* plane = dx + static_cast<long long>(c0 + c) * g.H * g.W;
    for (int kh = 0; kh < g.K; ++kh)
      for (int kw = 0; kw < g.K; ++kw) {
        const T* src = col + (static_cast<long long>((c * g.K + kh) * g.K + kw)) * OHW;
        for (int oh = 0; oh < g.OH; ++oh) {
          const int ih = oh * g.S - g.P + kh;
          if (ih < 0 || ih >= g.H) continue;
          T* row = plane + static_cast<long long>(ih) * g.W;
          for (int ow = 0; ow < g.OW; ++ow) {
            const int iw = ow * g.S - g.P + kw;
            if (iw >= 0 && iw < g.W) row[iw] += src[oh * g.OW + ow];
          }
        }
      }
  }
}

template <class T>
const Tensor<T>& weight(const Model<T>& m, int id, const char* suffix) {
  const auto it = m.weights.find(pname(id, suffix));
  if (it == m.weights.end())
    throw training_error("engine: missing parameter " + pname(id, suffix));
  return it->second;
}

}  // namespace

bool is_trainable_param(const std::string& name) {
  return name.find(".running_") == std::string::npos;
}

template <class T>
Model<T> make_model(const NetworkGraph& g, uint64_t seed) {
  Model<T> m;
  m.graph = infer_shapes(g);
  rng_stream r(seed);
  const auto ins = input_shape_map(m.graph);
  for (const auto& n : m.graph.nodes) {
    const TensorShape in = ins.at(n.id);
    switch (n.kind) {
      case LayerKind::Conv2d: {
        const int fan_in = (in.c / n.groups) * n.kernel * n.kernel;
        const double std = std::sqrt(2.0 / fan_in);
        Tensor<T> w({n.out_channels, in.c / n.groups, n.kernel, n.kernel});
        for (auto& v : w.data) v = static_cast<T>(r.normal() * std);
        m.weights.emplace(pname(n.id, "weight"), std::move(w));
        if (n.has_bias)
          m.weights.emplace(pname(n.id, "bias"), Tensor<T>({n.out_channels}));
        break;
      }
      case LayerKind::BatchNorm: {
        Tensor<T> gamma({in.c}), beta({in.c}), rm({in.c}), rv({in.c});
        std::fill(gamma.data.begin(), gamma.data.end(), T(1));
        std::fill(rv.data.begin(), rv.data.end(), T(1));
        m.weights.emplace(pname(n.id, "gamma"), std::move(gamma));
        m.weights.emplace(pname(n.id, "beta"), std::move(beta));
        m.weights.emplace(pname(n.id, "running_mean"), std::move(rm));
        m.weights.emplace(pname(n.id, "running_var"), std::move(rv));
        break;
      }
      case LayerKind::FullyConnected: {
        const double std = std::sqrt(2.0 / in.c);
        Tensor<T> w({n.out_features, in.c});
        for (auto& v : w.data) v = static_cast<T>(r.normal() * std);
        m.weights.emplace(pname(n.id, "weight"), std::move(w));
        m.weights.emplace(pname(n.id, "bias"), Tensor<T>({n.out_features}));
        break;
      }
      default:
        break;
    }
  }
  return m;
}

template <class T>
Model<T> cast_model(const Model<float>& m) {
  Model<T> out;
  out.graph = m.graph;
  for (const auto& [name, t] : m.weights) {
    Tensor<T> c(t.dims);
    for (size_t i = 0; i < t.data.size(); ++i) c.data[i] = static_cast<T>(t.data[i]);
    out.weights.emplace(name, std::move(c));
  }
  return out;
}

template <class T>
const Tensor<T>& forward(Model<T>& m, const Tensor<T>& x, RunMode mode, Workspace<T>& ws) {
  if (x.dims.size() != 4) throw training_error("forward: input must be [N,C,H,W]");
  const int N = x.dim(0);
  if (x.dim(1) != m.graph.input_shape.c || x.dim(2) != m.graph.input_shape.h ||
      x.dim(3) != m.graph.input_shape.w)
    throw training_error("forward: input shape does not match the graph input");
  ws.mode = mode;
  ws.input = x;
  ws.acts.clear();
  ws.bn_saved.clear();
  ws.pool_argmax.clear();

  const double bn_momentum = 0.1, bn_eps = 1e-5;
  std::vector<T> col;

  for (const auto& n : m.graph.nodes) {
    const Tensor<T>& in = n.inputs.empty() ? ws.input : ws.acts.at(n.inputs[0]);
    Tensor<T> out({N, n.out_shape.c, n.out_shape.h, n.out_shape.w});
    switch (n.kind) {
      case LayerKind::Conv2d: {
        const TensorShape in_shape{in.dim(1), in.dim(2), in.dim(3)};
        const ConvGeom cg = conv_geom(n, in_shape);
        const Tensor<T>& w = weight(m, n.id, "weight");
        const Tensor<T>* b = n.has_bias ? &weight(m, n.id, "bias") : nullptr;
        const int OHW = cg.OH * cg.OW;
        const long long colsz = static_cast<long long>(cg.CG) * cg.K * cg.K * OHW;
        col.resize(static_cast<size_t>(colsz));
        for (int s = 0; s < N; ++s) {
          const T* xs = in.p() + static_cast<long long>(s) * cg.C * cg.H * cg.W;
          T* ys = out.p() + static_cast<long long>(s) * cg.OC * OHW;
          for (int g = 0; g < cg.G; ++g) {
            im2col(cg, xs, g * cg.CG, col.data());
            gemm_nn(cg.OG, cg.CG * cg.K * cg.K, OHW,
                    w.p() + static_cast<long long>(g) * cg.OG * cg.CG * cg.K * cg.K,
                    col.data(), ys + static_cast<long long>(g) * cg.OG * OHW);
          }
          if (b)
            for (int oc = 0; oc < cg.OC; ++oc) {
              T* row = ys + static_cast<long long>(oc) * OHW;
              const T bias = b->data[oc];
              for (int i = 0; i < OHW; ++i) row[i] += bias;
            }
        }
        break;
      }
      case LayerKind::BatchNorm: {
        const int C = in.dim(1), HW = in.dim(2) * in.dim(3);
        auto& gamma = weight(m, n.id, "gamma");
        auto& beta = weight(m, n.id, "beta");
        Tensor<T> saved({2 * C});
        const bool use_batch = mode != RunMode::Eval;
        for (int c = 0; c < C; ++c) {
          double mean, var;
          if (use_batch) {
            double sum = 0.0, sq = 0.0;
            for (int s = 0; s < N; ++s) {
              const T* row = in.p() + (static_cast<long long>(s) * C + c) * HW;
              for (int i = 0; i < HW; ++i) {
                sum += row[i];
                sq += static_cast<double>(row[i]) * row[i];
              }
            }
            const double cnt = static_cast<double>(N) * HW;
            mean = sum / cnt;
            var = sq / cnt - mean * mean;
            if (var < 0) var = 0;
            if (mode == RunMode::Train) {
              auto& rm = m.weights.at(pname(n.id, "running_mean"));
              auto& rv = m.weights.at(pname(n.id, "running_var"));
              const double unbiased = cnt > 1 ? var * cnt / (cnt - 1) : var;
              rm.data[c] = static_cast<T>((1 - bn_momentum) * rm.data[c] + bn_momentum * mean);
              rv.data[c] =
                  static_cast<T>((1 - bn_momentum) * rv.data[c] + bn_momentum * unbiased);
            }
          } else {
            mean = weight(m, n.id, "running_mean").data[c];
            var = weight(m, n.id, "running_var").data[c];
          }
          const double invstd = 1.0 / std::sqrt(var + bn_eps);
          saved.data[c] = static_cast<T>(mean);
          saved.data[C + c] = static_cast<T>(invstd);
          const T a = static_cast<T>(gamma.data[c] * invstd);
          const T shift = static_cast<T>(beta.data[c] - gamma.data[c] * invstd * mean);
          for (int s = 0; s < N; ++s) {
            const T* row = in.p() + (static_cast<long long>(s) * C + c) * HW;
            T* orow = out.p() + (static_cast<long long>(s) * C + c) * HW;
            for (int i = 0; i < HW; ++i) orow[i] = a * row[i] + shift;
          }
        }
        ws.bn_saved[n.id] = std::move(saved);
        break;
      }
      case LayerKind::ReLU: {
        for (long long i = 0; i < in.numel(); ++i)
          out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
        const int KH = n.global_pool ? H : n.kernel;
        const int KW = n.global_pool ? W : n.kernel;
        const int S = n.stride;
        const int OH = (H - KH) / S + 1, OW = (W - KW) / S + 1;
        const bool is_max = n.kind == LayerKind::MaxPool;
        std::vector<int>* argmax = nullptr;
        if (is_max) {
          argmax = &ws.pool_argmax[n.id];
          argmax->assign(static_cast<size_t>(N) * C * OH * OW, 0);
        }
        for (int s = 0; s < N; ++s)
          for (int c = 0; c < C; ++c) {
            const T* plane = in.p() + (static_cast<long long>(s) * C + c) * H * W;
            T* oplane = out.p() + (static_cast<long long>(s) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
              for (int ow = 0; ow < OW; ++ow) {
                if (is_max) {
                  T best = plane[(oh * S) * W + ow * S];
                  int besti = (oh * S) * W + ow * S;
                  for (int kh = 0; kh < KH; ++kh)
                    for (int kw = 0; kw < KW; ++kw) {
                      const int idx = (oh * S + kh) * W + (ow * S + kw);
                      if (plane[idx] > best) {
                        best = plane[idx];
                        besti = idx;
                      }
                    }
                  oplane[oh * OW + ow] = best;
                  (*argmax)[((static_cast<long long>(s) * C + c) * OH + oh) * OW + ow] = besti;
                } else {
                  double acc = 0.0;
                  for (int kh = 0; kh < KH; ++kh)
                    for (int kw = 0; kw < KW; ++kw)
                      acc += plane[(oh * S + kh) * W + (ow * S + kw)];
                  oplane[oh * OW + ow] = static_cast<T>(acc / (KH * KW));
                }
              }
          }
        break;
      }
      case LayerKind::FullyConnected: {
        const int F = in.dim(1);
        const auto& w = weight(m, n.id, "weight");
        const auto& b = weight(m, n.id, "bias");
        for (int s = 0; s < N; ++s) {
          T* orow = out.p() + static_cast<long long>(s) * n.out_features;
          for (int o = 0; o < n.out_features; ++o) orow[o] = b.data[o];
        }
        gemm_nt(N, F, n.out_features, in.p(), w.p(), out.p());
        break;
      }
      case LayerKind::Flatten: {
        std::copy(in.data.begin(), in.data.end(), out.data.begin());
        break;
      }
      case LayerKind::Add: {
        const Tensor<T>& a = ws.acts.at(n.inputs[0]);
        const Tensor<T>& b2 = ws.acts.at(n.inputs[1]);
        for (long long i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] + b2.data[i];
        break;
      }
    }
    ws.acts[n.id] = std::move(out);
  }
  return ws.acts.at(m.graph.output_id());
}

template <class T>
std::map<std::string, Tensor<T>> backward(const Model<T>& m, const Workspace<T>& ws,
                                          const Tensor<T>& dlogits) {
  if (ws.mode == RunMode::Eval)
    throw training_error("backward: workspace was produced in eval mode");
  std::map<std::string, Tensor<T>> grads;
  for (const auto& [name, t] : m.weights)
    if (is_trainable_param(name)) grads.emplace(name, Tensor<T>(t.dims));

  std::map<int, Tensor<T>> dacts;
  const int sink = m.graph.output_id();
  dacts[sink] = dlogits;
  dacts[sink].dims = ws.acts.at(sink).dims;

  const int N = ws.input.dim(0);
  std::vector<T> col, dcol;

  auto daccum = [&](int id, const Tensor<T>& like) -> Tensor<T>& {
    auto it = dacts.find(id);
    if (it == dacts.end()) it = dacts.emplace(id, Tensor<T>(like.dims)).first;
    return it->second;
  };

  for (auto nit = m.graph.nodes.rbegin(); nit != m.graph.nodes.rend(); ++nit) {
    const LayerNode& n = *nit;
    const auto dit = dacts.find(n.id);
    if (dit == dacts.end()) continue;  // not on the loss path
    const Tensor<T>& dy = dit->second;
    const Tensor<T>& in = n.inputs.empty() ? ws.input : ws.acts.at(n.inputs[0]);

    switch (n.kind) {
      case LayerKind::Conv2d: {
        const TensorShape in_shape{in.dim(1), in.dim(2), in.dim(3)};
        const ConvGeom cg = conv_geom(n, in_shape);
        const int OHW = cg.OH * cg.OW;
        const auto& w = m.weights.at(pname(n.id, "weight"));
        auto& dw = grads.at(pname(n.id, "weight"));
        Tensor<T>* db = n.has_bias ? &grads.at(pname(n.id, "bias")) : nullptr;
        Tensor<T>* dx = n.inputs.empty() ? nullptr : &daccum(n.inputs[0], in);
        const long long colsz = static_cast<long long>(cg.CG) * cg.K * cg.K * OHW;
        col.resize(static_cast<size_t>(colsz));
        dcol.resize(static_cast<size_t>(colsz));
        for (int s = 0; s < N; ++s) {
          const T* xs = in.p() + static_cast<long long>(s) * cg.C * cg.H * cg.W;
          const T* dys = dy.p() + static_cast<long long>(s) * cg.OC * OHW;
          for (int g = 0; g < cg.G; ++g) {
            im2col(cg, xs, g * cg.CG, col.data());
            const T* dyg = dys + static_cast<long long>(g) * cg.OG * OHW;
            // dW[og, ckk] += dY[og, ohw] * col[ckk, ohw]^T
            gemm_nt(cg.OG, OHW, cg.CG * cg.K * cg.K, dyg, col.data(),
                    dw.p() + static_cast<long long>(g) * cg.OG * cg.CG * cg.K * cg.K);
            if (dx) {
              // dcol[ckk, ohw] = W[og, ckk]^T * dY[og, ohw]
              std::fill(dcol.begin(), dcol.end(), T(0));
              gemm_tn(cg.OG, cg.CG * cg.K * cg.K, OHW,
                      w.p() + static_cast<long long>(g) * cg.OG * cg.CG * cg.K * cg.K, dyg,
                      dcol.data());
              col2im_add(cg, dcol.data(),
                         g * cg.CG, dx->p() + static_cast<long long>(s) * cg.C * cg.H * cg.W);
            }
          }
          if (db)
            for (int oc = 0; oc < cg.OC; ++oc) {
              const T* row = dys + static_cast<long long>(oc) * OHW;
              T acc = T(0);
              for (int i = 0; i < OHW; ++i) acc += row[i];
              db->data[oc] += acc;
            }
        }
        break;
      }
      case LayerKind::BatchNorm: {
        const int C = in.dim(1), HW = in.dim(2) * in.dim(3);
        const double cnt = static_cast<double>(N) * HW;
        const auto& gamma = m.weights.at(pname(n.id, "gamma"));
        const auto& saved = ws.bn_saved.at(n.id);
        auto& dgamma = grads.at(pname(n.id, "gamma"));
        auto& dbeta = grads.at(pname(n.id, "beta"));
        Tensor<T>& dx = daccum(n.inputs[0], in);
        for (int c = 0; c < C; ++c) {
          const double mean = saved.data[c], invstd = saved.data[C + c];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int s = 0; s < N; ++s) {
            const T* xrow = in.p() + (static_cast<long long>(s) * C + c) * HW;
            const T* dyrow = dy.p() + (static_cast<long long>(s) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
              const double xhat = (xrow[i] - mean) * invstd;
              sum_dy += dyrow[i];
              sum_dy_xhat += dyrow[i] * xhat;
            }
          }
          dgamma.data[c] += static_cast<T>(sum_dy_xhat);
          dbeta.data[c] += static_cast<T>(sum_dy);
          const double k = gamma.data[c] * invstd / cnt;
          for (int s = 0; s < N; ++s) {
            const T* xrow = in.p() + (static_cast<long long>(s) * C + c) * HW;
            const T* dyrow = dy.p() + (static_cast<long long>(s) * C + c) * HW;
            T* dxrow = dx.p() + (static_cast<long long>(s) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
              const double xhat = (xrow[i] - mean) * invstd;
              dxrow[i] += static_cast<T>(k * (cnt * dyrow[i] - sum_dy - xhat * sum_dy_xhat));
            }
          }
        }
        break;
      }
      case LayerKind::ReLU: {
        Tensor<T>& dx = daccum(n.inputs[0], in);
        for (long long i = 0; i < in.numel(); ++i)
          if (in.data[i] > T(0)) dx.data[i] += dy.data[i];
        break;
      }
      case LayerKind::MaxPool: {
        const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
        const auto& argmax = ws.pool_argmax.at(n.id);
        const int OH = n.out_shape.h, OW = n.out_shape.w;
        Tensor<T>& dx = daccum(n.inputs[0], in);
        for (int s = 0; s < N; ++s)
          for (int c = 0; c < C; ++c) {
            T* dplane = dx.p() + (static_cast<long long>(s) * C + c) * H * W;
            const T* dyplane = dy.p() + (static_cast<long long>(s) * C + c) * OH * OW;
            for (int i = 0; i < OH * OW; ++i)
              dplane[argmax[((static_cast<long long>(s) * C + c) * OH * OW) + i]] +=
                  dyplane[i];
          }
        break;
      }
      case LayerKind::AvgPool: {
        const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
        const int KH = n.global_pool ? H : n.kernel;
        const int KW = n.global_pool ? W : n.kernel;
        const int S = n.stride;
        const int OH = n.out_shape.h, OW = n.out_shape.w;
        const T inv = static_cast<T>(1.0 / (KH * KW));
        Tensor<T>& dx = daccum(n.inputs[0], in);
        for (int s = 0; s < N; ++s)
          for (int c = 0; c < C; ++c) {
            T* dplane = dx.p() + (static_cast<long long>(s) * C + c) * H * W;
            const T* dyplane = dy.p() + (static_cast<long long>(s) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
              for (int ow = 0; ow < OW; ++ow) {
                const T v = dyplane[oh * OW + ow] * inv;
                for (int kh = 0; kh < KH; ++kh)
                  for (int kw = 0; kw < KW; ++kw)
                    dplane[(oh * S + kh) * W + (ow * S + kw)] += v;
              }
          }
        break;
      }
      case LayerKind::FullyConnected: {
        const int F = in.dim(1);
        const auto& w = m.weights.at(pname(n.id, "weight"));
        auto& dw = grads.at(pname(n.id, "weight"));
        auto& db = grads.at(pname(n.id, "bias"));
        Tensor<T>& dx = daccum(n.inputs[0], in);
        // dW[o,f] += sum_n dY[n,o] * X[n,f]
        gemm_tn(N, n.out_features, F, dy.p(), in.p(), dw.p());
        // dX[n,f] += dY[n,o] * W[o,f]
        gemm_nn(N, n.out_features, F, dy.p(), w.p(), dx.p());
        for (int s = 0; s < N; ++s)
          for (int o = 0; o < n.out_features; ++o)
            db.data[o] += dy.data[static_cast<long long>(s) * n.out_features + o];
        break;
      }
      case LayerKind::Flatten: {
        Tensor<T>& dx = daccum(n.inputs[0], in);
        for (long long i = 0; i < in.numel(); ++i) dx.data[i] += dy.data[i];
        break;
      }
      case LayerKind::Add: {
        Tensor<T>& da = daccum(n.inputs[0], ws.acts.at(n.inputs[0]));
        for (long long i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i];
        Tensor<T>& db2 = daccum(n.inputs[1], ws.acts.at(n.inputs[1]));
        for (long long i = 0; i < dy.numel(); ++i) db2.data[i] += dy.data[i];
        break;
      }
    }
  }
  return grads;
}

namespace {

// Rows of log-softmax probabilities, numerically stable.
template <class T>
void log_softmax_row(const T* row, int k, double scale, std::vector<double>& out) {
  out.resize(k);
  double mx = -1e300;
  for (int i = 0; i < k; ++i) mx = std::max(mx, static_cast<double>(row[i]) * scale);
  double denom = 0.0;
  for (int i = 0; i < k; ++i) denom += std::exp(static_cast<double>(row[i]) * scale - mx);
  const double log_denom = std::log(denom) + mx;
  for (int i = 0; i < k; ++i) out[i] = static_cast<double>(row[i]) * scale - log_denom;
}

}  // namespace

template <class T>
LossGrad<T> softmax_ce(const Tensor<T>& logits, const std::vector<int>& labels) {
  const int N = logits.dim(0);
  const int K = static_cast<int>(logits.numel() / N);
  LossGrad<T> lg;
  lg.dlogits = Tensor<T>(logits.dims);
  std::vector<double> lsm;
  double total = 0.0;
  for (int s = 0; s < N; ++s) {
    const T* row = logits.p() + static_cast<long long>(s) * K;
    log_softmax_row(row, K, 1.0, lsm);
    total -= lsm[labels[s]];
    T* drow = lg.dlogits.p() + static_cast<long long>(s) * K;
    for (int i = 0; i < K; ++i) {
      const double p = std::exp(lsm[i]);
      drow[i] = static_cast<T>((p - (i == labels[s] ? 1.0 : 0.0)) / N);
    }
  }
  lg.loss = total / N;
  return lg;
}

template <class T>
LossGrad<T> kd_loss(const Tensor<T>& student, const Tensor<T>& teacher,
                    const std::vector<int>& labels, double temperature,
                    double hard_weight) {
  const int N = student.dim(0);
  const int K = static_cast<int>(student.numel() / N);
  if (teacher.numel() != student.numel())
    throw training_error("kd_loss: student and teacher logits differ in shape");
  LossGrad<T> lg;
  lg.dlogits = Tensor<T>(student.dims);
  std::vector<double> ls_hard, ls_soft, lt_soft;
  double total = 0.0;
  const double t2 = temperature * temperature;
  for (int s = 0; s < N; ++s) {
    const T* srow = student.p() + static_cast<long long>(s) * K;
    const T* trow = teacher.p() + static_cast<long long>(s) * K;
    log_softmax_row(srow, K, 1.0, ls_hard);
    log_softmax_row(srow, K, 1.0 / temperature, ls_soft);
    log_softmax_row(trow, K, 1.0 / temperature, lt_soft);
    double ce = -ls_hard[labels[s]];
    double kl = 0.0;
    for (int i = 0; i < K; ++i) {
      const double pt = std::exp(lt_soft[i]);
      kl += pt * (lt_soft[i] - ls_soft[i]);
    }
    total += hard_weight * ce + (1.0 - hard_weight) * t2 * kl;
    T* drow = lg.dlogits.p() + static_cast<long long>(s) * K;
    for (int i = 0; i < K; ++i) {
      const double ph = std::exp(ls_hard[i]);
      const double ps = std::exp(ls_soft[i]);
      const double pt = std::exp(lt_soft[i]);
      const double dhard = hard_weight * (ph - (i == labels[s] ? 1.0 : 0.0));
      const double dsoft = (1.0 - hard_weight) * temperature * (ps - pt);
      drow[i] = static_cast<T>((dhard + dsoft) / N);
    }
  }
  lg.loss = total / N;
  return lg;
}

template <class T>
double accuracy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const int N = logits.dim(0);
  const int K = static_cast<int>(logits.numel() / N);
  int hits = 0;
  for (int s = 0; s < N; ++s) {
    const T* row = logits.p() + static_cast<long long>(s) * K;
    int best = 0;
    for (int i = 1; i < K; ++i)
      if (row[i] > row[best]) best = i;
    if (best == labels[s]) ++hits;
  }
  return static_cast<double>(hits) / N;
}

double schedule_lr(const TrainConfig& cfg, int epoch) {
  if (cfg.schedule == "step") {
    const int drops = cfg.step_every > 0 ? epoch / cfg.step_every : 0;
    return cfg.lr0 / std::pow(cfg.step_divide, drops);
  }
  if (cfg.schedule == "cosine")
    return cfg.lr0 * 0.5 *
           (1.0 + std::cos(3.14159265358979323846 * epoch / cfg.epochs));
  throw training_error("schedule_lr: unknown schedule '" + cfg.schedule + "'");
}

template <class T>
void sgd_step(Model<T>& m, const std::map<std::string, Tensor<T>>& grads,
              SgdState<T>& state, double lr, double momentum, double weight_decay) {
  for (const auto& [name, g] : grads) {
    auto& w = m.weights.at(name);
    auto vit = state.velocity.find(name);
    if (vit == state.velocity.end())
      vit = state.velocity.emplace(name, Tensor<T>(w.dims)).first;
    auto& v = vit->second;
    for (size_t i = 0; i < w.data.size(); ++i) {
      const T step = g.data[i] + static_cast<T>(weight_decay) * w.data[i];
      v.data[i] = static_cast<T>(momentum) * v.data[i] + step;
      w.data[i] -= static_cast<T>(lr) * v.data[i];
    }
  }
}

TensorF make_batch(const Dataset& ds, const std::vector<long long>& idx) {
  const long long plane = static_cast<long long>(ds.channels) * ds.height * ds.width;
  TensorF x({static_cast<int>(idx.size()), ds.channels, ds.height, ds.width});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(ds.images.begin() + idx[i] * plane, ds.images.begin() + (idx[i] + 1) * plane,
              x.data.begin() + static_cast<long long>(i) * plane);
  return x;
}

TensorF downscale_batch(const TensorF& x, int factor) {
  if (factor <= 1) return x;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  TensorF y({N, C, H / factor, W / factor});
  const int OH = H / factor, OW = W / factor;
  for (int s = 0; s < N; ++s)
    for (int c = 0; c < C; ++c) {
      const float* plane = x.p() + (static_cast<long long>(s) * C + c) * H * W;
      float* oplane = y.p() + (static_cast<long long>(s) * C + c) * OH * OW;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          for (int kh = 0; kh < factor; ++kh)
            for (int kw = 0; kw < factor; ++kw)
              acc += plane[(oh * factor + kh) * W + (ow * factor + kw)];
          oplane[oh * OW + ow] = static_cast<float>(acc / (factor * factor));
        }
    }
  return y;
}

namespace {

// In-place pad-4 random crop + horizontal flip.
void augment_batch(TensorF& x, rng_stream& r) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int pad = 4;
  std::vector<float> padded(static_cast<size_t>(C) * (H + 2 * pad) * (W + 2 * pad));
  for (int s = 0; s < N; ++s) {
    const int dy = r.below(2 * pad + 1), dx = r.below(2 * pad + 1);
    const bool flip = r.below(2) == 1;
    float* sample = x.p() + static_cast<long long>(s) * C * H * W;
    std::fill(padded.begin(), padded.end(), 0.f);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        std::copy(sample + (static_cast<long long>(c) * H + i) * W,
                  sample + (static_cast<long long>(c) * H + i) * W + W,
                  padded.begin() +
                      (static_cast<long long>(c) * (H + 2 * pad) + i + pad) * (W + 2 * pad) +
                      pad);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const int sj = flip ? (W - 1 - j) : j;
          sample[(static_cast<long long>(c) * H + i) * W + j] =
              padded[(static_cast<long long>(c) * (H + 2 * pad) + i + dy) * (W + 2 * pad) +
                     sj + dx];
        }
  }
}

int resolution_factor(const NetworkGraph& g, const Dataset& ds) {
  if (g.input_shape.c != ds.channels)
    throw training_error("train: dataset channels do not match the model input");
  if (g.input_shape.h == ds.height && g.input_shape.w == ds.width) return 1;
  if (ds.height % g.input_shape.h == 0 && ds.width % g.input_shape.w == 0 &&
      ds.height / g.input_shape.h == ds.width / g.input_shape.w)
    return ds.height / g.input_shape.h;
  throw training_error("train: dataset resolution is not an integer multiple of the model input");
}

}  // namespace

TrainResult train(Model<float>& m, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, Model<float>* teacher, const KDConfig* kd) {
  if (train_set.count == 0) throw training_error("train: empty training set");
  const int factor = resolution_factor(m.graph, train_set);
  const bool use_kd = teacher != nullptr && kd != nullptr && kd->enabled;

  rng_stream r(cfg.seed);
  SgdState<float> sgd;
  Workspace<float> ws, tws;
  TrainResult result;

  std::vector<long long> order(train_set.count);
  for (long long i = 0; i < train_set.count; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule_lr(cfg, epoch);
    // Fisher-Yates shuffle from the session stream.
    for (long long i = train_set.count - 1; i > 0; --i)
      std::swap(order[i], order[r.below(static_cast<int>(i + 1))]);

    double loss_sum = 0.0;
    long long seen = 0, hits = 0;
    for (long long start = 0; start < train_set.count; start += cfg.batch_size) {
      const long long stop = std::min(train_set.count, start + cfg.batch_size);
      std::vector<long long> idx(order.begin() + start, order.begin() + stop);
      TensorF batch = make_batch(train_set, idx);
      if (cfg.augment) augment_batch(batch, r);
      std::vector<int> labels(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) labels[i] = train_set.labels[idx[i]];

      LossGrad<float> lg;
      const TensorF student_in = factor > 1 ? downscale_batch(batch, factor) : batch;
      const TensorF& logits = forward(m, student_in, RunMode::Train, ws);
      if (use_kd) {
        const TensorF& tlogits = forward(*teacher, batch, RunMode::Eval, tws);
        lg = kd_loss(logits, tlogits, labels, kd->temperature, kd->hard_weight);
      } else {
        lg = softmax_ce(logits, labels);
      }
      if (!std::isfinite(lg.loss))
        throw training_error("train: diverged (non-finite loss at epoch " +
                             std::to_string(epoch) + ")");
      loss_sum += lg.loss * static_cast<double>(idx.size());
      hits += static_cast<long long>(accuracy(logits, labels) * idx.size() + 0.5);
      seen += static_cast<long long>(idx.size());

      auto grads = backward(m, ws, lg.dlogits);
      sgd_step(m, grads, sgd, lr, cfg.momentum, cfg.weight_decay);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = loss_sum / seen;
    stats.train_acc = static_cast<double>(hits) / seen;
    stats.val_acc = val_set.count > 0 ? evaluate(m, val_set) : 0.0;
    result.history.push_back(stats);
  }
  result.final_val_acc = result.history.empty() ? 0.0 : result.history.back().val_acc;
  return result;
}

double evaluate(Model<float>& m, const Dataset& ds, int batch_size) {
  if (ds.count == 0) throw training_error("evaluate: empty dataset");
  const int factor = resolution_factor(m.graph, ds);
  Workspace<float> ws;
  long long hits = 0;
  for (long long start = 0; start < ds.count; start += batch_size) {
    const long long stop = std::min(ds.count, start + batch_size);
    std::vector<long long> idx(stop - start);
    for (long long i = start; i < stop; ++i) idx[i - start] = i;
    TensorF batch = make_batch(ds, idx);
    if (factor > 1) batch = downscale_batch(batch, factor);
    std::vector<int> labels(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) labels[i] = ds.labels[idx[i]];
    const TensorF& logits = forward(m, batch, RunMode::Eval, ws);
    hits += static_cast<long long>(accuracy(logits, labels) * idx.size() + 0.5);
  }
  return static_cast<double>(hits) / ds.count;
}

double grad_check(Model<double>& m, const Tensor<double>& x,
                  const std::vector<int>& labels, double eps) {
  Workspace<double> ws;
  const TensorD& logits = forward(m, x, RunMode::TrainFrozen, ws);
  auto lg = softmax_ce(logits, labels);
  const auto grads = backward(m, ws, lg.dlogits);

  auto loss_at = [&](void) {
    Workspace<double> w2;
    const TensorD& lgt = forward(m, x, RunMode::TrainFrozen, w2);
    return softmax_ce(lgt, labels).loss;
  };

  double worst = 0.0;
  for (auto& [name, g] : grads) {
    auto& w = m.weights.at(name);
    const long long n = w.numel();
    const long long stride = std::max(1LL, n / 200);
    for (long long i = 0; i < n; i += stride) {
      const double keep = w.data[i];
      w.data[i] = keep + eps;
      const double up = loss_at();
      w.data[i] = keep - eps;
      const double down = loss_at();
      w.data[i] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = g.data[i];
      const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-5});
      worst = std::max(worst, std::fabs(numeric - analytic) / denom);
    }
  }
  return worst;
}

template struct Model<float>;
template struct Model<double>;
template Model<float> make_model<float>(const NetworkGraph&, uint64_t);
template Model<double> make_model<double>(const NetworkGraph&, uint64_t);
template Model<float> cast_model<float>(const Model<float>&);
template Model<double> cast_model<double>(const Model<float>&);
template const TensorF& forward<float>(ModelF&, const TensorF&, RunMode, Workspace<float>&);
template const TensorD& forward<double>(ModelD&, const TensorD&, RunMode, Workspace<double>&);
template std::map<std::string, TensorF> backward<float>(const ModelF&, const Workspace<float>&,
                                                        const TensorF&);
template std::map<std::string, TensorD> backward<double>(const ModelD&,
                                                         const Workspace<double>&,
                                                         const TensorD&);
template LossGrad<float> softmax_ce<float>(const TensorF&, const std::vector<int>&);
template LossGrad<double> softmax_ce<double>(const TensorD&, const std::vector<int>&);
template LossGrad<float> kd_loss<float>(const TensorF&, const TensorF&,
                                        const std::vector<int>&, double, double);
template LossGrad<double> kd_loss<double>(const TensorD&, const TensorD&,
                                          const std::vector<int>&, double, double);
template double accuracy<float>(const TensorF&, const std::vector<int>&);
template double accuracy<double>(const TensorD&, const std::vector<int>&);
template void sgd_step<float>(ModelF&, const std::map<std::string, TensorF>&,
                              SgdState<float>&, double, double, double);
template void sgd_step<double>(ModelD&, const std::map<std::string, TensorD>&,
                               SgdState<double>&, double, double, double);

}  // namespace relureduce
