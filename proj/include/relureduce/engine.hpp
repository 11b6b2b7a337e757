#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "relureduce/graph.hpp"
#include "relureduce/tensor.hpp"

namespace relureduce {

// Parameters are keyed "n<id>.<name>": conv -> weight[/bias]; batchnorm ->
// gamma, beta, running_mean, running_var; fully connected -> weight, bias.
template <class T>
struct Model {
  NetworkGraph graph;
  std::map<std::string, Tensor<T>> weights;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

// He-normal initialisation, deterministic in the seed.
template <class T>
Model<T> make_model(const NetworkGraph& g, uint64_t seed);

template <class T>
Model<T> cast_model(const Model<float>& m);

bool is_trainable_param(const std::string& name);

enum class RunMode {
  Train,        // batch statistics; running stats updated
  TrainFrozen,  // batch statistics; running stats untouched (gradient checks)
  Eval,         // running statistics
};

template <class T>
struct Workspace {
  RunMode mode = RunMode::Eval;
  Tensor<T> input;
  std::map<int, Tensor<T>> acts;
  std::map<int, Tensor<T>> bn_saved;  // [2C]: batch mean, then inverse std
  std::map<int, std::vector<int>> pool_argmax;
};

// x is [N,C,H,W]; returns the sink activation viewed as [N, classes].
template <class T>
const Tensor<T>& forward(Model<T>& m, const Tensor<T>& x, RunMode mode, Workspace<T>& ws);

// Gradients of the trainable parameters given d(loss)/d(logits).
template <class T>
std::map<std::string, Tensor<T>> backward(const Model<T>& m, const Workspace<T>& ws,
                                          const Tensor<T>& dlogits);

template <class T>
struct LossGrad {
  double loss = 0.0;
  Tensor<T> dlogits;
};

template <class T>
LossGrad<T> softmax_ce(const Tensor<T>& logits, const std::vector<int>& labels);

// hard_weight * CE(student, labels)
//   + (1 - hard_weight) * T^2 * KL(softmax(teacher/T) || softmax(student/T))
template <class T>
LossGrad<T> kd_loss(const Tensor<T>& student, const Tensor<T>& teacher,
                    const std::vector<int>& labels, double temperature,
                    double hard_weight);

template <class T>
double accuracy(const Tensor<T>& logits, const std::vector<int>& labels);

struct TrainConfig {
  double lr0 = 0.1;
  int batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 4e-4;
  int epochs = 120;
  std::string schedule = "step";  // step | cosine
  int step_every = 30;
  double step_divide = 10.0;
  uint64_t seed = 1;
  bool augment = false;  // pad-4 random crop + horizontal flip
};

struct KDConfig {
  bool enabled = false;
  double temperature = 4.0;
  double hard_weight = 0.9;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0, train_loss = 0.0, train_acc = 0.0, val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double final_val_acc = 0.0;
};

double schedule_lr(const TrainConfig& cfg, int epoch);

template <class T>
struct SgdState {
  std::map<std::string, Tensor<T>> velocity;
};

// v = momentum * v + (grad + weight_decay * w); w -= lr * v
template <class T>
void sgd_step(Model<T>& m, const std::map<std::string, Tensor<T>>& grads,
              SgdState<T>& state, double lr, double momentum, double weight_decay);

struct Dataset {
  int channels = 0, height = 0, width = 0, classes = 0;
  std::vector<float> images;  // count * C * H * W
  std::vector<int> labels;
  long long count = 0;
};

// Gather indexed samples into a batch tensor (optionally downscaled by an
// integer factor via average pooling, for students running at reduced rho).
TensorF make_batch(const Dataset& ds, const std::vector<long long>& idx);
TensorF downscale_batch(const TensorF& x, int factor);

// Trains in place. When `teacher` is given the loss is the distillation loss;
// the teacher always sees the full-resolution batch. Throws training_error on
// divergence (non-finite loss).
TrainResult train(Model<float>& m, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, Model<float>* teacher = nullptr,
                  const KDConfig* kd = nullptr);

double evaluate(Model<float>& m, const Dataset& ds, int batch_size = 256);

// Central-difference check of the full backward pass under cross-entropy,
// batch statistics frozen. Returns the max relative error over all trainable
// parameter elements.
double grad_check(Model<double>& m, const Tensor<double>& x,
                  const std::vector<int>& labels, double eps = 1e-5);

extern template struct Model<float>;
extern template struct Model<double>;

}  // namespace relureduce
