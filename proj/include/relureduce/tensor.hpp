#pragma once
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace relureduce {

// Dense row-major tensor. Activations are [N,C,H,W]; conv weights are
// [out_c, in_c/groups, k, k]; FC weights are [out, in].
template <class T>
struct Tensor {
  std::vector<int> dims;
  std::vector<T> data;
  std::vector<T> grad;  // optional; same length as data when allocated

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
    data.assign(static_cast<size_t>(numel()), T(0));
  }
  long long numel() const {
    long long n = 1;
    for (int d : dims) n *= d;
    return n;
  }
  int dim(int i) const { return dims.at(static_cast<size_t>(i)); }
  void alloc_grad() { grad.assign(data.size(), T(0)); }
  T* p() { return data.data(); }
  const T* p() const { return data.data(); }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Deterministic stream: mt19937_64 (bit-exact across platforms) with explicit
// uniform/normal transforms so no stdlib distribution variance leaks in.
struct rng_stream {
  std::mt19937_64 gen;
  bool has_spare = false;
  double spare = 0.0;

  explicit rng_stream(uint64_t seed) : gen(seed) {}
  uint64_t raw() { return gen(); }
  double uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }
  double normal();
  // Uniform integer in [0, n) via multiply-shift; n must be positive.
  int below(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(raw()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }
};

}  // namespace relureduce
