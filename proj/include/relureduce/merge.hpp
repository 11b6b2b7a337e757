#pragma once
#include <cstdint>

#include "relureduce/engine.hpp"

namespace relureduce {

// Folds every batchnorm into the conv / fully connected layer directly above
// it: W' = gamma/sqrt(var+eps) * W, b' = gamma*(b-mean)/sqrt(var+eps) + beta
// (running statistics, so outputs match in eval mode). The producer gains a
// bias when it lacks one. Throws build_error when a batchnorm does not sit
// directly on a conv/fc it can fold into.
ModelF fold_batchnorm(const ModelF& m);

// Composes ReLU-free linear chains, batchnorms already folded:
//   - conv following conv merges into one (kernel k1+(k2-1)*s1, stride s1*s2,
//     padding p1) when the second conv has padding 0. With padding the second
//     conv reads zeros at the border of the intermediate map, which no single
//     convolution reproduces, so such pairs are skipped rather than corrupted.
//   - fc following fc merges into one.
//   - an add whose main arm is a single conv absorbs an identity shortcut
//     into the kernel's center tap, and a 1x1 projection shortcut into the
//     tap that reads the projection's pixel.
// Patterns that fail the guards are left untouched. Merging never crosses a
// pooling node, a ReLU, or the flatten into the classifier.
ModelF merge_adjacent_linear(const ModelF& m);

struct EquivalenceReport {
  int n_samples = 0;
  double max_rel_error = 0.0;
  bool pass = false;  // max_rel_error <= tolerance
};

// Max over random probe inputs of |a - b|_inf / |a|_inf, run in eval mode.
// Throws equivalence_error when the two models disagree on shapes.
EquivalenceReport equivalence_check(ModelF& a, ModelF& b, int n_samples = 100,
                                    int batch_size = 10, double tolerance = 1e-4,
                                    uint64_t seed = 101);

// Convenience for reporting: number of conv layers in a graph.
int conv_count(const NetworkGraph& g);

}  // namespace relureduce
