#pragma once
#include <set>
#include <string>
#include <vector>

#include "relureduce/graph.hpp"

namespace relureduce {

struct ReduceStep {
  std::vector<std::string> culled;   // stages whose ReLUs are all removed
  std::vector<std::string> thinned;  // stages keeping alternate ReLU layers
  std::string parity = "keep-odd";   // keep-odd | keep-even
  double alpha = 1.0;                // channel width multiplier, (0, 1]
  double rho = 1.0;                  // input resolution multiplier, (0, 1]
};

// Remove every ReLU in the listed stages; the stem ReLU is always dropped.
// An empty list is a no-op beyond the stem drop. Unknown labels throw.
NetworkGraph cull(const NetworkGraph& g, const std::vector<std::string>& stages);

// Drop an explicit set of ReLU nodes, rewiring consumers onto each producer
// (stage probes use this to silence everything outside one stage).
NetworkGraph drop_relus(const NetworkGraph& g, const std::set<int>& victims);

// Keep alternate ReLU layers per listed stage. Parity positions are 1-based
// counted from the stage's final ReLU backwards, so keep-odd preserves the
// block-final activation of each residual block (and, on depthwise-separable
// stages, the pointwise ReLUs). A stage with n ReLU layers keeps ceil(n/2).
NetworkGraph thin(const NetworkGraph& g, const std::vector<std::string>& stages,
                  const std::string& parity = "keep-odd");

// Scale every conv/hidden-FC width by alpha (round half-up, min 1) and the
// input resolution by rho (floor, min 1); global pool windows follow along.
NetworkGraph reshape(const NetworkGraph& g, double alpha, double rho);

// cull, then thin, then reshape.
NetworkGraph apply_reduce_step(const NetworkGraph& g, const ReduceStep& step);

std::string step_label(const ReduceStep& step);

}  // namespace relureduce
