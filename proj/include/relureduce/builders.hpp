#pragma once
#include <string>

#include "relureduce/graph.hpp"

namespace relureduce {

struct ArchitectureSpec {
  std::string family;  // resnet18|resnet34|resnet56|resnet10|resnet9|resnet6|vgg16|mobilenetv1
  int input = 32;      // square input resolution
  int channels = 3;
  int classes = 10;
  bool strip_residuals = false;
  double alpha = 1.0;  // width multiplier over every conv/hidden-FC width
  double rho = 1.0;    // resolution multiplier over the input
};

// Channel counts round half-up (never below 1); spatial dims floor (never below 1).
int scale_channels(int c, double alpha);
int scale_dim(int d, double rho);

// Builds, shape-infers and validates one of the supported families.
// Throws build_error on unsupported families or impossible geometry.
NetworkGraph build_architecture(const ArchitectureSpec& spec);

}  // namespace relureduce
