#pragma once
#include <stdexcept>

namespace relureduce {

// Error families map onto process exit codes in the CLI driver:
// config_error -> 2, build_error -> 3, training_error -> 4, equivalence_error -> 5.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct build_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct training_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct equivalence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace relureduce
