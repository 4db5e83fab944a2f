#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fg2e/tensor.hpp"

namespace fg2e {

// Raised when a gradient carries NaN/inf; the message includes the offending
// index and value so aborted runs are diagnosable from the log alone.
class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(const std::string& what) : std::runtime_error(what) {}
};

struct AdamConfig {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators for one parameter tensor (or coefficient
// vector, stored as a flat tensor).
struct AdamState {
  Tensor m;
  Tensor v;
  long long step = 0;  // completed updates; bias correction uses step + 1
};

AdamState make_adam_state(const std::vector<int>& dims);

// Standard bias-corrected Adam update, in place. Throws
// NonFiniteGradientError before touching any state if grad is not finite.
void adam_step(Tensor& params, const Tensor& grad, AdamState& state, const AdamConfig& cfg);

// Coefficient-vector flavor used for the identity weights.
void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& state,
               const AdamConfig& cfg);

}  // namespace fg2e
