#include "fg2e/optimizer.hpp"

#include <cmath>
#include <cstdio>

namespace fg2e {

namespace {

void check_finite(const double* g, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(g[i])) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "non-finite gradient: element %zu of %zu is %g", i, n, g[i]);
      throw NonFiniteGradientError(buf);
    }
  }
}

void update(double* p, const double* g, double* m, double* v, size_t n, long long step,
            const AdamConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
  for (size_t i = 0; i < n; ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    p[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
  }
}

}  // namespace

AdamState make_adam_state(const std::vector<int>& dims) {
  AdamState s;
  s.m = Tensor(dims);
  s.v = Tensor(dims);
  return s;
}

void adam_step(Tensor& params, const Tensor& grad, AdamState& state, const AdamConfig& cfg) {
  if (!params.same_shape(grad) || !params.same_shape(state.m))
    throw std::invalid_argument("adam: parameter/gradient/moment shape mismatch");
  check_finite(grad.data(), grad.size());
  update(params.data(), grad.data(), state.m.data(), state.v.data(), params.size(),
         state.step + 1, cfg);
  ++state.step;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grad.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam: parameter/gradient/moment shape mismatch");
  if (params.empty()) {
    ++state.step;
    return;
  }
  check_finite(grad.data(), grad.size());
  update(params.data(), grad.data(), state.m.data(), state.v.data(), params.size(),
         state.step + 1, cfg);
  ++state.step;
}

}  // namespace fg2e
