#include "tesu/optim.hpp"

#include <cmath>

#include "tesu/error.hpp"

namespace tesu {

AdamState adam_init(std::span<const Tensor> params) {
  AdamState state;
  for (const auto& p : params) {
    state.shapes.push_back(p.shape());
    state.m.emplace_back(p.numel(), Real(0));
    state.v.emplace_back(p.numel(), Real(0));
  }
  return state;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamConfig& cfg) {
  if (params.size() != state.shapes.size()) {
    fail(ErrorKind::kState, "adam_step: " + std::to_string(params.size()) + " params but state for " +
                                std::to_string(state.shapes.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != state.shapes[i]) {
      fail(ErrorKind::kState, "adam_step: parameter " + std::to_string(i) + " changed shape from " +
                                  shape_str(state.shapes[i]) + " to " + shape_str(params[i].shape()));
    }
    if (!params[i].has_grad()) {
      fail(ErrorKind::kState, "adam_step: parameter " + std::to_string(i) + " has no gradient buffer");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps);
      w[j] = static_cast<Real>(w[j] - update);
    }
  }
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

double grad_norm(std::span<const Tensor> params) {
  double acc = 0.0;
  for (const auto& p : params) {
    for (Real g : p.grad()) acc += static_cast<double>(g) * g;
  }
  return std::sqrt(acc);
}

void clip_grad_norm(std::span<Tensor> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const auto factor = static_cast<Real>(max_norm / norm);
  for (auto& p : params) {
    for (auto& g : p.grad()) g *= factor;
  }
}

}  // namespace tesu
