#pragma once

#include <span>
#include <vector>

#include "tesu/tensor.hpp"

namespace tesu {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Shape> shapes;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  long step = 0;
};

AdamState adam_init(std::span<const Tensor> params);

// One bias-corrected Adam update from the grads currently held by params.
// Throws ErrorKind::kState when a parameter's shape differs from the state.
void adam_step(std::span<Tensor> params, AdamState& state, double lr,
               const AdamConfig& cfg = {});

void zero_grads(std::span<Tensor> params);
double grad_norm(std::span<const Tensor> params);
void clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace tesu
