#pragma once

#include <cstddef>

namespace tesu {

struct ScheduleCfg {
  double base_lr = 1e-4;
  double warmup_frac = 0.03;
  std::size_t total_steps = 1;
  std::size_t batch_size = 64;
  std::size_t epochs = 3;
};

void validate(const ScheduleCfg& cfg);

// Steps spent in the linear warm-up: ceil(warmup_frac * total_steps).
std::size_t warmup_steps(const ScheduleCfg& cfg);

// Linear ramp 0 -> base_lr over the warm-up, cosine decay to 0 at total_steps.
double lr_at(std::size_t step, const ScheduleCfg& cfg);

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size);

}  // namespace tesu
