#include "tesu/schedule.hpp"

#include <cmath>
#include <string>

#include "tesu/error.hpp"

namespace tesu {

void validate(const ScheduleCfg& cfg) {
  if (!(cfg.warmup_frac >= 0.0 && cfg.warmup_frac < 1.0)) {
    fail(ErrorKind::kConfig, "schedule: warmup_frac must lie in [0, 1)");
  }
  if (cfg.total_steps < 1) fail(ErrorKind::kConfig, "schedule: total_steps must be at least 1");
  if (cfg.batch_size < 1) fail(ErrorKind::kConfig, "schedule: batch_size must be at least 1");
  if (!(cfg.base_lr >= 0.0)) fail(ErrorKind::kConfig, "schedule: base_lr must be non-negative");
}

std::size_t warmup_steps(const ScheduleCfg& cfg) {
  return static_cast<std::size_t>(std::ceil(cfg.warmup_frac * static_cast<double>(cfg.total_steps)));
}

double lr_at(std::size_t step, const ScheduleCfg& cfg) {
  validate(cfg);
  if (step > cfg.total_steps) {
    fail(ErrorKind::kInvalidArgument, "lr_at: step " + std::to_string(step) + " beyond total " +
                                          std::to_string(cfg.total_steps));
  }
  const std::size_t warm = warmup_steps(cfg);
  if (step < warm) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  }
  if (warm >= cfg.total_steps) return cfg.base_lr;
  const double progress =
      static_cast<double>(step - warm) / static_cast<double>(cfg.total_steps - warm);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size) {
  if (batch_size == 0) return 0;
  return (examples + batch_size - 1) / batch_size;
}

}  // namespace tesu
