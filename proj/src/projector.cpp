#include "tesu/projector.hpp"

#include <cmath>

#include "tesu/error.hpp"
#include "tesu/rng.hpp"

namespace tesu {

Projector Projector::init(const ProjectorConfig& cfg, std::uint64_t seed) {
  if (cfg.latent_dim == 0 || cfg.hidden_dim == 0 || cfg.model_dim == 0) {
    fail(ErrorKind::kConfig, "projector: dimensions must be positive");
  }
  Projector p;
  p.cfg_ = cfg;
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  std::vector<Real> w(cfg.latent_dim * cfg.hidden_dim);
  for (auto& v : w) v = static_cast<Real>(rng.uniform(-bound, bound));
  p.in_ = {Tensor::from({cfg.latent_dim, cfg.hidden_dim}, std::move(w)), Tensor::zeros({cfg.hidden_dim})};
  p.out_ = nn::Linear::zeros(cfg.hidden_dim, cfg.model_dim);
  return p;
}

Projector Projector::from_checkpoint(const Checkpoint& ckpt, const ProjectorConfig& cfg) {
  if (ckpt.tag != ComponentTag::kProjector) {
    fail(ErrorKind::kFormat, std::string("expected a projector checkpoint, got ") + component_name(ckpt.tag));
  }
  Projector p = init(cfg, 0);
  nn::assign_tensors(p.parameters(), model_tensors(ckpt));
  return p;
}

Tensor Projector::operator()(const Tensor& latents) const {
  if (!latents.defined() || latents.rank() != 2 || latents.rows() == 0) {
    fail(ErrorKind::kInvalidArgument, "project: empty latent sequence");
  }
  if (latents.cols() != cfg_.latent_dim) {
    fail(ErrorKind::kDimension, "project: latents " + shape_str(latents.shape()) + " but projector expects width " +
                                    std::to_string(cfg_.latent_dim));
  }
  return out_(gelu(in_(latents)));
}

Tensor Projector::project(const LatentSeq& latents) const { return (*this)(latents.values); }

std::size_t Projector::parameter_count() const { return nn::parameter_count(parameters()); }

NamedTensors Projector::parameters() const {
  NamedTensors out;
  in_.collect(out, "projector.in");
  out_.collect(out, "projector.out");
  return out;
}

Checkpoint Projector::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.tag = ComponentTag::kProjector;
  for (const auto& [name, t] : parameters()) ckpt.tensors.emplace_back(name, t.detach());
  return ckpt;
}

}  // namespace tesu
