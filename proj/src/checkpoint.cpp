#include "tesu/checkpoint.hpp"

#include <cmath>
#include <limits>

#include "tesu/binio.hpp"
#include "tesu/error.hpp"

namespace tesu {

const char* component_name(ComponentTag tag) {
  switch (tag) {
    case ComponentTag::kUnifiedEncoder: return "unified-encoder";
    case ComponentTag::kLanguageModel: return "language-model";
    case ComponentTag::kProjector: return "projector";
  }
  return "unknown";
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  binio::Writer w;
  w.raw("TESU");
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(ckpt.tag));
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      fail(ErrorKind::kFormat, "tensor name too long: " + name.substr(0, 32) + "...");
    }
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (Real v : t.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  binio::Reader r(bytes);
  if (bytes.size() < 13 || r.raw(4) != "TESU") fail(ErrorKind::kFormat, "checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kFormat, "checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto tag = r.u8();
  if (tag < 1 || tag > 3) fail(ErrorKind::kFormat, "checkpoint: unknown component tag " + std::to_string(tag));
  ckpt.tag = static_cast<ComponentTag>(tag);
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16();
    std::string name(r.raw(len));
    const auto rank = r.u8();
    if (rank == 0) fail(ErrorKind::kFormat, "checkpoint: tensor '" + name + "' has rank 0");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) fail(ErrorKind::kFormat, "checkpoint: tensor '" + name + "' has a zero extent");
      numel *= d;
    }
    if (r.remaining() < numel * 4) fail(ErrorKind::kFormat, "checkpoint: tensor '" + name + "' truncated");
    std::vector<Real> values(numel);
    for (auto& v : values) v = static_cast<Real>(r.f32());
    ckpt.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (!r.done()) fail(ErrorKind::kFormat, "checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  binio::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(binio::read_file(path));
}

void set_config_hash(Checkpoint& ckpt, std::uint64_t hash) {
  std::vector<Real> bytes(8);
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<Real>((hash >> (8 * i)) & 0xFF);
  for (auto& [name, t] : ckpt.tensors) {
    if (name == kConfigHashTensor) {
      t = Tensor::from({8}, std::move(bytes));
      return;
    }
  }
  ckpt.tensors.emplace_back(kConfigHashTensor, Tensor::from({8}, std::move(bytes)));
}

std::optional<std::uint64_t> config_hash(const Checkpoint& ckpt) {
  const Tensor* t = ckpt.find(kConfigHashTensor);
  if (!t || t->numel() != 8) return std::nullopt;
  std::uint64_t hash = 0;
  for (int i = 0; i < 8; ++i) {
    const double b = t->data()[static_cast<std::size_t>(i)];
    if (b < 0 || b > 255 || b != std::floor(b)) return std::nullopt;
    hash |= static_cast<std::uint64_t>(b) << (8 * i);
  }
  return hash;
}

NamedTensors model_tensors(const Checkpoint& ckpt) {
  NamedTensors out;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("meta.", 0) != 0) out.emplace_back(name, t);
  }
  return out;
}

}  // namespace tesu
