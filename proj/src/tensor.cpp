#include "tesu/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "tesu/error.hpp"

namespace tesu {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kEmptySupervision: return "empty-supervision";
    case ErrorKind::kState: return "state";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kDependency: return "dependency";
    case ErrorKind::kContextOverflow: return "context-overflow";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInternal: return "internal";
  }
  return "unknown";
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) fail(ErrorKind::kDimension, "zero extent in shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  Tensor t(std::move(impl));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorKind::kDimension, "shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
  }
  for (auto d : shape) {
    if (d == 0) fail(ErrorKind::kDimension, "zero extent in shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data.assign(values.begin(), values.end());
  Tensor t(std::move(impl));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) fail(ErrorKind::kState, "use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::numel() const { return impl().data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.empty() ? 1 : s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() < 2) return s.empty() ? 1 : 1;
  return s[1];
}

std::span<Real> Tensor::data() { return impl().data; }
std::span<const Real> Tensor::data() const { return impl().data; }

Real& Tensor::at(std::size_t i, std::size_t j) { return impl().data[i * cols() + j]; }
Real Tensor::at(std::size_t i, std::size_t j) const { return impl().data[i * cols() + j]; }

Real Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::kDimension, "item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& im = impl();
  im.requires_grad = flag;
  if (flag) {
    im.grad.assign(im.data.size(), Real(0));
  } else {
    im.grad.clear();
    im.grad.shrink_to_fit();
  }
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<Real> Tensor::grad() const { return impl().grad; }

void Tensor::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), Real(0));
}

Tensor Tensor::clone() const {
  auto copy = std::make_shared<Impl>(impl());
  return Tensor(std::move(copy));
}

Tensor Tensor::detach() const {
  auto copy = std::make_shared<Impl>();
  copy->shape = impl().shape;
  copy->data = impl().data;
  return Tensor(std::move(copy));
}

void Tape::record(Tensor output, Backward backward) {
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& scalar) {
  if (scalar.numel() != 1) {
    fail(ErrorKind::kDimension, "backward() needs a scalar, got " + shape_str(scalar.shape()));
  }
  if (!scalar.requires_grad()) {
    fail(ErrorKind::kState, "backward() on a tensor that does not require grad");
  }
  Tensor seed = scalar;
  seed.grad()[0] += Real(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward();
  }
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeGuard::TapeGuard(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeGuard::~TapeGuard() { g_active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = previous_; }

}  // namespace tesu
