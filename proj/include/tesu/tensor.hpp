#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace tesu {

#ifdef TESU_REAL64
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

// Fixed 64-byte alignment, so vectorized kernels split work the same way on
// every run regardless of where the heap happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<Real, AlignedAllocator<Real>>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array with an optional gradient buffer. Tensor is a
// handle: copies share storage, use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values,
                     bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Real> data();
  std::span<const Real> data() const;
  Real* ptr() { return data().data(); }
  const Real* ptr() const { return data().data(); }
  Real& at(std::size_t i, std::size_t j);
  Real at(std::size_t i, std::size_t j) const;
  Real item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Gradient storage is accumulation state shared by every handle.
  std::span<Real> grad() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const;

  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Ordered record of differentiable ops. Ops executed while a Tape is active
// (see TapeGuard) and touching at least one requires_grad input append a
// backward closure; backward() replays them once each in reverse order.
class Tape {
 public:
  using Backward = std::function<void()>;

  void record(Tensor output, Backward backward);
  void backward(const Tensor& scalar);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    Backward backward;
  };
  std::vector<Entry> entries_;
};

Tape* active_tape();

class TapeGuard {
 public:
  explicit TapeGuard(Tape& tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording inside a scope (frozen-inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

}  // namespace tesu
