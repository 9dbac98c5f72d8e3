#pragma once

#include <cmath>
#include <cstdint>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "fedseg/common.hpp"

namespace fedseg {

// 64-byte aligned storage for every numeric buffer the SIMD kernels touch.
// Alignment must not vary between allocations: vector code picks its
// prologue peeling from the address, and an address-dependent summation
// order would break bit-reproducibility across processes.
template <typename T, std::size_t Alignment = 64>
struct AlignedAllocator {
  using value_type = T;
  // The non-type parameter defeats allocator_traits' default rebind.
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Alignment>;
  };

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Alignment>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t(Alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(Alignment));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Alignment>&) const noexcept {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U, Alignment>&) const noexcept {
    return false;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense row-major tensor with value semantics. Layout for activations is
// NHWC; conv kernels are [Kh, Kw, Cin, Cout].
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

  static TensorT full(std::vector<std::int64_t> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static TensorT from_data(std::vector<std::int64_t> shape,
                           std::vector<T> data) {
    if (checked_size(shape) != static_cast<std::int64_t>(data.size())) {
      throw_validation("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
    }
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_.assign(data.begin(), data.end());
    return t;
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  // NHWC accessor.
  T& at4(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) {
    return data_[static_cast<std::size_t>(
        ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
  }
  const T& at4(std::int64_t n, std::int64_t h, std::int64_t w,
               std::int64_t c) const {
    return data_[static_cast<std::size_t>(
        ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (std::int64_t i = 0; i < size(); ++i)
      out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

  std::string shape_str() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<std::int64_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(s[i]);
    }
    out += ")";
    return out;
  }

 private:
  static std::int64_t checked_size(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      if (d <= 0) {
        throw_validation("tensor extents must be positive, got " +
                         shape_string(shape));
      }
      n *= d;
    }
    return n;
  }

  std::vector<std::int64_t> shape_;
  AlignedVector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                      const char* op) {
  if (!a.same_shape(b)) {
    throw_validation(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

}  // namespace fedseg
