#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace comofusion {

/// Allocates on 64-byte boundaries. Eigen picks its vectorised summation
/// order from the runtime alignment of a buffer, so fixing the alignment keeps
/// results bitwise reproducible across allocations.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// NCHW extent. Vectors are stored as (n, c, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense double-precision NCHW tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int y, int x) {
    return data_[index(n, c, y, x)];
  }
  double at(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }

  /// Copy of sample `n` as a (1, c, h, w) tensor.
  Tensor sample(int n) const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }

  Shape shape_{};
  Buffer data_;
};

/// Stack (1, c, h, w) tensors along the batch axis.
Tensor stack(std::span<const Tensor> samples);

}  // namespace comofusion
