#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace centrifuge {

/// 64-byte aligned storage. Vectorized reductions peel according to the
/// address, so alignment must not depend on heap state for results to be
/// reproducible bit for bit.
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
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

/// Dense row-major tensor with a dynamic shape. Used by the network code in
/// N x C x D x H x W order.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T{})
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  using Storage = std::vector<T, AlignedAllocator<T>>;

  Storage& values() { return data_; }
  const Storage& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void reshape(std::vector<int> shape) {
    if (count(shape) != data_.size())
      throw std::invalid_argument("Tensor::reshape: element count mismatch");
    shape_ = std::move(shape);
  }

  /// Resize to `shape`; contents are zeroed.
  void reset(std::vector<int> shape) {
    shape_ = std::move(shape);
    data_.assign(count(shape_), T{});
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Elements per leading index (e.g. per sample for NCDHW).
  std::size_t stride0() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<int> shape_;
  Storage data_;
};

using TensorF = Tensor<float>;

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace centrifuge
