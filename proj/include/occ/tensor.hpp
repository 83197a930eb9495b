#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace occ {

// Dense row-major tensor with a fixed rank. The last index varies fastest.
template <typename T, std::size_t Rank>
class Tensor {
 public:
  using value_type = T;
  using Shape = std::array<std::size_t, Rank>;

  Tensor() { shape_.fill(0); }

  explicit Tensor(const Shape& shape, T fill = T{})
      : shape_(shape), data_(count(shape), fill) {}

  Tensor(const Shape& shape, std::vector<T> values)
      : shape_(shape), data_(std::move(values)) {
    if (data_.size() != count(shape_)) {
      throw std::invalid_argument("tensor: value count does not match shape");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  template <typename... Idx>
  T& operator()(Idx... idx) {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  const T& operator()(Idx... idx) const {
    return data_[offset(idx...)];
  }

  template <typename... Idx>
  std::size_t offset(Idx... idx) const noexcept {
    static_assert(sizeof...(Idx) == Rank, "index count must equal rank");
    const std::array<std::size_t, Rank> ix{static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t a = 0; a < Rank; ++a) off = off * shape_[a] + ix[a];
    return off;
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
using Grid2D = Tensor<T, 2>;
template <typename T>
using Grid3D = Tensor<T, 3>;

template <typename T, std::size_t R>
bool same_shape(const Tensor<T, R>& a, const Tensor<T, R>& b) {
  return a.shape() == b.shape();
}

template <typename A, typename B, std::size_t R>
void require_same_shape(const Tensor<A, R>& a, const Tensor<B, R>& b,
                        const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

}  // namespace occ
