#pragma once

// Dense row-major tensors. The scalar type is a template parameter: model
// code instantiates T=float (with 64-bit accumulators inside reductions, see
// graph.hpp), gradient checking replays the same graphs at T=double.

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace losskern {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel(shape_)), fill);
  }
  static Tensor from(Shape shape, std::vector<T> values) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape))
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }
  static Tensor scalar(T v) { return from({}, {v}); }

  // Re-dimension in place, preserving capacity; contents are unspecified.
  void reset(const Shape& shape) {
    shape_ = shape;
    data_.resize(static_cast<size_t>(numel(shape_)));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<size_t>(axis)); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }
  std::span<T> flat() { return {data_.data(), data_.size()}; }
  std::span<const T> flat() const { return {data_.data(), data_.size()}; }

  void fill(T v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      for (T v : data_)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using IntTensor = Tensor<std::int32_t>;

}  // namespace losskern
