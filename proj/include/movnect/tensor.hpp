// Dense N-d tensor (rank <= 4, batch x channel x height x width layout).
// Buffers are shared copy-on-write: copies are cheap and values are
// immutable unless explicitly detached through mut().
#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace movnect {

class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) {
    if (dims.size() > kMaxRank) throw std::invalid_argument("shape rank > 4");
    for (int64_t d : dims) {
      if (d < 1) throw std::invalid_argument("shape extent < 1: " + str_of(dims));
      d_[rank_++] = d;
    }
  }

  int rank() const { return rank_; }
  int64_t operator[](int i) const { return d_[i]; }
  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (d_[i] != o.d_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= d_[i];
    return n;
  }

  std::string str() const {
    if (rank_ == 0) return "scalar";
    std::string s;
    for (int i = 0; i < rank_; ++i) {
      if (i) s += 'x';
      s += std::to_string(d_[i]);
    }
    return s;
  }

 private:
  static std::string str_of(std::initializer_list<int64_t> dims) {
    std::string s;
    for (int64_t d : dims) s += std::to_string(d) + ",";
    return s;
  }
  std::array<int64_t, kMaxRank> d_{};
  int rank_ = 0;
};

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(shape), buf_(std::make_shared<std::vector<T>>(shape.numel(), T(0))) {}
  Tensor(Shape shape, std::vector<T> values)
      : shape_(shape), buf_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (static_cast<int64_t>(buf_->size()) != shape_.numel())
      throw std::invalid_argument("tensor buffer length " + std::to_string(buf_->size()) +
                                  " does not match shape " + shape_.str());
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(shape);
    for (T& x : *t.buf_) x = v;
    return t;
  }

  bool empty() const { return !buf_; }
  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  int64_t dim(int i) const { return shape_[i]; }
  int64_t numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }

  const T* data() const { return buf_->data(); }

  // Detaches from any sharing copies before exposing writable storage.
  T* mut() {
    if (buf_.use_count() > 1) buf_ = std::make_shared<std::vector<T>>(*buf_);
    return buf_->data();
  }

  T at(std::initializer_list<int64_t> idx) const { return (*buf_)[offset(idx)]; }
  void set(std::initializer_list<int64_t> idx, T v) {
    int64_t off = offset(idx);
    mut()[off] = v;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(buf_->size());
    for (size_t i = 0; i < buf_->size(); ++i) out[i] = static_cast<U>((*buf_)[i]);
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  int64_t offset(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != shape_.rank())
      throw std::invalid_argument("index rank mismatch for shape " + shape_.str());
    int64_t off = 0;
    int i = 0;
    for (int64_t v : idx) {
      if (v < 0 || v >= shape_[i]) throw std::out_of_range("index out of range in " + shape_.str());
      off = off * shape_[i] + v;
      ++i;
    }
    return off;
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Precision tag used by the weight container.
template <typename T>
constexpr uint8_t precision_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace movnect
