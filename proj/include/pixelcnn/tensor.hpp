#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pixelcnn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Shape or argument mismatch between tensors.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced by a numerical operation. Never propagated silently.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file or stream (IDX, CIFAR, PNG, checkpoint).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <class S>
struct TensorData {
  Shape shape;
  ArrayX<S> values;
  ArrayX<S> grad;  // empty while no gradient has been accumulated
  bool requires_grad = false;
};

/// Dense N-dimensional array stored row-major (last axis fastest).
///
/// Tensor is a cheap handle: copies share the underlying buffer, which is
/// what the tape needs to accumulate gradients into leaves that outlive a
/// training step. Use clone() for a deep copy.
template <class S>
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData<S>>()) {}

  explicit Tensor(Shape shape) : d_(std::make_shared<TensorData<S>>()) {
    d_->shape = std::move(shape);
    d_->values = ArrayX<S>::Zero(shape_size(d_->shape));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    t.values().setConstant(v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> vals) {
    Tensor t;
    if (shape_size(shape) != static_cast<Index>(vals.size()))
      throw ShapeError("from: " + std::to_string(vals.size()) +
                       " values for shape " + shape_str(shape));
    t.d_->shape = std::move(shape);
    t.d_->values = Eigen::Map<const ArrayX<S>>(vals.data(), vals.size());
    return t;
  }

  const Shape& shape() const { return d_->shape; }
  Index size() const { return d_->values.size(); }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  Index dim(int i) const { return d_->shape.at(static_cast<std::size_t>(i)); }

  ArrayX<S>& values() { return d_->values; }
  const ArrayX<S>& values() const { return d_->values; }
  S* data() { return d_->values.data(); }
  const S* data() const { return d_->values.data(); }

  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw ShapeError("index rank mismatch for shape " + shape_str(shape()));
    Index off = 0;
    int i = 0;
    for (Index v : idx) {
      Index ext = d_->shape[static_cast<std::size_t>(i)];
      if (v < 0 || v >= ext)
        throw ShapeError("index out of range for shape " + shape_str(shape()));
      off = off * ext + v;
      ++i;
    }
    return off;
  }

  S& at(std::initializer_list<Index> idx) { return d_->values(offset(idx)); }
  S at(std::initializer_list<Index> idx) const { return d_->values(offset(idx)); }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    d_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return d_->grad.size() == d_->values.size(); }

  /// Gradient buffer, allocated (zeroed) on first access.
  ArrayX<S>& grad() {
    if (!has_grad()) d_->grad = ArrayX<S>::Zero(d_->values.size());
    return d_->grad;
  }
  const ArrayX<S>& grad() const {
    if (!has_grad()) throw ShapeError("grad accessed before backward");
    return d_->grad;
  }

  void zero_grad() {
    if (has_grad()) d_->grad.setZero();
  }

  Tensor clone() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  /// Stable identity of the underlying buffer (tape bookkeeping).
  const void* id() const { return d_.get(); }
  const std::shared_ptr<TensorData<S>>& ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData<S>> d_;
};

using LevelTensor = Tensor<std::int32_t>;

template <class S>
inline void check_finite(const Tensor<S>& t, const char* op) {
  if (!t.values().allFinite())
    throw NumericError(std::string(op) + ": non-finite value produced");
}

template <class S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                               const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace pixelcnn
