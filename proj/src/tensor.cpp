#include "al2/tensor.hpp"

#include <cmath>
#include <sstream>

namespace al2 {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

static void validate_shape(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  validate_shape(shape);
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->v.assign(static_cast<size_t>(numel(shape)), value);
  t.d_->shape = std::move(shape);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
  validate_shape(shape);
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->shape = std::move(shape);
  t.d_->v = std::move(values);
  t.d_->requires_grad = requires_grad;
  return t;
}

real Tensor::item() const {
  if (size() != 1) throw ShapeError("item() requires a scalar, got shape " + shape_str(shape()));
  return d_->v[0];
}

real* Tensor::grad() const {
  if (d_->g.empty()) d_->g.assign(d_->v.size(), real(0));
  return d_->g.data();
}

void Tensor::zero_grad() {
  if (!d_->g.empty()) d_->g.assign(d_->v.size(), real(0));
}

void Tape::backward(Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  loss.grad()[0] += real(1);
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

void check_finite(const Tensor& t, const char* op_name) {
  for (real x : t.values()) {
    if (!std::isfinite(x)) {
      throw NonFiniteError(std::string(op_name) + " produced a non-finite value");
    }
  }
}

}  // namespace al2
