#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "al2/errors.hpp"

namespace al2 {

#ifdef AL2_REAL_IS_FLOAT
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense n-d array with an optional same-shape gradient buffer. Handles share
// storage: copying a Tensor copies a reference, not the data. Values are
// treated as immutable once an op has produced them; leaves (parameters,
// batchnorm buffers) are the only tensors mutated in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int64_t size() const { return static_cast<int64_t>(d_->v.size()); }
  int64_t dim(size_t i) const { return d_->shape.at(i); }
  int64_t ndim() const { return static_cast<int64_t>(d_->shape.size()); }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  real* data() { return d_->v.data(); }
  const real* data() const { return d_->v.data(); }
  std::vector<real>& values() { return d_->v; }
  const std::vector<real>& values() const { return d_->v; }
  real item() const;

  bool has_grad() const { return !d_->g.empty(); }
  // Allocates (zeroed) on first use. Const because a Tensor is a shared
  // handle: the gradient buffer belongs to the storage, not the handle.
  real* grad() const;
  const std::vector<real>& grad_values() const { return d_->g; }
  void zero_grad();
  void drop_grad() { d_->g.clear(); d_->g.shrink_to_fit(); }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  struct Data {
    Shape shape;
    std::vector<real> v;
    bool requires_grad = false;
    std::vector<real> g;
  };
  std::shared_ptr<Data> d_;
};

// Reverse-mode tape. Ops append a closure per recorded primitive; closures run
// in reverse recording order, which is a valid reverse topological order since
// every op is recorded after its inputs were produced. backward() clears the
// tape, so one tape serves exactly one forward/backward cycle.
class Tape {
 public:
  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  void backward(Tensor& loss);

  size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

void check_finite(const Tensor& t, const char* op_name);

}  // namespace al2
