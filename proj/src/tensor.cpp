#include "fusestyle/tensor.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "fusestyle/error.hpp"

namespace fusestyle {

Shape::Shape(std::initializer_list<int64_t> d) : Shape(std::vector<int64_t>(d)) {}

Shape::Shape(std::vector<int64_t> d) : dims(std::move(d)) {
  for (int64_t e : dims) {
    if (e < 1) throw DimensionError(fmt::format("shape extent must be >= 1, got {} in {}", e, to_string()));
  }
}

int64_t Shape::numel() const {
  int64_t n = 1;
  for (int64_t e : dims) n *= e;
  return n;
}

std::string Shape::to_string() const {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : d_(std::make_shared<TensorData>()) {
  d_->shape = std::move(shape);
  d_->values.assign(static_cast<size_t>(d_->shape.numel()), fill);
  d_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) : d_(std::make_shared<TensorData>()) {
  if (static_cast<int64_t>(values.size()) != shape.numel()) {
    throw DimensionError(fmt::format("value count {} does not match shape {} ({} elements)", values.size(),
                                     shape.to_string(), shape.numel()));
  }
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor(Shape{1}, {v}, requires_grad); }

double Tensor::item() const {
  if (!d_ || d_->values.size() != 1) throw ContractError("item() requires a scalar tensor");
  return d_->values[0];
}

std::vector<double>& Tensor::grad() { return detail::ensure_grad(*d_); }

const std::vector<double>& Tensor::grad() const { return detail::ensure_grad(*d_); }

void Tensor::zero_grad() {
  if (d_ && !d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

namespace {
thread_local GradientTape* g_active_tape = nullptr;
}

void GradientTape::record(std::function<void()> backward_rule) {
  nodes_.push_back(std::move(backward_rule));
}

void GradientTape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward() called twice on one tape; reset() first");
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  consumed_ = true;
  detail::ensure_grad(*loss.data_ptr())[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void GradientTape::reset() {
  nodes_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(GradientTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

GradientTape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!g_active_tape) throw ContractError("backward() called with no active tape");
  g_active_tape->backward(loss);
}

namespace detail {

std::vector<double>& ensure_grad(TensorData& d) {
  if (d.grad.empty()) d.grad.assign(d.values.size(), 0.0);
  return d.grad;
}

void check_finite(const char* op, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(fmt::format("{}: non-finite value in output", op));
  }
}

GradientTape* exchange_active_tape(GradientTape* next) {
  GradientTape* prev = g_active_tape;
  g_active_tape = next;
  return prev;
}

}  // namespace detail

}  // namespace fusestyle
