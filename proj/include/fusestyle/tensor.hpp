#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace fusestyle {

// Dense shape record. Extents are ordered [batch, channels, height, width]
// for 4-D tensors; arbitrary rank is supported.
struct Shape {
  std::vector<int64_t> dims;

  Shape() = default;
  Shape(std::initializer_list<int64_t> d);
  explicit Shape(std::vector<int64_t> d);

  int64_t rank() const { return static_cast<int64_t>(dims.size()); }
  int64_t numel() const;
  int64_t operator[](int64_t i) const { return dims[static_cast<size_t>(i)]; }
  bool operator==(const Shape& other) const { return dims == other.dims; }
  std::string to_string() const;
};

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Value-semantics handle onto shared tensor storage. Flat row-major 64-bit
// floats; no strides or views.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int64_t size() const { return static_cast<int64_t>(d_->values.size()); }
  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }

  // Scalar extraction; contract error on non-scalar tensors.
  double item() const;

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool v) { d_->requires_grad = v; }

  // Gradient buffer, allocated as zeros on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool has_grad() const { return d_ && !d_->grad.empty(); }
  void zero_grad();

  const std::shared_ptr<TensorData>& data_ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Ordered log of recorded operations. Operations append their backward rule
// during the forward pass (execution order is topological by construction);
// backward() replays the rules in reverse, accumulating gradients additively.
//
// A tape is single-threaded and one-shot: backward() may run once per
// recording, reset() clears the log for reuse.
class GradientTape {
 public:
  GradientTape() = default;
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  void record(std::function<void()> backward_rule);
  void backward(const Tensor& loss);
  void reset();

  size_t num_ops() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// RAII guard binding a tape as the thread's active recorder. Operations
// record backward rules only while a tape is active and some input requires
// gradients.
class TapeScope {
 public:
  explicit TapeScope(GradientTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradientTape* previous_;
};

GradientTape* active_tape();

// Runs backward on the thread's active tape.
void backward(const Tensor& loss);

namespace detail {
// Allocates the grad buffer (zeros) if absent.
std::vector<double>& ensure_grad(TensorData& d);
// Throws NumericError if any value is NaN/Inf.
void check_finite(const char* op, const std::vector<double>& values);
// Swaps the thread's active tape pointer; returns the previous one.
GradientTape* exchange_active_tape(GradientTape* next);
}  // namespace detail

}  // namespace fusestyle
