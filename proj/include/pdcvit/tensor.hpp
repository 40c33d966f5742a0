#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pdcvit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major array of doubles with shared-handle semantics: copying a
// Tensor aliases the same storage, which is what lets the tape hand
// gradients back to parameters. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct writes bypass the tape; only for leaves (init, optimizer, loading).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();  // allocates zeros if absent
  void zero_grad();                  // drops the buffer (grad becomes absent)

  Tensor clone() const;   // deep copy, keeps requires_grad, no grad buffer
  Tensor detach() const;  // deep copy, requires_grad = false

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class GradTape;
};

// Allocates an op result; marks it requires_grad when any input does and
// rejects non-finite values.
Tensor make_output(Shape shape, std::vector<double> data, std::span<const Tensor> inputs);
Tensor make_output(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs);

// Ordered record of executed differentiable ops. Entries are appended in
// execution order, so walking them in reverse is a valid reverse
// topological order for backward.
class GradTape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(const Tensor& output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Returns the
  // number of recorded ops visited.
  std::size_t backward(const Tensor& loss);

  void reset();
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

// Tape that ops on this thread record into, or nullptr.
GradTape* active_tape();

// Installs a tape as the thread's active tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

// Runs backward on the thread's active tape.
std::size_t backward(const Tensor& loss);

// Adds `values` into t's gradient buffer (allocated on demand). No-op when t
// does not require grad.
void accumulate_grad(const Tensor& t, std::span<const double> values);

// True when `output` needs a backward entry on the active tape.
bool should_record(const Tensor& output);

}  // namespace pdcvit
