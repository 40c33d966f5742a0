#include "pdcvit/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pdcvit/errors.hpp"

namespace pdcvit {

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractError("use of undefined tensor");
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const { return from_data(shape(), impl_->data, impl_->requires_grad); }

Tensor Tensor::detach() const { return from_data(shape(), impl_->data, false); }

Tensor make_output(Shape shape, std::vector<double> data, std::span<const Tensor> inputs) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced in tensor of shape " + shape_str(shape));
  }
  bool rg = false;
  if (g_active_tape) {
    for (const Tensor& t : inputs) rg = rg || t.requires_grad();
  }
  return Tensor::from_data(std::move(shape), std::move(data), rg);
}

Tensor make_output(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs) {
  return make_output(std::move(shape), std::move(data), std::span<const Tensor>(inputs.begin(), inputs.size()));
}

bool should_record(const Tensor& output) { return g_active_tape != nullptr && output.requires_grad(); }

void accumulate_grad(const Tensor& t, std::span<const double> values) {
  if (!t.requires_grad()) return;
  auto& g = t.impl()->grad;
  if (g.empty()) {
    g.assign(values.begin(), values.end());
    return;
  }
  for (std::size_t i = 0; i < values.size(); ++i) g[i] += values[i];
}

void GradTape::record(const Tensor& output, BackwardFn fn) { nodes_.push_back({output.impl(), std::move(fn)}); }

std::size_t GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward on a loss that was not produced under an active tape");
  bool found = false;
  for (const Node& n : nodes_) found = found || n.output == loss.impl();
  if (!found) throw ContractError("loss was not recorded on this tape");

  const std::vector<double> seed{1.0};
  accumulate_grad(loss, seed);
  std::size_t visited = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ++visited;
    if (it->output->grad.empty()) continue;  // not reachable from loss
    // Copy: the closure may accumulate into a tensor aliasing this output.
    const std::vector<double> out_grad = it->output->grad;
    it->fn(out_grad);
  }
  return visited;
}

void GradTape::reset() { nodes_.clear(); }

GradTape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

std::size_t backward(const Tensor& loss) {
  if (!g_active_tape) throw ContractError("backward called without an active tape");
  return g_active_tape->backward(loss);
}

}  // namespace pdcvit
