#include "hybridlab/tensor.hpp"

#include <cmath>
#include <sstream>

namespace hybridlab {

namespace {
thread_local Precision g_precision = Precision::kDouble;
thread_local GradTape* g_active_tape = nullptr;
}  // namespace

Precision working_precision() { return g_precision; }

PrecisionScope::PrecisionScope(Precision p) : previous_(g_precision) { g_precision = p; }
PrecisionScope::~PrecisionScope() { g_precision = previous_; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
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

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("from_vector: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_vector({1}, {value}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  const auto& s = shape();
  const auto r = static_cast<std::int64_t>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data().size()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractError("use of an undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const { return from_vector(shape(), std::vector<double>(data().begin(), data().end())); }

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(const Tensor& output, BackwardFn fn) {
  if (replayed_) throw ContractError("GradTape: recording after backward()");
  nodes_.push_back(Node{output.impl(), std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (nodes_.empty()) throw ContractError("backward: tape is empty");
  if (replayed_) throw ContractError("backward: tape already replayed");
  if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on tracked tensors");
  replayed_ = true;

  detail::grad_buffer(loss)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // no path to the loss
    it->fn(it->output->grad);
  }
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Shape shape, std::vector<double> data, const char* op_name) {
  if (g_precision == Precision::kSingle) {
    for (auto& v : data) v = static_cast<double>(static_cast<float>(v));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op_name);
  }
  return Tensor::from_vector(std::move(shape), std::move(data));
}

void attach(Tensor& out, GradTape::BackwardFn fn) {
  out.set_requires_grad(true);
  g_active_tape->record(out, std::move(fn));
}

std::span<double> grad_buffer(const Tensor& t) {
  auto& impl = *t.impl();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

}  // namespace detail

}  // namespace hybridlab
