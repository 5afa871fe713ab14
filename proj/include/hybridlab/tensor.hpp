#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hybridlab {

using Shape = std::vector<std::int64_t>;

/// Extents do not line up for the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller violated an API precondition (e.g. non-scalar loss).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An operation produced a NaN or infinity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { kDouble, kSingle };

/// Working precision of tensor arithmetic on the calling thread. Storage is
/// always double; in single mode every op result is rounded to float.
Precision working_precision();

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision previous_;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major array of doubles. Copies share storage; treat values as
/// immutable once they have been handed to an op.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_vector(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }
  /// Extent along `axis`; negative axes count from the back.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  /// In-place access for leaf tensors (initialisation, optimiser updates).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::int64_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  /// Accumulated gradient; zeros if nothing was accumulated.
  std::vector<double> grad() const;
  void zero_grad();

  /// Fresh storage, no gradient tracking.
  Tensor clone() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Records differentiable ops issued on this thread while alive. Nodes are
/// appended in execution order, so the list is already topologically sorted.
class GradTape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Innermost live tape on this thread, or nullptr.
  static GradTape* active();

  void record(const Tensor& output, BackwardFn fn);

  /// Propagates d(loss)/d(.) into every tensor that requires grad. Each node
  /// runs at most once; a tape can be replayed only once.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  GradTape* previous_ = nullptr;
  bool replayed_ = false;
};

namespace detail {

/// True when a tape is recording and any input tracks gradients.
bool should_record(std::initializer_list<const Tensor*> inputs);

/// Wraps freshly computed data into a tensor: rounds to the working precision
/// and raises NumericError on non-finite values.
Tensor make_result(Shape shape, std::vector<double> data, const char* op_name);

/// Marks `out` as tracking and records its backward rule on the active tape.
void attach(Tensor& out, GradTape::BackwardFn fn);

/// Gradient accumulator of `t`, allocated on first use.
std::span<double> grad_buffer(const Tensor& t);

}  // namespace detail

}  // namespace hybridlab
