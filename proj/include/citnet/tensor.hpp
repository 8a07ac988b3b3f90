#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace citnet {

using Shape = std::vector<std::int64_t>;

/// Shape or rank mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid hyperparameter or layer configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse, e.g. differentiating a non-scalar.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A NaN or Inf was produced.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

using Rng = std::mt19937_64;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, T stddev = 1, bool requires_grad = false);
  static Tensor uniform(const Shape& shape, Rng& rng, T lo, T hi, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;

  std::span<const T> data() const;
  /// Direct write access; intended for leaves (parameters, inputs) only.
  std::span<T> mutable_data() const;
  T item() const;
  T at(std::int64_t flat) const { return data()[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const;
  void set_requires_grad(bool value) const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad() const;
  void zero_grad() const;

  Tensor clone(bool requires_grad = false) const;
  Tensor detach() const { return clone(false); }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Reverse-mode tape. Ops record onto the tape active on the current thread
/// (see TapeScope); backward() replays the records in reverse order.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void()>;

  struct Entry {
    const char* op;
    std::shared_ptr<TensorImpl<T>> output;
    Backward backward;
  };

  void record(const char* op, std::shared_ptr<TensorImpl<T>> output, Backward backward);
  void backward(const Tensor<T>& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  static Tape* active();

 private:
  std::vector<Entry> entries_;
};

/// Activates a tape on this thread for the lifetime of the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording on this thread (inference, finite differences).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

namespace detail {
template <typename T>
Tape<T>*& active_tape_slot();

/// Grad buffer of `t`, allocated as zeros on first use.
template <typename T>
std::vector<T>& grad_buffer(TensorImpl<T>& t);

/// True when `inputs` should be linked into the active tape.
template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs);
template <typename T>
bool recording(const std::vector<Tensor<T>>& inputs);

/// Wraps freshly computed values into a tensor, validating finiteness and
/// registering `backward` on the active tape when any input needs grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values, bool record,
                      std::function<void(TensorImpl<T>& out)> backward);
}  // namespace detail

/// When on (the default), every op checks its output for NaN/Inf and throws NumericError.
void set_finite_checks(bool enabled);
bool finite_checks();

}  // namespace citnet
