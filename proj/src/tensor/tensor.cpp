#include "citnet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace citnet {

namespace {
std::atomic<bool> g_finite_checks{true};
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks() { return g_finite_checks.load(); }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + to_string(shape));
  }
}

template <typename T>
std::shared_ptr<TensorImpl<T>> new_impl(const Shape& shape, std::vector<T> values,
                                        bool requires_grad) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}

template <typename T>
const TensorImpl<T>& checked(const std::shared_ptr<TensorImpl<T>>& impl) {
  if (!impl) throw UsageError("use of an undefined tensor");
  return *impl;
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  validate_shape(shape);
  return Tensor(new_impl<T>(shape, std::vector<T>(citnet::numel(shape), value), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> values, bool requires_grad) {
  return Tensor(new_impl<T>(shape, std::move(values), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::randn(const Shape& shape, Rng& rng, T stddev, bool requires_grad) {
  validate_shape(shape);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(citnet::numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng) * stddev);
  return from(shape, std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(const Shape& shape, Rng& rng, T lo, T hi, bool requires_grad) {
  validate_shape(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(citnet::numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return from(shape, std::move(v), requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return checked(impl_).shape;
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const auto& s = shape();
  const int n = static_cast<int>(s.size());
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
  return static_cast<std::int64_t>(checked(impl_).data.size());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return checked(impl_).data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() const {
  checked(impl_);
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
  return data()[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return checked(impl_).requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) const {
  checked(impl_);
  impl_->requires_grad = value;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return checked(impl_).is_leaf;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return !checked(impl_).grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient");
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  checked(impl_);
  return detail::grad_buffer(*impl_);
}

template <typename T>
void Tensor<T>::zero_grad() const {
  checked(impl_);
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
  const auto& src = checked(impl_);
  return Tensor(new_impl<T>(src.shape, src.data, requires_grad));
}

// --- tape ------------------------------------------------------------------

namespace detail {

template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <typename T>
std::vector<T>& grad_buffer(TensorImpl<T>& t) {
  if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), T(0));
  return t.grad;
}

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_tape_slot<T>() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
bool recording(const std::vector<Tensor<T>>& inputs) {
  if (active_tape_slot<T>() == nullptr) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values, bool record,
                      std::function<void(TensorImpl<T>& out)> backward) {
  if (finite_checks()) {
    for (const T& v : values) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
  auto impl = new_impl<T>(shape, std::move(values), false);
  if (record) {
    impl->requires_grad = true;
    impl->is_leaf = false;
    TensorImpl<T>* raw = impl.get();
    active_tape_slot<T>()->record(op, impl, [raw, fn = std::move(backward)]() { fn(*raw); });
  }
  return Tensor<T>(std::move(impl));
}

}  // namespace detail

template <typename T>
void Tape<T>::record(const char* op, std::shared_ptr<TensorImpl<T>> output, Backward backward) {
  entries_.push_back(Entry{op, std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw UsageError("backward() on a loss that does not require grad");
  // Intermediate grads are rebuilt from scratch so a replay is reproducible.
  for (auto& e : entries_) e.output->grad.clear();
  auto& seed = detail::grad_buffer(*loss.impl());
  seed[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return detail::active_tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(detail::active_tape_slot<T>()) {
  detail::active_tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  detail::active_tape_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(detail::active_tape_slot<T>()) {
  detail::active_tape_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  detail::active_tape_slot<T>() = previous_;
}

#define CITNET_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                     \
  template class Tape<T>;                                                                       \
  template class TapeScope<T>;                                                                  \
  template class NoGradScope<T>;                                                                \
  template Tape<T>*& detail::active_tape_slot<T>();                                             \
  template std::vector<T>& detail::grad_buffer<T>(TensorImpl<T>&);                              \
  template bool detail::recording<T>(std::initializer_list<const Tensor<T>*>);                  \
  template bool detail::recording<T>(const std::vector<Tensor<T>>&);                            \
  template Tensor<T> detail::make_result<T>(const char*, Shape, std::vector<T>, bool,           \
                                            std::function<void(TensorImpl<T>&)>);

CITNET_INSTANTIATE(float)
CITNET_INSTANTIATE(double)

}  // namespace citnet
