#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowkan {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
class Tape;

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  // Set when the tensor is the output of a recorded operation.
  Tape<T>* tape = nullptr;
  std::size_t node = 0;
};

/// N-dimensional row-major array with value semantics on the handle and
/// shared storage underneath (copying a Tensor aliases the same buffer).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : s_(std::make_shared<TensorStorage<T>>()) {}
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return s_->data.size(); }

  std::span<const T> data() const { return s_->data; }
  std::span<T> mutable_data() { return s_->data; }
  T item() const;
  T operator[](std::size_t i) const { return s_->data[i]; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool value) { s_->requires_grad = value; }

  bool has_grad() const { return !s_->grad.empty(); }
  /// Empty when no gradient has reached this tensor.
  std::span<const T> grad() const { return s_->grad; }
  void zero_grad() { s_->grad.clear(); }
  /// Lazily allocated, zero-filled gradient accumulator for backward closures.
  std::span<T> grad_accumulator() const;

  std::optional<std::size_t> node_id() const;

  /// Same values, no gradient tracking, independent storage.
  Tensor detach() const;
  /// Deep copy keeping requires_grad.
  Tensor clone() const;

  const std::shared_ptr<TensorStorage<T>>& storage() const { return s_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage<T>> s) : s_(std::move(s)) {}
  std::shared_ptr<TensorStorage<T>> s_;

  template <class U>
  friend class Tape;
};

template <class T>
using BackwardFn = std::function<void(std::span<const T> grad_out)>;

/// Ordered record of operations. Entries are appended after their inputs
/// exist, so recording order is a topological order.
template <class T>
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorStorage<T>> output;
    std::vector<std::shared_ptr<TensorStorage<T>>> inputs;
    BackwardFn<T> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::size_t size() const { return entries_.size(); }
  bool contains(const Tensor<T>& t) const;
  /// Node ids of recorded parents of entry `i` (leaves are omitted).
  std::vector<std::size_t> parents(std::size_t i) const;

  void record(Tensor<T>& output, const std::vector<Tensor<T>>& inputs, BackwardFn<T> backward);

  /// Runs reverse accumulation from a scalar loss and consumes the tape.
  /// Returns the number of entries visited.
  std::size_t backward(const Tensor<T>& loss);

  void clear();

 private:
  std::vector<Entry> entries_;
};

/// Makes `tape` the active recording target on this thread for its lifetime.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  static Tape<T>* active();

 private:
  Tape<T>* previous_;
};

/// Suspends recording on this thread (all scalar types).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool enabled();

 private:
  bool previous_;
};

/// Builds an op result. The op is recorded on the active tape when any input
/// requires grad; otherwise `backward` is dropped.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      BackwardFn<T> backward);

/// Backward on the tape that produced `loss`.
template <class T>
std::size_t backward(const Tensor<T>& loss);

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
std::size_t count_scalars(const ParamList<T>& params);

template <class T>
void zero_grads(ParamList<T>& params);

}  // namespace flowkan
