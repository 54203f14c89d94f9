#include "flowkan/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace flowkan {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
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

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : s_(std::make_shared<TensorStorage<T>>()) {
  if (flowkan::numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(flowkan::numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  s_->shape = std::move(shape);
  s_->data = std::move(data);
  s_->requires_grad = requires_grad;
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto n = flowkan::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = flowkan::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <class T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= s_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(s_->shape));
  }
  return s_->shape[axis];
}

template <class T>
T Tensor<T>::item() const {
  if (s_->data.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(s_->shape));
  }
  return s_->data[0];
}

template <class T>
std::span<T> Tensor<T>::grad_accumulator() const {
  if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), T(0));
  return s_->grad;
}

template <class T>
std::optional<std::size_t> Tensor<T>::node_id() const {
  if (s_->tape == nullptr) return std::nullopt;
  return s_->node;
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(s_->shape, s_->data, false);
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(s_->shape, s_->data, s_->requires_grad);
}

// ---------------------------------------------------------------------------

template <class T>
Tape<T>::~Tape() {
  clear();
}

template <class T>
void Tape<T>::clear() {
  for (auto& e : entries_) {
    if (e.output && e.output->tape == this) e.output->tape = nullptr;
  }
  entries_.clear();
}

template <class T>
bool Tape<T>::contains(const Tensor<T>& t) const {
  return t.storage()->tape == this && t.storage()->node < entries_.size();
}

template <class T>
std::vector<std::size_t> Tape<T>::parents(std::size_t i) const {
  std::vector<std::size_t> out;
  for (const auto& in : entries_.at(i).inputs) {
    if (in->tape == this) out.push_back(in->node);
  }
  return out;
}

template <class T>
void Tape<T>::record(Tensor<T>& output, const std::vector<Tensor<T>>& inputs,
                     BackwardFn<T> backward) {
  Entry e;
  e.output = output.storage();
  e.inputs.reserve(inputs.size());
  for (const auto& in : inputs) e.inputs.push_back(in.storage());
  e.backward = std::move(backward);
  output.storage()->tape = this;
  output.storage()->node = entries_.size();
  output.storage()->requires_grad = true;
  entries_.push_back(std::move(e));
}

template <class T>
std::size_t Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw TapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!contains(loss)) throw TapeError("backward: loss is not recorded on this tape");

  const std::size_t last = loss.storage()->node;
  // Leaves reachable through the tape always end up with a (possibly zero) gradient.
  for (std::size_t i = 0; i <= last; ++i) {
    for (auto& in : entries_[i].inputs) {
      if (in->requires_grad && in->tape != this && in->grad.size() != in->data.size()) {
        in->grad.assign(in->data.size(), T(0));
      }
    }
  }
  for (std::size_t i = 0; i <= last; ++i) entries_[i].output->grad.clear();
  loss.storage()->grad.assign(1, T(1));

  std::size_t visited = 0;
  for (std::size_t i = last + 1; i-- > 0;) {
    auto& e = entries_[i];
    ++visited;
    if (e.output->grad.empty()) continue;
    e.backward(std::span<const T>(e.output->grad));
  }
  clear();
  return visited;
}

// ---------------------------------------------------------------------------

namespace {
thread_local bool t_no_grad = false;

template <class T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}
}  // namespace

template <class T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_tape<T>()) {
  active_tape<T>() = &tape;
}

template <class T>
TapeScope<T>::~TapeScope() {
  active_tape<T>() = previous_;
}

template <class T>
Tape<T>* TapeScope<T>::active() {
  return active_tape<T>();
}

NoGradGuard::NoGradGuard() : previous_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = previous_; }
bool NoGradGuard::enabled() { return t_no_grad; }

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      BackwardFn<T> backward) {
  Tensor<T> out(std::move(shape), std::move(data), false);
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr || t_no_grad) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>& t) { return t.requires_grad(); });
  if (any) tape->record(out, inputs, std::move(backward));
  return out;
}

template <class T>
std::size_t backward(const Tensor<T>& loss) {
  Tape<T>* tape = loss.storage()->tape;
  if (tape == nullptr) throw TapeError("backward: loss is not recorded on any tape");
  return tape->backward(loss);
}

template <class T>
std::size_t count_scalars(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <class T>
void zero_grads(ParamList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

#define FLOWKAN_INSTANTIATE(T)                                                              \
  template class Tensor<T>;                                                                 \
  template class Tape<T>;                                                                   \
  template class TapeScope<T>;                                                              \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, const std::vector<Tensor<T>>&,   \
                                    BackwardFn<T>);                                         \
  template std::size_t backward<T>(const Tensor<T>&);                                       \
  template std::size_t count_scalars<T>(const ParamList<T>&);                               \
  template void zero_grads<T>(ParamList<T>&);

FLOWKAN_INSTANTIATE(float)
FLOWKAN_INSTANTIATE(double)

}  // namespace flowkan
