#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tridiff::ad {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline ShapeError shape_mismatch(std::string_view op, const Shape& expected, const Shape& actual) {
  return ShapeError(std::string(op) + ": expected shape " + to_string(expected) + ", got " +
                    to_string(actual));
}

// Storage behind a Tensor handle. `grad` stays empty until something writes to it.
template <class S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;
  bool requires_grad = false;
  bool leaf = true;

  std::vector<S>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), S(0));
    return grad;
  }
};

template <class S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0)) : node_(std::make_shared<Node<S>>()) {
    node_->data.assign(static_cast<std::size_t>(ad::numel(shape)), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<S> data) : node_(std::make_shared<Node<S>>()) {
    if (static_cast<std::int64_t>(data.size()) != ad::numel(shape))
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor scalar(S value) { return Tensor(Shape{}, std::vector<S>{value}); }

  // A leaf that collects gradients during backward.
  static Tensor parameter(Shape shape, std::vector<S> data) {
    Tensor t(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const S> data() const { return node_->data; }
  std::span<S> mutable_data() { return node_->data; }
  const std::vector<S>& vec() const { return node_->data; }
  S operator[](std::size_t i) const { return node_->data[i]; }

  S item() const {
    if (node_->data.size() != 1)
      throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const S> grad() const { return node_->grad; }
  std::vector<S> grad_or_zeros() const {
    return has_grad() ? node_->grad : std::vector<S>(node_->data.size(), S(0));
  }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values with no graph connection.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  Node<S>* node() const { return node_.get(); }
  const std::shared_ptr<Node<S>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;
};

// Ordered record of differentiable operations. Entries are appended as ops run,
// so replaying them backwards visits every output before its inputs.
template <class S>
class Tape {
 public:
  struct Entry {
    std::string_view op;
    std::vector<std::shared_ptr<Node<S>>> inputs;
    std::shared_ptr<Node<S>> output;
    std::function<void(const Node<S>&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
    loss.node()->grad_buffer()[0] += S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward(*it->output);
    }
  }

 private:
  template <class>
  friend class TapeScope;
  template <class>
  friend class NoGradScope;

  std::vector<Entry> entries_;
  static inline thread_local Tape* active_ = nullptr;
};

// Routes ops on this thread onto `tape` for the lifetime of the scope.
template <class S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& tape) : prev_(Tape<S>::active_) { Tape<S>::active_ = &tape; }
  ~TapeScope() { Tape<S>::active_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<S>* prev_;
};

template <class S>
class NoGradScope {
 public:
  NoGradScope() : prev_(Tape<S>::active_) { Tape<S>::active_ = nullptr; }
  ~NoGradScope() { Tape<S>::active_ = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<S>* prev_;
};

template <class S>
void backward(const Tensor<S>& loss) {
  auto* tape = Tape<S>::active();
  if (tape == nullptr) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
    if (loss.requires_grad()) loss.node()->grad_buffer()[0] += S(1);
    return;
  }
  tape->backward(loss);
}

inline bool& finite_checks_enabled() {
  static bool enabled = true;
  return enabled;
}

// Builds an op result and, when a tape is active and any input needs gradients,
// records `grad_fn(out)` as its backward rule. The rule reads `out.grad` (and
// `out.data` if useful) and accumulates into inputs through `grad_of`.
template <class S, class GradFn>
Tensor<S> make_result(std::string_view op, Shape shape, std::vector<S> data,
                      const std::vector<const Tensor<S>*>& inputs, GradFn&& grad_fn) {
  if (finite_checks_enabled()) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i]))
        throw NumericError(std::string(op) + ": non-finite value at index " + std::to_string(i));
    }
  }
  Tensor<S> out(std::move(shape), std::move(data));
  auto* tape = Tape<S>::active();
  if (tape == nullptr) return out;
  bool needs = false;
  for (const auto* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  out.node()->requires_grad = true;
  out.node()->leaf = false;
  typename Tape<S>::Entry entry;
  entry.op = op;
  for (const auto* in : inputs) entry.inputs.push_back(in->node_ptr());
  entry.output = out.node_ptr();
  entry.backward = std::forward<GradFn>(grad_fn);
  tape->record(std::move(entry));
  return out;
}

// Gradient buffer of an input, or nullptr when it takes no gradient.
template <class S>
S* grad_of(const std::shared_ptr<Node<S>>& node) {
  return node->requires_grad ? node->grad_buffer().data() : nullptr;
}

}  // namespace tridiff::ad
