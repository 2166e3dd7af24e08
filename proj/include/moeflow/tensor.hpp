#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moeflow/errors.hpp"
#include "moeflow/rng.hpp"

namespace moeflow {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ')';
  return os.str();
}

// Storage shared by all handles to the same tensor. Gradients are written by
// Tape::backward and stay valid until the next backward pass touching this
// tensor, which zeroes them first.
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass needs it
  bool requires_grad = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
};

class Tape;

// Value-semantic handle onto shared storage. Cheap to copy; ops return new
// tensors and never mutate inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    auto d = std::make_shared<TensorData>();
    std::int64_t n = shape_numel(shape);
    if (n < 0)
      raise(ErrorKind::InvalidShape, "negative dimension in " + shape_str(shape));
    d->shape = std::move(shape);
    d->values.assign(static_cast<std::size_t>(n), 0.0);
    return Tensor(std::move(d));
  }

  static Tensor full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.d_->values) x = v;
    return t;
  }

  static Tensor scalar(double v) { return full({}, v); }

  static Tensor from(Shape shape, std::vector<double> values) {
    std::int64_t n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size()))
      raise(ErrorKind::InvalidShape,
            "value count " + std::to_string(values.size()) +
                " does not match shape " + shape_str(shape));
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    return Tensor(std::move(d));
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.d_->values) x = rng.uniform(lo, hi);
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }

  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return d_->numel(); }

  std::span<const double> values() const { return d_->values; }
  std::span<double> values_mut() { return d_->values; }

  double item() const {
    if (numel() != 1)
      raise(ErrorKind::Contract,
            "item() called on non-scalar tensor " + shape_str(shape()));
    return d_->values[0];
  }

  double at(std::int64_t flat) const { return d_->values[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  // Empty span when no backward pass has produced a gradient yet.
  std::span<const double> grad() const { return d_->grad; }

  Tensor clone() const {
    auto d = std::make_shared<TensorData>();
    d->shape = d_->shape;
    d->values = d_->values;
    d->requires_grad = d_->requires_grad;
    return Tensor(std::move(d));
  }

  std::shared_ptr<TensorData> data() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

// Maps tape-local tensor ids to their gradient buffers after backward().
class GradTable {
 public:
  void add(int id, std::shared_ptr<TensorData> d) { entries_[id] = std::move(d); }

  bool contains(int id) const { return entries_.count(id) != 0; }

  std::span<const double> at(int id) const {
    auto it = entries_.find(id);
    if (it == entries_.end())
      raise(ErrorKind::Tape, "no gradient recorded for tensor id " + std::to_string(id));
    return it->second->grad;
  }

  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<int, std::shared_ptr<TensorData>> entries_;
};

// One recorded operation. `backward` reads output->grad and accumulates into
// the grad buffers of the inputs that require gradients.
struct TapeNode {
  const char* op;
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::shared_ptr<TensorData> output;
  std::function<void()> backward;
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward walks them once in reverse.
// A tape is single-threaded. Tensor ids are tape-local and assigned on first
// touch, so read-only parameters can participate in several tapes at once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active_slot() {
    thread_local Tape* active = nullptr;
    return active;
  }

  static Tape* active() { return active_slot(); }

  int touch(const std::shared_ptr<TensorData>& d) {
    auto it = ids_.find(d.get());
    if (it != ids_.end()) return it->second;
    int id = next_id_++;
    ids_.emplace(d.get(), id);
    registered_.push_back(d);
    return id;
  }

  int id_of(const Tensor& t) const {
    auto it = ids_.find(t.data().get());
    if (it == ids_.end())
      raise(ErrorKind::Tape, "tensor is not registered on this tape");
    return it->second;
  }

  void record(TapeNode node) { nodes_.push_back(std::move(node)); }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and visits every node exactly once in reverse.
  // Gradients of all tensors touched by this tape are zeroed first.
  GradTable backward(const Tensor& loss) {
    if (loss.numel() != 1)
      raise(ErrorKind::Contract,
            "backward requires a scalar loss, got " + shape_str(loss.shape()));
    auto it = ids_.find(loss.data().get());
    if (it == ids_.end())
      raise(ErrorKind::Tape, "loss tensor was not produced on this tape");

    for (auto& d : registered_) {
      if (d->requires_grad)
        d->grad.assign(d->values.size(), 0.0);
      else
        d->grad.clear();
    }
    auto ld = loss.data();
    if (ld->grad.empty()) ld->grad.assign(1, 0.0);
    ld->grad[0] = 1.0;

    for (auto node = nodes_.rbegin(); node != nodes_.rend(); ++node)
      if (node->backward) node->backward();

    GradTable table;
    for (auto& d : registered_)
      if (!d->grad.empty()) table.add(ids_.at(d.get()), d);
    return table;
  }

 private:
  std::vector<TapeNode> nodes_;
  std::unordered_map<TensorData*, int> ids_;
  std::vector<std::shared_ptr<TensorData>> registered_;
  int next_id_ = 0;
};

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(Tape::active_slot()) {
    Tape::active_slot() = &tape;
  }
  ~TapeScope() { Tape::active_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace moeflow
