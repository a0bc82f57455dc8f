#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace gpal::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;  // set only on leaves
  bool needs_grad = false;     // requires_grad or depends on such a leaf
  bool leaf = true;
};

}  // namespace detail

class Tape;
class Gradients;

/// Dense row-major tensor of 64-bit reals with value semantics.
/// Copying a Tensor copies the handle; the buffer is shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }
  std::vector<double>& buffer() { return node_->data; }
  const std::vector<double>& buffer() const { return node_->data; }

  double operator[](std::size_t i) const { return node_->data[i]; }
  double& operator[](std::size_t i) { return node_->data[i]; }

  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  /// Marks a leaf as differentiable. Only valid on leaves.
  Tensor& set_requires_grad(bool value);

  bool is_leaf() const { return node_->leaf; }

  /// Stable identity used as the key in gradient maps.
  const void* id() const { return node_.get(); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Deep copy with a fresh identity (leaf, no grad flag).
  Tensor clone() const;

  bool all_finite() const;

  /// Underlying node handle; used by the op layer and the tape.
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Gradient map from leaf identity to a dense gradient tensor.
/// Leaves that were disconnected from the loss read back as zeros.
class Gradients {
 public:
  /// Gradient for `leaf`; a zero tensor of the same shape when disconnected.
  Tensor at(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const void*, Tensor> grads_;
  friend class Tape;
};

struct TapeEntry {
  const char* op;
  std::vector<std::shared_ptr<detail::Node>> inputs;
  std::shared_ptr<detail::Node> output;
  // gout: gradient w.r.t. output; gin[i]: accumulation buffer for inputs[i],
  // nullptr when that input does not need a gradient.
  std::function<void(const double* gout, const std::vector<double*>& gin)> backward;
};

/// Ordered record of primitive operations for one reverse pass.
/// Ops record into the innermost active Tape on the current thread; with no
/// active tape every op is pure eager evaluation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// RAII activation on the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  /// RAII deactivation: ops run eagerly with no recording while alive.
  class Suspend {
   public:
    Suspend();
    ~Suspend();
    Suspend(const Suspend&) = delete;
    Suspend& operator=(const Suspend&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active();

  void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  /// Reverse pass from a scalar loss. Each entry is visited exactly once, in
  /// reverse order. A second call without re-recording throws.
  Gradients backward(const Tensor& loss);

 private:
  std::vector<TapeEntry> entries_;
  bool consumed_ = false;
};

}  // namespace gpal::diff
