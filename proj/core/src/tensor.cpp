#include "gpal/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gpal::diff {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const Shape& s) {
  if (s.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
  for (std::size_t d : s) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(s));
  }
}

Tensor Tensor::zeros(Shape shape) {
  check_shape(shape);
  auto node = std::make_shared<detail::Node>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (data.size() != shape_numel(shape)) {
    throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : t.node_->data) x = dist(rng);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() requires a one-element tensor, shape is " + shape_str(shape()));
  }
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (!node_->leaf) throw std::invalid_argument("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
  node_->needs_grad = value;
  return *this;
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

bool Tensor::all_finite() const {
  for (double x : node_->data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor Gradients::at(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it != grads_.end()) return it->second;
  return Tensor::zeros(leaf.shape());
}

bool Gradients::contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape::Suspend::Suspend() : prev_(g_active_tape) { g_active_tape = nullptr; }
Tape::Suspend::~Suspend() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

Gradients Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw std::runtime_error("backward called twice on one tape without re-recording");
  }
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss");
  }
  consumed_ = true;

  std::unordered_map<const detail::Node*, std::vector<double>> acc;
  const detail::Node* loss_node = static_cast<const detail::Node*>(loss.id());
  bool connected = false;
  for (const auto& e : entries_) {
    if (e.output.get() == loss_node) {
      connected = true;
      break;
    }
  }
  if (!connected) {
    throw std::invalid_argument("loss tensor is not connected to this tape");
  }

  acc[loss_node] = {1.0};

  std::vector<double*> gin;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto found = acc.find(it->output.get());
    if (found == acc.end()) continue;  // disconnected from the loss
    const double* gout = found->second.data();

    gin.clear();
    gin.reserve(it->inputs.size());
    for (const auto& in : it->inputs) {
      if (!in->needs_grad) {
        gin.push_back(nullptr);
        continue;
      }
      auto& buf = acc[in.get()];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      gin.push_back(buf.data());
    }
    it->backward(gout, gin);
  }

  Gradients out;
  for (const auto& e : entries_) {
    for (const auto& in : e.inputs) {
      if (!in->leaf || !in->requires_grad) continue;
      if (out.grads_.count(in.get())) continue;
      auto found = acc.find(in.get());
      if (found == acc.end()) continue;
      out.grads_.emplace(in.get(), Tensor::from_data(in->shape, std::move(found->second)));
      acc.erase(found);
    }
  }
  return out;
}

}  // namespace gpal::diff
