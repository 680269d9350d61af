#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fsvos {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the autograd graph. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<double>& out_grad)> backward;

  // Zero-filled gradient buffer, allocated on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense float64 array with reverse-mode differentiation.
///
/// Copies are shallow handles, like framework tensors: two copies observe the
/// same storage. Use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct writes are only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, cut from the graph.
  Tensor detach() const;
  // Independent leaf copy that keeps the requires_grad flag.
  Tensor clone() const;

  // Seeds d(this)/d(this) = 1 and propagates. Requires a single element.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph construction in its scope (teacher forward, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

using BackwardFn = std::function<void(const std::vector<double>&)>;

// Builds an op result; attaches parents and the backward closure only when
// gradients are enabled and some parent needs them.
Tensor make_result(Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& parents, BackwardFn backward);

bool any_requires_grad(const std::vector<Tensor>& tensors);

}  // namespace detail

}  // namespace fsvos
