#pragma once

// Dense row-major tensors of doubles with a dynamic reverse-mode tape.
//
// Every op that has at least one operand with requires_grad() records a
// backward closure on its output node. The tape is the object graph itself:
// it lives as long as the output tensors do and is rebuilt on each forward.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pam::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  /// Leading dimension of a matrix.
  std::size_t rows() const;
  /// Trailing dimension of a matrix (1 for vectors).
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Writable view; only meaningful on leaves (initialisers, optimizers).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Drops the gradient buffer; has_grad() is false afterwards.
  void zero_grad();

  const std::string& name() const;
  void set_name(std::string name);
  const char* op() const;
  bool is_leaf() const;

  /// Copy of the value as a fresh leaf with no history.
  Tensor detach() const;
  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  // Used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  detail::Node& checked() const;
  std::shared_ptr<detail::Node> node_;
};

/// Whether ops currently record backward closures (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// `loss`. Intermediate gradients are recomputed from scratch on every call,
/// so calling twice without zero_grad() doubles the leaf gradients (up to rounding).
void backward(const Tensor& loss);

/// Walks the graph below `root` in evaluation order and returns a label for
/// the first node holding a non-finite value, or an empty string.
std::string first_nonfinite(const Tensor& root);

}  // namespace pam::ag
