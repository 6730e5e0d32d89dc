#include "pam/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "pam/errors.hpp"

namespace pam::ag {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = ag::numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = ag::numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  if (rows.size() == 0) throw DimensionError("matrix literal needs at least one row");
  const std::size_t c = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * c);
  for (const auto& r : rows) {
    if (r.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return from({rows.size(), c}, std::move(data), requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
  auto t = zeros({n, n}, requires_grad);
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return t;
}

detail::Node& Tensor::checked() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw IndexError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.empty() ? 1 : s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() < 2) return 1;
  return numel() / s[0];
}

std::span<const double> Tensor::data() const { return checked().value; }
std::span<double> Tensor::mutable_data() { return checked().value; }
std::vector<double> Tensor::to_vector() const { return checked().value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return checked().value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) {
    throw IndexError("index (" + std::to_string(row) + "," + std::to_string(col) + ") out of range for " +
                     to_string(shape()));
  }
  return checked().value[row * cols() + col];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool value) {
  auto& n = checked();
  if (!n.leaf) throw ContractError("requires_grad can only be changed on leaves");
  n.requires_grad = value;
}

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const {
  auto& n = checked();
  if (n.grad.empty()) throw ContractError("tensor '" + n.name + "' has no gradient");
  return n.grad;
}

std::span<double> Tensor::mutable_grad() { return checked().grad_buffer(); }

void Tensor::zero_grad() { checked().grad.clear(); }

const std::string& Tensor::name() const { return checked().name; }
void Tensor::set_name(std::string name) { checked().name = std::move(name); }
const char* Tensor::op() const { return checked().op; }
bool Tensor::is_leaf() const { return checked().leaf; }

Tensor Tensor::detach() const {
  auto& n = checked();
  return Tensor(make_leaf(n.shape, n.value, false));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

// Post-order over nodes that take part in differentiation.
std::vector<detail::Node*> topo_order(detail::Node* root, bool grad_only) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if ((!grad_only || p->requires_grad) && seen.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  auto* root = loss.node().get();
  if (!root->requires_grad) throw ContractError("loss does not depend on any trainable tensor");

  auto order = topo_order(root, true);
  for (auto* n : order) {
    if (n->leaf) {
      n->grad_buffer();
    } else {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

std::string first_nonfinite(const Tensor& root) {
  if (!root.defined()) return {};
  for (auto* n : topo_order(root.node().get(), false)) {
    for (double v : n->value) {
      if (!std::isfinite(v)) {
        std::string label = n->op;
        if (!n->name.empty()) label += " '" + n->name + "'";
        return label + " " + to_string(n->shape);
      }
    }
  }
  return {};
}

}  // namespace pam::ag
