#include "pam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pam/errors.hpp"

namespace pam::ag {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

Tensor finish(Shape shape, std::vector<double> value, const char* op, std::vector<NodePtr> parents,
              std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->leaf = false;
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + to_string(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<double> transpose(std::span<const double> x, std::size_t r, std::size_t c) {
  std::vector<double> t(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = x[i * c + j];
  return t;
}

double gelu_value(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

double gelu_derivative(double x) {
  constexpr double kC = 0.7978845608028654;
  const double t = std::tanh(kC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return finish({m, n}, std::move(out), "matmul", {a.node(), b.node()}, [m, k, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto bt = transpose(pb.value, k, n);
      gemm_nn(self.grad.data(), bt.data(), pa.grad_buffer().data(), m, n, k);
    }
    if (pb.requires_grad) {
      auto gb = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = self.grad.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.value[i * k + p];
          double* dst = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return finish(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return finish(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return finish(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * xv[i];
  return finish(x.shape(), std::move(out), "scale", {x.node()}, [s](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (bias.numel() != c) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match columns of " +
                         to_string(x.shape()));
  }
  std::vector<double> out(r * c);
  auto xv = x.data(), bv = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
  return finish({r, c}, std::move(out), "add_bias", {x.node(), bias.node()}, [r, c](Node& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) {
      auto g = px.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_matrix(x, "scale_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (s.numel() != r) {
    throw DimensionError("scale_rows: scale " + to_string(s.shape()) + " does not match rows of " +
                         to_string(x.shape()));
  }
  std::vector<double> out(r * c);
  auto xv = x.data(), sv = s.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = sv[i] * xv[i * c + j];
  return finish({r, c}, std::move(out), "scale_rows", {x.node(), s.node()}, [r, c](Node& self) {
    auto& px = *self.parents[0];
    auto& ps = *self.parents[1];
    if (px.requires_grad) {
      auto g = px.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += ps.value[i] * self.grad[i * c + j];
    }
    if (ps.requires_grad) {
      auto g = ps.grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += px.value[i * c + j] * self.grad[i * c + j];
        g[i] += acc;
      }
    }
  });
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  if (times == 0) throw DimensionError("repeat_rows: times must be positive");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * times * c);
  auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(xv.data() + i * c, c, out.data() + (i * times + t) * c);
  return finish({r * times, c}, std::move(out), "repeat_rows", {x.node()}, [r, c, times](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[(i * times + t) * c + j];
  });
}

Tensor mean_pool_rows(const Tensor& x, std::size_t group) {
  require_matrix(x, "mean_pool_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (group == 0 || r % group != 0) {
    throw DimensionError("mean_pool_rows: " + std::to_string(r) + " rows are not divisible by group " +
                         std::to_string(group));
  }
  const std::size_t out_rows = r / group;
  const double inv = 1.0 / static_cast<double>(group);
  std::vector<double> out(out_rows * c, 0.0);
  auto xv = x.data();
  for (std::size_t o = 0; o < out_rows; ++o) {
    for (std::size_t t = 0; t < group; ++t)
      for (std::size_t j = 0; j < c; ++j) out[o * c + j] += xv[(o * group + t) * c + j];
    for (std::size_t j = 0; j < c; ++j) out[o * c + j] *= inv;
  }
  return finish({out_rows, c}, std::move(out), "mean_pool_rows", {x.node()},
                [out_rows, group, c, inv](Node& self) {
                  auto g = self.parents[0]->grad_buffer();
                  for (std::size_t o = 0; o < out_rows; ++o)
                    for (std::size_t t = 0; t < group; ++t)
                      for (std::size_t j = 0; j < c; ++j) g[(o * group + t) * c + j] += inv * self.grad[o * c + j];
                });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
  return finish(x.shape(), std::move(out), "gelu", {x.node()}, [](Node& self) {
    auto& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * gelu_derivative(p.value[i]);
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  return finish(x.shape(), std::move(out), "tanh", {x.node()}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return finish({}, {acc}, "sum", {x.node()}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return finish({}, {acc * inv}, "mean", {x.node()}, [inv](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  auto xv = x.data();
  for (double v : xv) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  return finish(shape, std::move(out), "softmax", {x.node()}, [outer, inner, n](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += self.grad[base + k * inner] * self.value[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t i = base + k * inner;
          g[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (targets.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(b) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int t : tgt) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(c) + ")");
    }
  }
  auto z = logits.data();
  std::vector<double> probs(b * c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = z.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, row[j]);
    if (!std::isfinite(mx)) throw NumericError("cross_entropy: row has no finite logit");
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[i * c + j] = e;
      s += e;
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    total += (mx + std::log(s)) - row[tgt[i]];
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  return finish({}, {total * inv_b}, "cross_entropy", {logits.node()},
                [probs = std::move(probs), tgt = std::move(tgt), b, c, inv_b](Node& self) {
                  auto g = self.parents[0]->grad_buffer();
                  const double up = self.grad[0] * inv_b;
                  for (std::size_t i = 0; i < b; ++i) {
                    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += up * probs[i * c + j];
                    g[i * c + tgt[i]] -= up;
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_matrix(x, "layer_norm");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (gain.numel() != c || bias.numel() != c) {
    throw DimensionError("layer_norm: gain/bias must hold " + std::to_string(c) + " values");
  }
  constexpr double kEps = 1e-5;
  auto xv = x.data(), gv = gain.data(), bv = bias.data();
  std::vector<double> out(r * c), xhat(r * c), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + kEps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
    }
  }
  return finish({r, c}, std::move(out), "layer_norm", {x.node(), gain.node(), bias.node()},
                [xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](Node& self) {
                  auto& px = *self.parents[0];
                  auto& pg = *self.parents[1];
                  auto& pb = *self.parents[2];
                  if (pg.requires_grad) {
                    auto g = pg.grad_buffer();
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xhat[i * c + j];
                  }
                  if (pb.requires_grad) {
                    auto g = pb.grad_buffer();
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
                  }
                  if (px.requires_grad) {
                    auto g = px.grad_buffer();
                    const double n = static_cast<double>(c);
                    for (std::size_t i = 0; i < r; ++i) {
                      double sum_d = 0.0, sum_dx = 0.0;
                      for (std::size_t j = 0; j < c; ++j) {
                        const double d = self.grad[i * c + j] * pg.value[j];
                        sum_d += d;
                        sum_dx += d * xhat[i * c + j];
                      }
                      for (std::size_t j = 0; j < c; ++j) {
                        const double d = self.grad[i * c + j] * pg.value[j];
                        g[i * c + j] += inv_std[i] / n * (n * d - sum_d - xhat[i * c + j] * sum_dx);
                      }
                    }
                  }
                });
}

Tensor concat_feature(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("concat_feature: no inputs");
  const std::size_t r = xs.front().rows();
  std::vector<std::size_t> widths;
  std::vector<NodePtr> parents;
  std::size_t total = 0;
  for (const auto& x : xs) {
    require_matrix(x, "concat_feature");
    if (x.dim(0) != r) {
      throw DimensionError("concat_feature: leading dimension " + std::to_string(x.dim(0)) + " != " +
                           std::to_string(r));
    }
    widths.push_back(x.dim(1));
    total += x.dim(1);
    parents.push_back(x.node());
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto xv = xs[k].data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(xv.data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  return finish({r, total}, std::move(out), "concat_feature", std::move(parents),
                [widths = std::move(widths), r, total](Node& self) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < widths.size(); ++k) {
                    auto& p = *self.parents[k];
                    if (p.requires_grad) {
                      auto g = p.grad_buffer();
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
                    }
                    off += widths[k];
                  }
                });
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = xs.front().cols();
  std::vector<std::size_t> heights;
  std::vector<NodePtr> parents;
  std::vector<double> out;
  std::size_t total = 0;
  for (const auto& x : xs) {
    require_matrix(x, "concat_rows");
    if (x.dim(1) != c) {
      throw DimensionError("concat_rows: width " + std::to_string(x.dim(1)) + " != " + std::to_string(c));
    }
    heights.push_back(x.dim(0));
    total += x.dim(0);
    parents.push_back(x.node());
    auto xv = x.data();
    out.insert(out.end(), xv.begin(), xv.end());
  }
  return finish({total, c}, std::move(out), "concat_rows", std::move(parents),
                [heights = std::move(heights), c](Node& self) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < heights.size(); ++k) {
                    auto& p = *self.parents[k];
                    const std::size_t n = heights[k] * c;
                    if (p.requires_grad) {
                      auto g = p.grad_buffer();
                      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
                    }
                    off += n;
                  }
                });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (count == 0 || begin + count > r) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + std::to_string(r) + " rows");
  }
  auto xv = x.data();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          xv.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return finish({count, c}, std::move(out), "slice_rows", {x.node()}, [begin, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (count == 0 || begin + count > c) {
    throw IndexError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + std::to_string(c) + " columns");
  }
  std::vector<double> out(r * count);
  auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(xv.data() + i * c + begin, count, out.data() + i * count);
  return finish({r, count}, std::move(out), "slice_cols", {x.node()}, [begin, count, r, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += self.grad[i * count + j];
  });
}

Tensor take_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_matrix(x, "take_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (index.empty()) throw DimensionError("take_rows: empty index");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * c);
  auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= r) throw IndexError("take_rows: row " + std::to_string(idx[i]) + " outside " + std::to_string(r));
    std::copy_n(xv.data() + idx[i] * c, c, out.data() + i * c);
  }
  const std::size_t n = idx.size();
  return finish({n, c}, std::move(out), "take_rows", {x.node()}, [idx = std::move(idx), c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor scatter_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t total_rows) {
  require_matrix(x, "scatter_rows");
  const std::size_t c = x.dim(1);
  if (index.size() != x.dim(0)) {
    throw DimensionError("scatter_rows: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(x.dim(0)) + " rows");
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(total_rows * c, 0.0);
  auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= total_rows) {
      throw IndexError("scatter_rows: row " + std::to_string(idx[i]) + " outside " + std::to_string(total_rows));
    }
    for (std::size_t j = 0; j < c; ++j) out[idx[i] * c + j] += xv[i * c + j];
  }
  return finish({total_rows, c}, std::move(out), "scatter_rows", {x.node()}, [idx = std::move(idx), c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[idx[i] * c + j];
  });
}

Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& w) {
  if (xs.empty()) throw DimensionError("weighted_sum: no inputs");
  if (w.numel() != xs.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(w.numel()) + " weights for " +
                         std::to_string(xs.size()) + " inputs");
  }
  const Shape shape = xs.front().shape();
  std::vector<NodePtr> parents{w.node()};
  std::vector<double> out(numel(shape), 0.0);
  auto wv = w.data();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (xs[k].shape() != shape) {
      throw DimensionError("weighted_sum: input " + std::to_string(k) + " has shape " + to_string(xs[k].shape()) +
                           ", expected " + to_string(shape));
    }
    auto xv = xs[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv[k] * xv[i];
    parents.push_back(xs[k].node());
  }
  return finish(shape, std::move(out), "weighted_sum", std::move(parents), [](Node& self) {
    auto& pw = *self.parents[0];
    const std::size_t n = self.parents.size() - 1;
    for (std::size_t k = 0; k < n; ++k) {
      auto& px = *self.parents[k + 1];
      if (pw.requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.value[i];
        pw.grad_buffer()[k] += acc;
      }
      if (px.requires_grad) {
        auto g = px.grad_buffer();
        const double wk = pw.value[k];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += wk * self.grad[i];
      }
    }
  });
}

Tensor causal_attention(const Tensor& qkv, std::span<const Span> spans, std::size_t heads) {
  require_matrix(qkv, "causal_attention");
  const std::size_t rows = qkv.dim(0), width = qkv.dim(1);
  if (heads == 0 || width % (3 * heads) != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(width) + " is not 3 x heads x head_dim");
  }
  const std::size_t d = width / 3, dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Span> sp(spans.begin(), spans.end());
  std::size_t prob_size = 0;
  for (const auto& s : sp) {
    if (s.length == 0 || s.begin + s.length > rows) throw IndexError("causal_attention: span outside input rows");
    prob_size += heads * s.length * s.length;
  }
  auto x = qkv.data();
  std::vector<double> out(rows * d, 0.0);
  std::vector<double> probs(prob_size, 0.0);
  std::size_t poff = 0;
  for (const auto& s : sp) {
    const std::size_t n = s.length;
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + poff;
      for (std::size_t i = 0; i < n; ++i) {
        const double* q = x.data() + (s.begin + i) * width + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const double* k = x.data() + (s.begin + j) * width + d + h * dh;
          double dot = 0.0;
          for (std::size_t t = 0; t < dh; ++t) dot += q[t] * k[t];
          p[i * n + j] = dot * inv_sqrt;
          mx = std::max(mx, p[i * n + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          p[i * n + j] = std::exp(p[i * n + j] - mx);
          z += p[i * n + j];
        }
        double* o = out.data() + (s.begin + i) * d + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          p[i * n + j] /= z;
          const double* v = x.data() + (s.begin + j) * width + 2 * d + h * dh;
          for (std::size_t t = 0; t < dh; ++t) o[t] += p[i * n + j] * v[t];
        }
      }
      poff += n * n;
    }
  }
  return finish({rows, d}, std::move(out), "causal_attention", {qkv.node()},
                [sp = std::move(sp), probs = std::move(probs), heads, width, d, dh, inv_sqrt](Node& self) {
                  auto& px = *self.parents[0];
                  auto g = px.grad_buffer();
                  const auto& x = px.value;
                  std::size_t poff = 0;
                  std::vector<double> dp;
                  for (const auto& s : sp) {
                    const std::size_t n = s.length;
                    dp.assign(n * n, 0.0);
                    for (std::size_t h = 0; h < heads; ++h) {
                      const double* p = probs.data() + poff;
                      // dP and dV
                      for (std::size_t i = 0; i < n; ++i) {
                        const double* go = self.grad.data() + (s.begin + i) * d + h * dh;
                        for (std::size_t j = 0; j <= i; ++j) {
                          const double* v = x.data() + (s.begin + j) * width + 2 * d + h * dh;
                          double* gv = g.data() + (s.begin + j) * width + 2 * d + h * dh;
                          double acc = 0.0;
                          for (std::size_t t = 0; t < dh; ++t) {
                            acc += go[t] * v[t];
                            gv[t] += p[i * n + j] * go[t];
                          }
                          dp[i * n + j] = acc;
                        }
                      }
                      // softmax backward, then dQ and dK
                      for (std::size_t i = 0; i < n; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) dot += dp[i * n + j] * p[i * n + j];
                        const double* q = x.data() + (s.begin + i) * width + h * dh;
                        double* gq = g.data() + (s.begin + i) * width + h * dh;
                        for (std::size_t j = 0; j <= i; ++j) {
                          const double ds = p[i * n + j] * (dp[i * n + j] - dot) * inv_sqrt;
                          const double* k = x.data() + (s.begin + j) * width + d + h * dh;
                          double* gk = g.data() + (s.begin + j) * width + d + h * dh;
                          for (std::size_t t = 0; t < dh; ++t) {
                            gq[t] += ds * k[t];
                            gk[t] += ds * q[t];
                          }
                        }
                      }
                      poff += n * n;
                    }
                  }
                });
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  const std::size_t r = x.rank() <= 1 ? 1 : x.dim(0);
  const std::size_t c = x.numel() / r;
  auto xv = x.data();
  std::vector<std::size_t> out(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (xv[i * c + j] > xv[i * c + best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

}  // namespace pam::ag
