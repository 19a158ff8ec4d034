#include "stvod/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace stvod {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapMat as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

thread_local bool g_grad_enabled = true;

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(a.shape()));
  }
}

template <typename F, typename D>
Var unary(const char* name, const Var& a, F f, D dfdx) {
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_op(name, std::move(out), {a}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Node::accumulate(const Tensor& g, double scale) { grad_buffer().add_(g, scale); }

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "leaf";
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

const Tensor& Var::grad() const {
  if (node_->grad.empty()) node_->grad = Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

Var make_op(std::string op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_rule) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  node->requires_grad = needs;
  if (needs) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.shared());
    node->backward = std::move(backward_rule);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; parents are visited in declaration order so the
  // resulting order (and hence floating-point accumulation) is deterministic.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients start from zero on every sweep; leaves accumulate.
  for (Node* n : order) {
    if (n->backward) n->grad = Tensor(n->value.shape(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  out.add_(b.value());
  return make_op("add", std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ShapeError("add_n: no terms");
  Tensor out = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape("add_n", terms[0], terms[i]);
    out.add_(terms[i].value());
  }
  return make_op("add_n", std::move(out), terms, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  out.add_(b.value(), -1.0);
  return make_op("sub", std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op("mul", std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      Tensor& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape("div", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_op("div", std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / y.value[i];
    }
    if (y.requires_grad) {
      Tensor& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= self.grad[i] * self.value[i] / y.value[i];
      }
    }
  });
}

namespace {
Var select_elementwise(const char* name, const Var& a, const Var& b, bool take_min) {
  require_same_shape(name, a, b);
  Tensor out(a.shape());
  // Ties route the gradient to the first operand.
  std::vector<char> from_a(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.value()[i];
    double y = b.value()[i];
    bool pick_a = take_min ? x <= y : x >= y;
    from_a[i] = pick_a;
    out[i] = pick_a ? x : y;
  }
  return make_op(name, std::move(out), {a, b}, [from_a = std::move(from_a)](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (from_a[i]) g[i] += self.grad[i];
      }
    }
    if (y.requires_grad) {
      Tensor& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!from_a[i]) g[i] += self.grad[i];
      }
    }
  });
}
}  // namespace

Var minimum(const Var& a, const Var& b) { return select_elementwise("minimum", a, b, true); }
Var maximum(const Var& a, const Var& b) { return select_elementwise("maximum", a, b, false); }

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= factor;
  return make_op("scale", std::move(out), {a}, [factor](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad, factor);
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v += c;
  return make_op("add_scalar", std::move(out), {a}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(const Var& a) {
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Tensor out(Shape{n, m});
  as_mat(out, n, m).noalias() = as_mat(a.value(), n, k) * as_mat(b.value(), k, m);
  return make_op("matmul", std::move(out), {a, b}, [n, k, m](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    auto dc = as_mat(self.grad, n, m);
    if (x.requires_grad) {
      as_mat(x.grad_buffer(), n, k).noalias() += dc * as_mat(y.value, k, m).transpose();
    }
    if (y.requires_grad) {
      as_mat(y.grad_buffer(), k, m).noalias() += as_mat(x.value, n, k).transpose() * dc;
    }
  });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out(Shape{c, r});
  as_mat(out, c, r) = as_mat(a.value(), r, c).transpose();
  return make_op("transpose", std::move(out), {a}, [r, c](Node& self) {
    Node& x = *self.parents[0];
    if (x.requires_grad) as_mat(x.grad_buffer(), r, c) += as_mat(self.grad, c, r).transpose();
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
  if (weight.dim(0) != in || bias.value().size() != out_dim) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + ", weight " +
                     shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  Tensor out(Shape{n, out_dim});
  auto o = as_mat(out, n, out_dim);
  o.noalias() = as_mat(x.value(), n, in) * as_mat(weight.value(), in, out_dim);
  o.rowwise() += as_mat(bias.value(), 1, out_dim).row(0);
  return make_op("linear", std::move(out), {x, weight, bias}, [n, in, out_dim](Node& self) {
    Node& xi = *self.parents[0];
    Node& w = *self.parents[1];
    Node& b = *self.parents[2];
    auto dy = as_mat(self.grad, n, out_dim);
    if (xi.requires_grad) {
      as_mat(xi.grad_buffer(), n, in).noalias() += dy * as_mat(w.value, in, out_dim).transpose();
    }
    if (w.requires_grad) {
      as_mat(w.grad_buffer(), in, out_dim).noalias() += as_mat(xi.value, n, in).transpose() * dy;
    }
    if (b.requires_grad) {
      as_mat(b.grad_buffer(), 1, out_dim) += dy.colwise().sum();
    }
  });
}

Var linear(const Var& x, const Var& weight) { return matmul(x, weight); }

Var softmax(const Var& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis out of range for " + shape_to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor out(s);
  const auto& in = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      double mx = in[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= z;
    }
  }
  return make_op("softmax", std::move(out), {x}, [outer, inner, n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t base = o * n * inner + j;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          dot += self.grad[base + i * inner] * self.value[base + i * inner];
        }
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t idx = base + i * inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

namespace {

// Shared normalization kernel: `segments` groups of `len` contiguous values,
// with channel-of(index) selecting the affine parameters.
struct NormCache {
  std::vector<double> xhat;
  std::vector<double> inv_std;
};

}  // namespace

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_rank("layer_norm", x, 2);
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (gain.value().size() != c || bias.value().size() != c) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(c) + " entries");
  }
  Tensor out(x.shape());
  auto cache = std::make_shared<NormCache>();
  cache->xhat.resize(n * c);
  cache->inv_std.resize(n);
  const auto& in = x.value();
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += in[r * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double d = in[r * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double is = 1.0 / std::sqrt(var + eps);
    cache->inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      double xh = (in[r * c + j] - mu) * is;
      cache->xhat[r * c + j] = xh;
      out[r * c + j] = xh * gain.value()[j] + bias.value()[j];
    }
  }
  return make_op("layer_norm", std::move(out), {x, gain, bias}, [n, c, cache](Node& self) {
    Node& xi = *self.parents[0];
    Node& g = *self.parents[1];
    Node& b = *self.parents[2];
    const auto& dy = self.grad;
    if (g.requires_grad || b.requires_grad) {
      Tensor& gg = g.grad_buffer();
      Tensor& bg = b.grad_buffer();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
          gg[j] += dy[r * c + j] * cache->xhat[r * c + j];
          bg[j] += dy[r * c + j];
        }
      }
    }
    if (xi.requires_grad) {
      Tensor& dx = xi.grad_buffer();
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t r = 0; r < n; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          double dxh = dy[r * c + j] * g.value[j];
          s1 += dxh;
          s2 += dxh * cache->xhat[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
          double dxh = dy[r * c + j] * g.value[j];
          dx[r * c + j] +=
              cache->inv_std[r] * (dxh - inv_c * s1 - cache->xhat[r * c + j] * inv_c * s2);
        }
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gain, const Var& bias, std::size_t groups, double eps) {
  require_rank("group_norm", x, 3);
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gain.value().size() != c || bias.value().size() != c) {
    throw ShapeError("group_norm: gain/bias must have " + std::to_string(c) + " entries");
  }
  const std::size_t per = c / groups;
  const std::size_t len = per * hw;
  Tensor out(x.shape());
  auto cache = std::make_shared<NormCache>();
  cache->xhat.resize(c * hw);
  cache->inv_std.resize(groups);
  const auto& in = x.value();
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * len;
    double mu = 0.0;
    for (std::size_t i = 0; i < len; ++i) mu += in[base + i];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      double d = in[base + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(len);
    double is = 1.0 / std::sqrt(var + eps);
    cache->inv_std[g] = is;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t ch = g * per + i / hw;
      double xh = (in[base + i] - mu) * is;
      cache->xhat[base + i] = xh;
      out[base + i] = xh * gain.value()[ch] + bias.value()[ch];
    }
  }
  return make_op(
      "group_norm", std::move(out), {x, gain, bias}, [groups, per, hw, len, cache](Node& self) {
        Node& xi = *self.parents[0];
        Node& ga = *self.parents[1];
        Node& bi = *self.parents[2];
        const auto& dy = self.grad;
        if (ga.requires_grad || bi.requires_grad) {
          Tensor& gg = ga.grad_buffer();
          Tensor& bg = bi.grad_buffer();
          for (std::size_t i = 0; i < dy.size(); ++i) {
            const std::size_t ch = i / hw;
            gg[ch] += dy[i] * cache->xhat[i];
            bg[ch] += dy[i];
          }
        }
        if (xi.requires_grad) {
          Tensor& dx = xi.grad_buffer();
          const double inv_n = 1.0 / static_cast<double>(len);
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = g * len;
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t ch = g * per + i / hw;
              double dxh = dy[base + i] * ga.value[ch];
              s1 += dxh;
              s2 += dxh * cache->xhat[base + i];
            }
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t ch = g * per + i / hw;
              double dxh = dy[base + i] * ga.value[ch];
              dx[base + i] += cache->inv_std[g] *
                              (dxh - inv_n * s1 - cache->xhat[base + i] * inv_n * s2);
            }
          }
        }
      });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride,
           std::size_t padding) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", weight, 4);
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin || bias.value().size() != cout) {
    throw ShapeError("conv2d: input " + shape_to_string(x.shape()) + ", weight " +
                     shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  if (stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_to_string(x.shape()));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t kdim = cin * kh * kw;
  const std::size_t npos = ho * wo;

  // im2col: cols[kdim, npos]; out = W[cout,kdim] * cols + b.
  auto cols = std::make_shared<Tensor>(Shape{kdim, npos});
  const auto& in = x.value();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t a = 0; a < kh; ++a) {
      for (std::size_t b = 0; b < kw; ++b) {
        const std::size_t row = (ci * kh + a) * kw + b;
        double* dst = cols->ptr() + row * npos;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + a) - static_cast<long>(padding);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + b) - static_cast<long>(padding);
            double v = 0.0;
            if (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w)) {
              v = in[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
            }
            dst[oy * wo + ox] = v;
          }
        }
      }
    }
  }
  Tensor out(Shape{cout, ho, wo});
  auto o = as_mat(out, cout, npos);
  o.noalias() = as_mat(weight.value(), cout, kdim) * as_mat(*cols, kdim, npos);
  for (std::size_t co = 0; co < cout; ++co) o.row(static_cast<Eigen::Index>(co)).array() += bias.value()[co];

  return make_op("conv2d", std::move(out), {x, weight, bias},
                 [=](Node& self) {
                   Node& xi = *self.parents[0];
                   Node& wt = *self.parents[1];
                   Node& bi = *self.parents[2];
                   auto dy = as_mat(self.grad, cout, npos);
                   if (wt.requires_grad) {
                     as_mat(wt.grad_buffer(), cout, kdim).noalias() +=
                         dy * as_mat(*cols, kdim, npos).transpose();
                   }
                   if (bi.requires_grad) {
                     Tensor& bg = bi.grad_buffer();
                     for (std::size_t co = 0; co < cout; ++co) {
                       bg[co] += dy.row(static_cast<Eigen::Index>(co)).sum();
                     }
                   }
                   if (xi.requires_grad) {
                     Tensor dcols(Shape{kdim, npos});
                     as_mat(dcols, kdim, npos).noalias() =
                         as_mat(wt.value, cout, kdim).transpose() * dy;
                     Tensor& dx = xi.grad_buffer();
                     for (std::size_t ci = 0; ci < cin; ++ci) {
                       for (std::size_t a = 0; a < kh; ++a) {
                         for (std::size_t b = 0; b < kw; ++b) {
                           const std::size_t row = (ci * kh + a) * kw + b;
                           const double* src = dcols.ptr() + row * npos;
                           for (std::size_t oy = 0; oy < ho; ++oy) {
                             const long iy = static_cast<long>(oy * stride + a) -
                                             static_cast<long>(padding);
                             if (iy < 0 || iy >= static_cast<long>(h)) continue;
                             for (std::size_t ox = 0; ox < wo; ++ox) {
                               const long ix = static_cast<long>(ox * stride + b) -
                                               static_cast<long>(padding);
                               if (ix < 0 || ix >= static_cast<long>(w)) continue;
                               dx[(ci * h + static_cast<std::size_t>(iy)) * w +
                                  static_cast<std::size_t>(ix)] += src[oy * wo + ox];
                             }
                           }
                         }
                       }
                     }
                   }
                 });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_to_string(s0));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_to_string(s0) + " and " +
                       shape_to_string(s));
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    const std::size_t block = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.ptr() + o * block, block, out.ptr() + o * total * inner + offset * inner);
    }
    offset += extents[k];
  }
  return make_op("concat", std::move(out), parts, [extents, outer, inner, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      const std::size_t block = extents[k] * inner;
      if (p.requires_grad) {
        Tensor& g = p.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.ptr() + o * total * inner + offset * inner;
          double* dst = g.ptr() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += extents[k];
    }
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                     " invalid for " + shape_to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().ptr() + (o * n + start) * inner, length * inner,
                out.ptr() + o * length * inner);
  }
  return make_op("slice", std::move(out), {x}, [outer, inner, n, start, length](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = g.ptr() + (o * n + start) * inner;
      const double* src = self.grad.ptr() + o * length * inner;
      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  for (auto r : rows) {
    if (r >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " +
                       shape_to_string(x.shape()));
    }
  }
  Tensor out(Shape{rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.value().ptr() + rows[i] * c, c, out.ptr() + i * c);
  }
  return make_op("gather_rows", std::move(out), {x}, [rows, c](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[rows[i] * c + j] += self.grad[i * c + j];
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op("sum", Tensor::scalar(s), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const double d = self.grad[0];
    for (auto& v : g.storage()) v += d;
  });
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

}  // namespace stvod
