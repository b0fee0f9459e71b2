// core/autodiff.cc

// Copyright 2026  CEM-Net Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "cemnet/core/autodiff.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cemnet {
namespace ad {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void gemm(const double *A, const double *B, double *C, int m, int k, int n,
          bool trans_a, bool trans_b, bool accumulate) {
  Eigen::Map<RowMat> c(C, m, n);
  Eigen::Map<const RowMat> a(A, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const RowMat> b(B, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) {
    if (accumulate) c.noalias() += a * b; else c.noalias() = a * b;
  } else if (trans_a && !trans_b) {
    if (accumulate) c.noalias() += a.transpose() * b;
    else c.noalias() = a.transpose() * b;
  } else if (!trans_a && trans_b) {
    if (accumulate) c.noalias() += a * b.transpose();
    else c.noalias() = a * b.transpose();
  } else {
    if (accumulate) c.noalias() += a.transpose() * b.transpose();
    else c.noalias() = a.transpose() * b.transpose();
  }
}

void Node::accumulate(const Tensor &g) {
  if (!g.same_shape(value))
    throw InputError("autodiff: gradient shape mismatch");
  if (!grad_set) {
    grad = Tensor(value.shape());
    grad_set = true;
  }
  for (int64_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

void Node::accumulate_into(int parent, const Tensor &g) {
  Node *p = parents[static_cast<size_t>(parent)].get();
  if (p->requires_grad) p->accumulate(g);
}

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

Var param(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

static Var make(Tensor value, std::vector<Var> parents,
                std::function<void(Node &)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto &p : parents) n->requires_grad |= p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void backward(const Var &root) {
  if (!root->requires_grad) return;
  root->accumulate(Tensor::full(root->value.shape(), 1.0));

  // Iterative DFS post-order over parents; reversed it is a topological
  // order where every consumer runs before its producers.
  struct Frame {
    Node *n;
    size_t i;
  };
  std::vector<Node *> order;
  std::unordered_set<Node *> visited;
  std::vector<Frame> st;
  st.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!st.empty()) {
    Frame &f = st.back();
    if (f.i < f.n->parents.size()) {
      Node *p = f.n->parents[f.i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        st.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      st.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *n = *it;
    if (n->backward_fn && n->grad_set) n->backward_fn(*n);
  }
}

// ---- elementwise ----

static void check_same(const Var &a, const Var &b, const char *op) {
  if (!a->value.same_shape(b->value))
    throw InputError(std::string(op) + ": shape mismatch " +
                     a->value.shape_str() + " vs " + b->value.shape_str());
}

Var add(const Var &a, const Var &b) {
  check_same(a, b, "add");
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return make(std::move(out), {a, b}, [](Node &self) {
    self.accumulate_into(0, self.grad);
    self.accumulate_into(1, self.grad);
  });
}

Var sub(const Var &a, const Var &b) {
  check_same(a, b, "sub");
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
  return make(std::move(out), {a, b}, [](Node &self) {
    self.accumulate_into(0, self.grad);
    self.accumulate_into(1, -1.0 * self.grad);
  });
}

Var mul(const Var &a, const Var &b) {
  check_same(a, b, "mul");
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  return make(std::move(out), {a, b}, [](Node &self) {
    const Tensor &av = self.parents[0]->value;
    const Tensor &bv = self.parents[1]->value;
    Tensor ga(av.shape()), gb(bv.shape());
    for (int64_t i = 0; i < av.numel(); ++i) {
      ga[i] = self.grad[i] * bv[i];
      gb[i] = self.grad[i] * av[i];
    }
    self.accumulate_into(0, ga);
    self.accumulate_into(1, gb);
  });
}

Var add_scalar(const Var &a, double c) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + c;
  return make(std::move(out), {a},
              [](Node &self) { self.accumulate_into(0, self.grad); });
}

Var scale(const Var &a, double c) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * c;
  return make(std::move(out), {a}, [c](Node &self) {
    self.accumulate_into(0, c * self.grad);
  });
}

Var neg(const Var &a) { return scale(a, -1.0); }

// Shared scaffolding for y = f(x) with dy/dx expressible from x and y.
template <typename F, typename DF>
static Var unary(const Var &a, F f, DF df) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(a->value[i]);
  return make(std::move(out), {a}, [df](Node &self) {
    const Tensor &x = self.parents[0]->value;
    Tensor g(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i)
      g[i] = self.grad[i] * df(x[i], self.value[i]);
    self.accumulate_into(0, g);
  });
}

Var relu(const Var &a) {
  return unary(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var &a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var sigmoid(const Var &a) {
  return unary(
      a,
      [](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh_op(const Var &a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var softplus(const Var &a) {
  return unary(
      a,
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      });
}

Var exp_op(const Var &a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log_op(const Var &a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var sqrt_op(const Var &a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var square(const Var &a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var abs_op(const Var &a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var reciprocal(const Var &a) {
  return unary(a, [](double x) { return 1.0 / x; },
               [](double, double y) { return -y * y; });
}

Var mul_scalar_var(const Var &a, const Var &s) {
  if (s->value.numel() != 1)
    throw InputError("mul_scalar_var: scalar operand must have 1 element");
  const double sv = s->value[0];
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * sv;
  return make(std::move(out), {a, s}, [](Node &self) {
    const Tensor &av = self.parents[0]->value;
    const double sv = self.parents[1]->value[0];
    Tensor ga(av.shape());
    double gs = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) {
      ga[i] = self.grad[i] * sv;
      gs += self.grad[i] * av[i];
    }
    self.accumulate_into(0, ga);
    self.accumulate_into(1, Tensor(self.parents[1]->value.shape(), {gs}));
  });
}

// ---- shape / linear algebra ----

static void want_rank2(const Var &a, const char *op) {
  if (a->value.rank() != 2)
    throw InputError(std::string(op) + ": want rank-2, got " +
                     a->value.shape_str());
}

Var matmul(const Var &a, const Var &b) {
  want_rank2(a, "matmul");
  want_rank2(b, "matmul");
  const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  if (b->value.dim(0) != k)
    throw InputError("matmul: inner dims " + a->value.shape_str() + " x " +
                     b->value.shape_str());
  Tensor out({m, n});
  gemm(a->value.data(), b->value.data(), out.data(), m, k, n, false, false,
       false);
  return make(std::move(out), {a, b}, [m, k, n](Node &self) {
    const Tensor &av = self.parents[0]->value;
    const Tensor &bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Tensor ga({m, k});
      gemm(self.grad.data(), bv.data(), ga.data(), m, n, k, false, true, false);
      self.accumulate_into(0, ga);
    }
    if (self.parents[1]->requires_grad) {
      Tensor gb({k, n});
      gemm(av.data(), self.grad.data(), gb.data(), k, m, n, true, false, false);
      self.accumulate_into(1, gb);
    }
  });
}

Var transpose(const Var &a) {
  want_rank2(a, "transpose");
  const int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = a->value.at(i, j);
  return make(std::move(out), {a}, [r, c](Node &self) {
    Tensor g({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g.at(i, j) = self.grad.at(j, i);
    self.accumulate_into(0, g);
  });
}

Var add_bias(const Var &a, const Var &b) {
  want_rank2(a, "add_bias");
  const int r = a->value.dim(0), c = a->value.dim(1);
  if (b->value.rank() != 1 || b->value.dim(0) != c)
    throw InputError("add_bias: bias shape " + b->value.shape_str() +
                     " vs cols " + std::to_string(c));
  Tensor out({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = a->value.at(i, j) + b->value[j];
  return make(std::move(out), {a, b}, [r, c](Node &self) {
    self.accumulate_into(0, self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor gb({c});
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gb[j] += self.grad.at(i, j);
      self.accumulate_into(1, gb);
    }
  });
}

Var reshape(const Var &a, std::vector<int> shape) {
  Tensor out = a->value.reshaped(shape);
  return make(std::move(out), {a}, [](Node &self) {
    self.accumulate_into(0,
                         self.grad.reshaped(self.parents[0]->value.shape()));
  });
}

Var slice_rows(const Var &a, int r0, int r1) {
  want_rank2(a, "slice_rows");
  const int r = a->value.dim(0), c = a->value.dim(1);
  if (r0 < 0 || r1 > r || r0 >= r1)
    throw InputError("slice_rows: bad range");
  Tensor out({r1 - r0, c});
  for (int i = r0; i < r1; ++i)
    for (int j = 0; j < c; ++j) out.at(i - r0, j) = a->value.at(i, j);
  return make(std::move(out), {a}, [r0, r1, r, c](Node &self) {
    Tensor g({r, c});
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < c; ++j) g.at(i, j) = self.grad.at(i - r0, j);
    self.accumulate_into(0, g);
  });
}

Var slice_cols(const Var &a, int c0, int c1) {
  want_rank2(a, "slice_cols");
  const int r = a->value.dim(0), c = a->value.dim(1);
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw InputError("slice_cols: bad range");
  Tensor out({r, c1 - c0});
  for (int i = 0; i < r; ++i)
    for (int j = c0; j < c1; ++j) out.at(i, j - c0) = a->value.at(i, j);
  return make(std::move(out), {a}, [c0, c1, r, c](Node &self) {
    Tensor g({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = c0; j < c1; ++j) g.at(i, j) = self.grad.at(i, j - c0);
    self.accumulate_into(0, g);
  });
}

Var concat_rows(const std::vector<Var> &xs) {
  if (xs.empty()) throw InputError("concat_rows: empty");
  const int c = xs[0]->value.dim(1);
  int rows = 0;
  for (const auto &x : xs) {
    want_rank2(x, "concat_rows");
    if (x->value.dim(1) != c) throw InputError("concat_rows: cols differ");
    rows += x->value.dim(0);
  }
  Tensor out({rows, c});
  int r = 0;
  std::vector<int> offsets;
  for (const auto &x : xs) {
    offsets.push_back(r);
    for (int i = 0; i < x->value.dim(0); ++i)
      for (int j = 0; j < c; ++j) out.at(r + i, j) = x->value.at(i, j);
    r += x->value.dim(0);
  }
  return make(std::move(out), xs, [offsets, c](Node &self) {
    for (size_t p = 0; p < self.parents.size(); ++p) {
      if (!self.parents[p]->requires_grad) continue;
      const int pr = self.parents[p]->value.dim(0);
      Tensor g({pr, c});
      for (int i = 0; i < pr; ++i)
        for (int j = 0; j < c; ++j)
          g.at(i, j) = self.grad.at(offsets[p] + i, j);
      self.accumulate_into(static_cast<int>(p), g);
    }
  });
}

Var concat_cols(const std::vector<Var> &xs) {
  if (xs.empty()) throw InputError("concat_cols: empty");
  const int r = xs[0]->value.dim(0);
  int cols = 0;
  for (const auto &x : xs) {
    want_rank2(x, "concat_cols");
    if (x->value.dim(0) != r) throw InputError("concat_cols: rows differ");
    cols += x->value.dim(1);
  }
  Tensor out({r, cols});
  int c = 0;
  std::vector<int> offsets;
  for (const auto &x : xs) {
    offsets.push_back(c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < x->value.dim(1); ++j)
        out.at(i, c + j) = x->value.at(i, j);
    c += x->value.dim(1);
  }
  return make(std::move(out), xs, [offsets, r](Node &self) {
    for (size_t p = 0; p < self.parents.size(); ++p) {
      if (!self.parents[p]->requires_grad) continue;
      const int pc = self.parents[p]->value.dim(1);
      Tensor g({r, pc});
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < pc; ++j)
          g.at(i, j) = self.grad.at(i, offsets[p] + j);
      self.accumulate_into(static_cast<int>(p), g);
    }
  });
}

Var sum(const Var &a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make(Tensor({1}, {s}), {a}, [](Node &self) {
    self.accumulate_into(
        0, Tensor::full(self.parents[0]->value.shape(), self.grad[0]));
  });
}

Var mean(const Var &a) {
  const double n = static_cast<double>(a->value.numel());
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make(Tensor({1}, {s / n}), {a}, [n](Node &self) {
    self.accumulate_into(
        0, Tensor::full(self.parents[0]->value.shape(), self.grad[0] / n));
  });
}

Var sum_cols(const Var &a) {
  want_rank2(a, "sum_cols");
  const int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out({r, 1});
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a->value.at(i, j);
    out.at(i, 0) = s;
  }
  return make(std::move(out), {a}, [r, c](Node &self) {
    Tensor g({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g.at(i, j) = self.grad.at(i, 0);
    self.accumulate_into(0, g);
  });
}

Var mean_rows(const Var &a) {
  want_rank2(a, "mean_rows");
  const int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out({1, c});
  for (int j = 0; j < c; ++j) {
    double s = 0.0;
    for (int i = 0; i < r; ++i) s += a->value.at(i, j);
    out.at(0, j) = s / r;
  }
  return make(std::move(out), {a}, [r, c](Node &self) {
    Tensor g({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g.at(i, j) = self.grad.at(0, j) / r;
    self.accumulate_into(0, g);
  });
}

Var softmax_rows(const Var &a) {
  want_rank2(a, "softmax_rows");
  const int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out({r, c});
  for (int i = 0; i < r; ++i) {
    double mx = a->value.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, a->value.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(a->value.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (int j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  return make(std::move(out), {a}, [r, c](Node &self) {
    Tensor g({r, c});
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
      for (int j = 0; j < c; ++j)
        g.at(i, j) = self.value.at(i, j) * (self.grad.at(i, j) - dot);
    }
    self.accumulate_into(0, g);
  });
}

Var l2_normalize_rows(const Var &a, double eps) {
  want_rank2(a, "l2_normalize_rows");
  const int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out({r, c});
  std::vector<double> norms(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a->value.at(i, j) * a->value.at(i, j);
    norms[static_cast<size_t>(i)] = std::sqrt(s + eps);
    for (int j = 0; j < c; ++j)
      out.at(i, j) = a->value.at(i, j) / norms[static_cast<size_t>(i)];
  }
  return make(std::move(out), {a}, [r, c, norms](Node &self) {
    Tensor g({r, c});
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
      for (int j = 0; j < c; ++j)
        g.at(i, j) = (self.grad.at(i, j) - self.value.at(i, j) * dot) /
                     norms[static_cast<size_t>(i)];
    }
    self.accumulate_into(0, g);
  });
}

Var layer_norm(const Var &a, const Var &gamma, const Var &beta, double eps) {
  want_rank2(a, "layer_norm");
  const int r = a->value.dim(0), c = a->value.dim(1);
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw InputError("layer_norm: gamma/beta size");
  Tensor out({r, c});
  Tensor xhat({r, c});
  std::vector<double> istd(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += a->value.at(i, j);
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      double d = a->value.at(i, j) - mu;
      var += d * d;
    }
    var /= c;
    istd[static_cast<size_t>(i)] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      xhat.at(i, j) = (a->value.at(i, j) - mu) * istd[static_cast<size_t>(i)];
      out.at(i, j) = gamma->value[j] * xhat.at(i, j) + beta->value[j];
    }
  }
  return make(std::move(out), {a, gamma, beta},
              [r, c, xhat, istd](Node &self) {
    const Tensor &gv = self.parents[1]->value;
    if (self.parents[1]->requires_grad) {
      Tensor gg({c});
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gg[j] += self.grad.at(i, j) * xhat.at(i, j);
      self.accumulate_into(1, gg);
    }
    if (self.parents[2]->requires_grad) {
      Tensor gb({c});
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gb[j] += self.grad.at(i, j);
      self.accumulate_into(2, gb);
    }
    if (self.parents[0]->requires_grad) {
      Tensor gx({r, c});
      for (int i = 0; i < r; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < c; ++j) {
          double dxh = self.grad.at(i, j) * gv[j];
          m1 += dxh;
          m2 += dxh * xhat.at(i, j);
        }
        m1 /= c;
        m2 /= c;
        for (int j = 0; j < c; ++j) {
          double dxh = self.grad.at(i, j) * gv[j];
          gx.at(i, j) =
              (dxh - m1 - xhat.at(i, j) * m2) * istd[static_cast<size_t>(i)];
        }
      }
      self.accumulate_into(0, gx);
    }
  });
}

Var cross_entropy_logits(const Var &a, const std::vector<int> &labels) {
  want_rank2(a, "cross_entropy_logits");
  const int r = a->value.dim(0), c = a->value.dim(1);
  if (static_cast<int>(labels.size()) != r)
    throw InputError("cross_entropy_logits: labels size vs rows");
  for (int y : labels)
    if (y < 0 || y >= c) throw InputError("cross_entropy_logits: bad label");
  double loss = 0.0;
  for (int i = 0; i < r; ++i) {
    double mx = a->value.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, a->value.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(a->value.at(i, j) - mx);
    loss += -(a->value.at(i, labels[static_cast<size_t>(i)]) - mx - std::log(z));
  }
  loss /= r;
  return make(Tensor({1}, {loss}), {a}, [r, c, labels](Node &self) {
    const Tensor &av = self.parents[0]->value;
    Tensor g({r, c});
    for (int i = 0; i < r; ++i) {
      double mx = av.at(i, 0);
      for (int j = 1; j < c; ++j) mx = std::max(mx, av.at(i, j));
      double z = 0.0;
      for (int j = 0; j < c; ++j) z += std::exp(av.at(i, j) - mx);
      for (int j = 0; j < c; ++j) {
        double p = std::exp(av.at(i, j) - mx) / z;
        double onehot = (j == labels[static_cast<size_t>(i)]) ? 1.0 : 0.0;
        g.at(i, j) = self.grad[0] * (p - onehot) / r;
      }
    }
    self.accumulate_into(0, g);
  });
}

Var stop_gradient(const Var &a) { return constant(a->value); }

// ---- conv / image ----

struct ConvDims {
  int n, ci, h, w, co, kh, kw, oh, ow;
};

static ConvDims conv_dims(const Tensor &x, const Tensor &wt, int stride,
                          int pad) {
  if (x.rank() != 4 || wt.rank() != 4)
    throw InputError("conv2d: want [N,C,H,W] and [OC,C,kh,kw]");
  ConvDims d;
  d.n = x.dim(0);
  d.ci = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.co = wt.dim(0);
  d.kh = wt.dim(2);
  d.kw = wt.dim(3);
  if (wt.dim(1) != d.ci) throw InputError("conv2d: channel mismatch");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.oh < 1 || d.ow < 1) throw InputError("conv2d: kernel exceeds input");
  return d;
}

static void im2col(const double *x, const ConvDims &d, int stride, int pad,
                   double *col) {
  // col is [ci*kh*kw, oh*ow]
  const int span = d.oh * d.ow;
  for (int c = 0; c < d.ci; ++c)
    for (int i = 0; i < d.kh; ++i)
      for (int j = 0; j < d.kw; ++j) {
        double *row = col + (static_cast<int64_t>((c * d.kh + i) * d.kw + j)) *
                                span;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int yy = oy * stride - pad + i;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int xx = ox * stride - pad + j;
            row[oy * d.ow + ox] =
                (yy >= 0 && yy < d.h && xx >= 0 && xx < d.w)
                    ? x[(static_cast<int64_t>(c) * d.h + yy) * d.w + xx]
                    : 0.0;
          }
        }
      }
}

static void col2im_acc(const double *col, const ConvDims &d, int stride,
                       int pad, double *x) {
  const int span = d.oh * d.ow;
  for (int c = 0; c < d.ci; ++c)
    for (int i = 0; i < d.kh; ++i)
      for (int j = 0; j < d.kw; ++j) {
        const double *row =
            col + (static_cast<int64_t>((c * d.kh + i) * d.kw + j)) * span;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int yy = oy * stride - pad + i;
          if (yy < 0 || yy >= d.h) continue;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int xx = ox * stride - pad + j;
            if (xx < 0 || xx >= d.w) continue;
            x[(static_cast<int64_t>(c) * d.h + yy) * d.w + xx] +=
                row[oy * d.ow + ox];
          }
        }
      }
}

Var conv2d(const Var &x, const Var &w, const Var &b, int stride, int pad) {
  ConvDims d = conv_dims(x->value, w->value, stride, pad);
  if (b->value.numel() != d.co) throw InputError("conv2d: bias size");
  const int ckk = d.ci * d.kh * d.kw;
  const int span = d.oh * d.ow;
  Tensor out({d.n, d.co, d.oh, d.ow});
  std::vector<double> col(static_cast<size_t>(ckk) * span);
  for (int n = 0; n < d.n; ++n) {
    im2col(x->value.data() + static_cast<int64_t>(n) * d.ci * d.h * d.w, d,
           stride, pad, col.data());
    double *on = out.data() + static_cast<int64_t>(n) * d.co * span;
    gemm(w->value.data(), col.data(), on, d.co, ckk, span, false, false,
         false);
    for (int oc = 0; oc < d.co; ++oc) {
      const double bias = b->value[oc];
      double *p = on + static_cast<int64_t>(oc) * span;
      for (int i = 0; i < span; ++i) p[i] += bias;
    }
  }
  return make(std::move(out), {x, w, b}, [d, stride, pad](Node &self) {
    const int ckk = d.ci * d.kh * d.kw;
    const int span = d.oh * d.ow;
    const Tensor &xv = self.parents[0]->value;
    const Tensor &wv = self.parents[1]->value;
    const bool need_x = self.parents[0]->requires_grad;
    const bool need_w = self.parents[1]->requires_grad;
    const bool need_b = self.parents[2]->requires_grad;
    Tensor gx = need_x ? Tensor(xv.shape()) : Tensor();
    Tensor gw = need_w ? Tensor(wv.shape()) : Tensor();
    Tensor gb = need_b ? Tensor({d.co}) : Tensor();
    // The column buffer is recomputed from the saved input rather than
    // cached from the forward pass to keep graph memory flat.
    std::vector<double> col(static_cast<size_t>(ckk) * span);
    std::vector<double> gcol(need_x ? col.size() : 0);
    for (int n = 0; n < d.n; ++n) {
      const double *gn =
          self.grad.data() + static_cast<int64_t>(n) * d.co * span;
      if (need_w || need_x)
        im2col(xv.data() + static_cast<int64_t>(n) * d.ci * d.h * d.w, d,
               stride, pad, col.data());
      if (need_w)
        gemm(gn, col.data(), gw.data(), d.co, span, ckk, false, true, true);
      if (need_b)
        for (int oc = 0; oc < d.co; ++oc) {
          const double *p = gn + static_cast<int64_t>(oc) * span;
          for (int i = 0; i < span; ++i) gb[oc] += p[i];
        }
      if (need_x) {
        gemm(wv.data(), gn, gcol.data(), ckk, d.co, span, true, false, false);
        col2im_acc(gcol.data(), d, stride, pad,
                   gx.data() + static_cast<int64_t>(n) * d.ci * d.h * d.w);
      }
    }
    if (need_x) self.accumulate_into(0, gx);
    if (need_w) self.accumulate_into(1, gw);
    if (need_b) self.accumulate_into(2, gb);
  });
}

Var avg_pool2d(const Var &x, int k) {
  const Tensor &xv = x->value;
  if (xv.rank() != 4) throw InputError("avg_pool2d: want [N,C,H,W]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % k || w % k) throw InputError("avg_pool2d: size not divisible");
  const int oh = h / k, ow = w / k;
  Tensor out({n, c, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = 0.0;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
              s += xv[((static_cast<int64_t>(b) * c + ch) * h + oy * k + i) *
                          w +
                      ox * k + j];
          out[((static_cast<int64_t>(b) * c + ch) * oh + oy) * ow + ox] =
              s / (k * k);
        }
  return make(std::move(out), {x}, [n, c, h, w, k](Node &self) {
    const int oh = h / k, ow = w / k;
    Tensor g({n, c, h, w});
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const double v =
                self.grad[((static_cast<int64_t>(b) * c + ch) * oh + oy) * ow +
                          ox] /
                (k * k);
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j)
                g[((static_cast<int64_t>(b) * c + ch) * h + oy * k + i) * w +
                  ox * k + j] = v;
          }
    self.accumulate_into(0, g);
  });
}

Var upsample2x(const Var &x) {
  const Tensor &xv = x->value;
  if (xv.rank() != 4) throw InputError("upsample2x: want [N,C,H,W]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const double v =
              xv[((static_cast<int64_t>(b) * c + ch) * h + y) * w + xx];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              out[((static_cast<int64_t>(b) * c + ch) * 2 * h + 2 * y + dy) *
                      2 * w +
                  2 * xx + dx] = v;
        }
  return make(std::move(out), {x}, [n, c, h, w](Node &self) {
    Tensor g({n, c, h, w});
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            double s = 0.0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                s += self.grad[((static_cast<int64_t>(b) * c + ch) * 2 * h +
                                2 * y + dy) *
                                   2 * w +
                               2 * xx + dx];
            g[((static_cast<int64_t>(b) * c + ch) * h + y) * w + xx] = s;
          }
    self.accumulate_into(0, g);
  });
}

Var mean_hw(const Var &x) {
  const Tensor &xv = x->value;
  if (xv.rank() != 4) throw InputError("mean_hw: want [N,C,H,W]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      const double *p = xv.data() + (static_cast<int64_t>(b) * c + ch) * h * w;
      for (int i = 0; i < h * w; ++i) s += p[i];
      out.at(b, ch) = s / (h * w);
    }
  return make(std::move(out), {x}, [n, c, h, w](Node &self) {
    Tensor g({n, c, h, w});
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        const double v = self.grad.at(b, ch) / (h * w);
        double *p = g.data() + (static_cast<int64_t>(b) * c + ch) * h * w;
        for (int i = 0; i < h * w; ++i) p[i] = v;
      }
    self.accumulate_into(0, g);
  });
}

Var concat_channels(const std::vector<Var> &xs) {
  if (xs.empty()) throw InputError("concat_channels: empty");
  const Tensor &x0 = xs[0]->value;
  if (x0.rank() != 4) throw InputError("concat_channels: want [N,C,H,W]");
  const int n = x0.dim(0), h = x0.dim(2), w = x0.dim(3);
  int c = 0;
  std::vector<int> offsets;
  for (const auto &x : xs) {
    if (x->value.rank() != 4 || x->value.dim(0) != n || x->value.dim(2) != h ||
        x->value.dim(3) != w)
      throw InputError("concat_channels: shape mismatch");
    offsets.push_back(c);
    c += x->value.dim(1);
  }
  Tensor out({n, c, h, w});
  for (size_t p = 0; p < xs.size(); ++p) {
    const Tensor &xv = xs[p]->value;
    const int pc = xv.dim(1);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < pc; ++ch)
        std::copy_n(xv.data() + (static_cast<int64_t>(b) * pc + ch) * h * w,
                    h * w,
                    out.data() + (static_cast<int64_t>(b) * c + offsets[p] +
                                  ch) *
                                     h * w);
  }
  return make(std::move(out), xs, [offsets, n, c, h, w](Node &self) {
    for (size_t p = 0; p < self.parents.size(); ++p) {
      if (!self.parents[p]->requires_grad) continue;
      const int pc = self.parents[p]->value.dim(1);
      Tensor g({n, pc, h, w});
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < pc; ++ch)
          std::copy_n(self.grad.data() + (static_cast<int64_t>(b) * c +
                                          offsets[p] + ch) *
                                             h * w,
                      h * w,
                      g.data() + (static_cast<int64_t>(b) * pc + ch) * h * w);
      self.accumulate_into(static_cast<int>(p), g);
    }
  });
}

Var slice_channels(const Var &x, int c0, int c1) {
  const Tensor &xv = x->value;
  if (xv.rank() != 4) throw InputError("slice_channels: want [N,C,H,W]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (c0 < 0 || c1 > c || c0 >= c1) throw InputError("slice_channels: range");
  Tensor out({n, c1 - c0, h, w});
  for (int b = 0; b < n; ++b)
    for (int ch = c0; ch < c1; ++ch)
      std::copy_n(xv.data() + (static_cast<int64_t>(b) * c + ch) * h * w,
                  h * w,
                  out.data() +
                      (static_cast<int64_t>(b) * (c1 - c0) + ch - c0) * h * w);
  return make(std::move(out), {x}, [n, c, h, w, c0, c1](Node &self) {
    Tensor g({n, c, h, w});
    for (int b = 0; b < n; ++b)
      for (int ch = c0; ch < c1; ++ch)
        std::copy_n(self.grad.data() +
                        (static_cast<int64_t>(b) * (c1 - c0) + ch - c0) * h * w,
                    h * w,
                    g.data() + (static_cast<int64_t>(b) * c + ch) * h * w);
    self.accumulate_into(0, g);
  });
}

Var bilinear_sample(const Var &img, const Var &flow) {
  const Tensor &iv = img->value;
  const Tensor &fv = flow->value;
  if (iv.rank() != 4 || fv.rank() != 4 || fv.dim(1) != 2)
    throw InputError("bilinear_sample: want img [N,C,H,W], flow [N,2,H,W]");
  const int n = iv.dim(0), c = iv.dim(1), h = iv.dim(2), w = iv.dim(3);
  if (fv.dim(0) != n || fv.dim(2) != h || fv.dim(3) != w)
    throw InputError("bilinear_sample: flow size mismatch");
  Tensor out({n, c, h, w});
  auto idx = [&](int b, int ch, int y, int x) {
    return ((static_cast<int64_t>(b) * c + ch) * h + y) * w + x;
  };
  auto fidx = [&](int b, int ch, int y, int x) {
    return ((static_cast<int64_t>(b) * 2 + ch) * h + y) * w + x;
  };
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double sx = x + fv[fidx(b, 0, y, x)];
        double sy = y + fv[fidx(b, 1, y, x)];
        sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
        sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
        const int x0 = std::min(static_cast<int>(sx), w - 2 < 0 ? 0 : w - 2);
        const int y0 = std::min(static_cast<int>(sy), h - 2 < 0 ? 0 : h - 2);
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wx = sx - x0, wy = sy - y0;
        for (int ch = 0; ch < c; ++ch) {
          const double v00 = iv[idx(b, ch, y0, x0)];
          const double v01 = iv[idx(b, ch, y0, x1)];
          const double v10 = iv[idx(b, ch, y1, x0)];
          const double v11 = iv[idx(b, ch, y1, x1)];
          out[idx(b, ch, y, x)] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                  wy * ((1 - wx) * v10 + wx * v11);
        }
      }
  return make(std::move(out), {img, flow}, [n, c, h, w](Node &self) {
    const Tensor &iv = self.parents[0]->value;
    const Tensor &fv = self.parents[1]->value;
    const bool need_img = self.parents[0]->requires_grad;
    const bool need_flow = self.parents[1]->requires_grad;
    Tensor gi = need_img ? Tensor(iv.shape()) : Tensor();
    Tensor gf = need_flow ? Tensor(fv.shape()) : Tensor();
    auto idx = [&](int b, int ch, int y, int x) {
      return ((static_cast<int64_t>(b) * c + ch) * h + y) * w + x;
    };
    auto fidx = [&](int b, int ch, int y, int x) {
      return ((static_cast<int64_t>(b) * 2 + ch) * h + y) * w + x;
    };
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double sx = x + fv[fidx(b, 0, y, x)];
          double sy = y + fv[fidx(b, 1, y, x)];
          const bool in_x = sx > 0.0 && sx < w - 1;
          const bool in_y = sy > 0.0 && sy < h - 1;
          sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
          sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
          const int x0 = std::min(static_cast<int>(sx), w - 2 < 0 ? 0 : w - 2);
          const int y0 = std::min(static_cast<int>(sy), h - 2 < 0 ? 0 : h - 2);
          const int x1 = std::min(x0 + 1, w - 1);
          const int y1 = std::min(y0 + 1, h - 1);
          const double wx = sx - x0, wy = sy - y0;
          double dsx = 0.0, dsy = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            const double g = self.grad[idx(b, ch, y, x)];
            const double v00 = iv[idx(b, ch, y0, x0)];
            const double v01 = iv[idx(b, ch, y0, x1)];
            const double v10 = iv[idx(b, ch, y1, x0)];
            const double v11 = iv[idx(b, ch, y1, x1)];
            if (need_img) {
              gi[idx(b, ch, y0, x0)] += g * (1 - wy) * (1 - wx);
              gi[idx(b, ch, y0, x1)] += g * (1 - wy) * wx;
              gi[idx(b, ch, y1, x0)] += g * wy * (1 - wx);
              gi[idx(b, ch, y1, x1)] += g * wy * wx;
            }
            dsx += g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10));
            dsy += g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01));
          }
          if (need_flow) {
            if (in_x) gf[fidx(b, 0, y, x)] += dsx;
            if (in_y) gf[fidx(b, 1, y, x)] += dsy;
          }
        }
    if (need_img) self.accumulate_into(0, gi);
    if (need_flow) self.accumulate_into(1, gf);
  });
}

// ---- fused losses ----

Var mse_loss(const Var &a, const Var &b) {
  check_same(a, b, "mse_loss");
  const double n = static_cast<double>(a->value.numel());
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) {
    const double d = a->value[i] - b->value[i];
    s += d * d;
  }
  return make(Tensor({1}, {s / n}), {a, b}, [n](Node &self) {
    const Tensor &av = self.parents[0]->value;
    const Tensor &bv = self.parents[1]->value;
    Tensor g(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i)
      g[i] = self.grad[0] * 2.0 * (av[i] - bv[i]) / n;
    self.accumulate_into(0, g);
    for (int64_t i = 0; i < av.numel(); ++i) g[i] = -g[i];
    self.accumulate_into(1, g);
  });
}

Var l1_loss(const Var &a, const Var &b) {
  check_same(a, b, "l1_loss");
  const double n = static_cast<double>(a->value.numel());
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i)
    s += std::fabs(a->value[i] - b->value[i]);
  return make(Tensor({1}, {s / n}), {a, b}, [n](Node &self) {
    const Tensor &av = self.parents[0]->value;
    const Tensor &bv = self.parents[1]->value;
    Tensor g(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) {
      const double d = av[i] - bv[i];
      g[i] = self.grad[0] * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n;
    }
    self.accumulate_into(0, g);
    for (int64_t i = 0; i < av.numel(); ++i) g[i] = -g[i];
    self.accumulate_into(1, g);
  });
}

}  // namespace ad
}  // namespace cemnet
