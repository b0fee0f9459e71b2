// cemnet/core/autodiff.h

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

// Reverse-mode automatic differentiation over Tensor. Define-by-run: every
// op allocates a Node holding the result, pointers to its parents, and a
// closure that scatters the output gradient back to the parents. backward()
// topologically sorts the graph from the loss node and runs the closures.
//
// Closures receive the node itself (void(Node&)) and reach parents through
// node.parents, so no closure captures a shared_ptr to its own node and the
// graph frees itself when the last external reference drops.

#ifndef CEMNET_CORE_AUTODIFF_H_
#define CEMNET_CORE_AUTODIFF_H_

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cemnet/core/tensor.h"

namespace cemnet {
namespace ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;                // allocated on first accumulate
  bool requires_grad = false;
  bool grad_set = false;
  std::vector<Var> parents;
  std::function<void(Node &)> backward_fn;

  void accumulate(const Tensor &g);
  void accumulate_into(int parent, const Tensor &g);  // respects requires_grad
};

Var constant(Tensor v);
Var param(Tensor v);

// Runs the backward pass from a scalar (or arbitrary, seeded-with-ones)
// root. Gradients accumulate into every reachable node with requires_grad.
void backward(const Var &root);

// ---- elementwise ----
Var add(const Var &a, const Var &b);
Var sub(const Var &a, const Var &b);
Var mul(const Var &a, const Var &b);
Var add_scalar(const Var &a, double c);
Var scale(const Var &a, double c);
Var neg(const Var &a);
Var relu(const Var &a);
Var leaky_relu(const Var &a, double slope);
Var sigmoid(const Var &a);
Var tanh_op(const Var &a);
Var softplus(const Var &a);
Var exp_op(const Var &a);
Var log_op(const Var &a);
Var sqrt_op(const Var &a);
Var square(const Var &a);
Var abs_op(const Var &a);
Var reciprocal(const Var &a);
// tensor * broadcast scalar ([1] node)
Var mul_scalar_var(const Var &a, const Var &s);

// ---- shape / linear algebra (rank-2 unless noted) ----
Var matmul(const Var &a, const Var &b);       // [m,k]x[k,n] -> [m,n]
Var transpose(const Var &a);                  // [m,n] -> [n,m]
Var add_bias(const Var &a, const Var &b);     // [m,n] + [n]
Var reshape(const Var &a, std::vector<int> shape);
Var slice_rows(const Var &a, int r0, int r1);  // rows [r0,r1)
Var slice_cols(const Var &a, int c0, int c1);
Var concat_rows(const std::vector<Var> &xs);
Var concat_cols(const std::vector<Var> &xs);
Var sum(const Var &a);                        // -> [1]
Var mean(const Var &a);                       // -> [1]
Var sum_cols(const Var &a);                   // [r,c] -> [r,1]
Var mean_rows(const Var &a);                  // [r,c] -> [1,c]
Var softmax_rows(const Var &a);
Var l2_normalize_rows(const Var &a, double eps = 1e-12);
Var layer_norm(const Var &a, const Var &gamma, const Var &beta,
               double eps = 1e-5);
// mean over rows of -log softmax(a)[label]; labels.size() == rows
Var cross_entropy_logits(const Var &a, const std::vector<int> &labels);
Var stop_gradient(const Var &a);

// ---- conv / image, layout [N,C,H,W] ----
Var conv2d(const Var &x, const Var &w, const Var &b, int stride, int pad);
Var avg_pool2d(const Var &x, int k);
Var upsample2x(const Var &x);                 // nearest neighbour
Var mean_hw(const Var &x);                    // -> [N,C]
Var concat_channels(const std::vector<Var> &xs);
Var slice_channels(const Var &x, int c0, int c1);
// Backward warp: samples img at (x + flow_x, y + flow_y), border clamped.
// img [N,C,H,W], flow [N,2,H,W] in pixels -> [N,C,H,W].
Var bilinear_sample(const Var &img, const Var &flow);

// ---- fused losses -> [1] ----
Var mse_loss(const Var &a, const Var &b);
Var l1_loss(const Var &a, const Var &b);

// Row-major GEMM helper used by matmul/conv (Eigen underneath):
// C[m,n] (+)= op(A) * op(B) with op = optional transpose.
void gemm(const double *A, const double *B, double *C, int m, int k, int n,
          bool trans_a, bool trans_b, bool accumulate);

}  // namespace ad
}  // namespace cemnet

#endif  // CEMNET_CORE_AUTODIFF_H_
