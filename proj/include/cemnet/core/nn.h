// cemnet/core/nn.h

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

#ifndef CEMNET_CORE_NN_H_
#define CEMNET_CORE_NN_H_

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cemnet/core/autodiff.h"
#include "cemnet/core/rng.h"

namespace cemnet {
namespace nn {

// Named parameter registry. Iteration order is registration order, which is
// deterministic, so the optimizer and the checkpoint format both depend on
// it.
class ParamStore {
 public:
  ad::Var add(const std::string &name, Tensor init);
  ad::Var get(const std::string &name) const;
  bool has(const std::string &name) const;
  const std::vector<std::pair<std::string, ad::Var>> &items() const {
    return items_;
  }
  void zero_grad();
  int64_t num_params() const;

  std::map<std::string, Tensor> state_dict() const;
  // Shape-checked; throws FormatError on missing or mismatched entries.
  void load_state_dict(const std::map<std::string, Tensor> &sd);

 private:
  std::vector<std::pair<std::string, ad::Var>> items_;
  std::map<std::string, size_t> index_;
};

struct Linear {
  ad::Var w, b;  // y = x w + b, w is [in, out]
  Linear() = default;
  Linear(ParamStore &ps, const std::string &name, int in, int out, Rng &rng,
         double gain = 1.0);
  // Zero-initialized variant for residual output heads.
  static Linear zeros(ParamStore &ps, const std::string &name, int in,
                      int out);
  ad::Var operator()(const ad::Var &x) const;
};

struct Conv2d {
  ad::Var w, b;
  int stride = 1, pad = 0;
  Conv2d() = default;
  Conv2d(ParamStore &ps, const std::string &name, int in_ch, int out_ch,
         int k, int stride, int pad, Rng &rng, double gain = 1.0);
  static Conv2d zeros(ParamStore &ps, const std::string &name, int in_ch,
                      int out_ch, int k, int stride, int pad);
  ad::Var operator()(const ad::Var &x) const;
};

struct LayerNorm {
  ad::Var gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamStore &ps, const std::string &name, int dim);
  ad::Var operator()(const ad::Var &x) const;
};

class Adam {
 public:
  explicit Adam(ParamStore &store, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  // Applies one update from the accumulated gradients, then clears them.
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  ParamStore &store_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Rescales all accumulated gradients so their global L2 norm is at most
// max_norm. Returns the pre-clip norm.
double clip_global_norm(ParamStore &store, double max_norm);

}  // namespace nn
}  // namespace cemnet

#endif  // CEMNET_CORE_NN_H_
