// core/nn.cc

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

#include "cemnet/core/nn.h"

#include <cmath>

#include "cemnet/core/error.h"

namespace cemnet {
namespace nn {

ad::Var ParamStore::add(const std::string &name, Tensor init) {
  if (index_.count(name))
    throw ConfigError("ParamStore: duplicate parameter " + name);
  ad::Var v = ad::param(std::move(init));
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

ad::Var ParamStore::get(const std::string &name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ConfigError("ParamStore: unknown parameter " + name);
  return items_[it->second].second;
}

bool ParamStore::has(const std::string &name) const {
  return index_.count(name) != 0;
}

void ParamStore::zero_grad() {
  for (auto &kv : items_) kv.second->grad_set = false;
}

int64_t ParamStore::num_params() const {
  int64_t n = 0;
  for (const auto &kv : items_) n += kv.second->value.numel();
  return n;
}

std::map<std::string, Tensor> ParamStore::state_dict() const {
  std::map<std::string, Tensor> sd;
  for (const auto &kv : items_) sd[kv.first] = kv.second->value;
  return sd;
}

void ParamStore::load_state_dict(const std::map<std::string, Tensor> &sd) {
  for (auto &kv : items_) {
    auto it = sd.find(kv.first);
    if (it == sd.end())
      throw FormatError("ParamStore: checkpoint missing " + kv.first);
    if (!(it->second.shape() == kv.second->value.shape()))
      throw FormatError("ParamStore: shape mismatch for " + kv.first + ": " +
                        it->second.shape_str() + " vs " +
                        kv.second->value.shape_str());
    kv.second->value = it->second;
    kv.second->grad_set = false;
  }
}

Linear::Linear(ParamStore &ps, const std::string &name, int in, int out,
               Rng &rng, double gain) {
  const double stddev = gain * std::sqrt(2.0 / in);
  w = ps.add(name + ".w", Tensor::randn({in, out}, rng, stddev));
  b = ps.add(name + ".b", Tensor::zeros({out}));
}

Linear Linear::zeros(ParamStore &ps, const std::string &name, int in,
                     int out) {
  Linear l;
  l.w = ps.add(name + ".w", Tensor::zeros({in, out}));
  l.b = ps.add(name + ".b", Tensor::zeros({out}));
  return l;
}

ad::Var Linear::operator()(const ad::Var &x) const {
  return ad::add_bias(ad::matmul(x, w), b);
}

Conv2d::Conv2d(ParamStore &ps, const std::string &name, int in_ch, int out_ch,
               int k, int stride_, int pad_, Rng &rng, double gain)
    : stride(stride_), pad(pad_) {
  const double stddev = gain * std::sqrt(2.0 / (in_ch * k * k));
  w = ps.add(name + ".w", Tensor::randn({out_ch, in_ch, k, k}, rng, stddev));
  b = ps.add(name + ".b", Tensor::zeros({out_ch}));
}

Conv2d Conv2d::zeros(ParamStore &ps, const std::string &name, int in_ch,
                     int out_ch, int k, int stride, int pad) {
  Conv2d c;
  c.stride = stride;
  c.pad = pad;
  c.w = ps.add(name + ".w", Tensor::zeros({out_ch, in_ch, k, k}));
  c.b = ps.add(name + ".b", Tensor::zeros({out_ch}));
  return c;
}

ad::Var Conv2d::operator()(const ad::Var &x) const {
  return ad::conv2d(x, w, b, stride, pad);
}

LayerNorm::LayerNorm(ParamStore &ps, const std::string &name, int dim) {
  gamma = ps.add(name + ".gamma", Tensor::full({dim}, 1.0));
  beta = ps.add(name + ".beta", Tensor::zeros({dim}));
}

ad::Var LayerNorm::operator()(const ad::Var &x) const {
  return ad::layer_norm(x, gamma, beta);
}

Adam::Adam(ParamStore &store, double lr, double beta1, double beta2,
           double eps)
    : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto &kv : store_.items()) {
    m_.emplace_back(Tensor(kv.second->value.shape()));
    v_.emplace_back(Tensor(kv.second->value.shape()));
  }
}

void Adam::step() {
  if (m_.size() != store_.items().size())
    throw ConfigError("Adam: parameters registered after optimizer creation");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t p = 0; p < m_.size(); ++p) {
    ad::Node &node = *store_.items()[p].second;
    if (!node.grad_set) continue;
    Tensor &m = m_[p];
    Tensor &v = v_[p];
    for (int64_t i = 0; i < node.value.numel(); ++i) {
      const double g = node.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      node.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
  store_.zero_grad();
}

double clip_global_norm(ParamStore &store, double max_norm) {
  double sq = 0.0;
  for (const auto &kv : store.items()) {
    if (!kv.second->grad_set) continue;
    for (int64_t i = 0; i < kv.second->grad.numel(); ++i)
      sq += kv.second->grad[i] * kv.second->grad[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto &kv : store.items()) {
      if (!kv.second->grad_set) continue;
      for (int64_t i = 0; i < kv.second->grad.numel(); ++i)
        kv.second->grad[i] *= s;
    }
  }
  return norm;
}

}  // namespace nn
}  // namespace cemnet
