// cemnet/core/tensor.h

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

#ifndef CEMNET_CORE_TENSOR_H_
#define CEMNET_CORE_TENSOR_H_

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "cemnet/core/error.h"
#include "cemnet/core/rng.h"

namespace cemnet {

// Dense row-major double tensor. Rank is dynamic but small (<= 4 in
// practice). Everything that trains goes through this type; float32 only
// appears at the serialization boundary.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != numel_of(shape_))
      throw InputError("Tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto &x : t.data_) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor randn(std::vector<int> shape, Rng &rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto &x : t.data_) x = rng.normal() * stddev;
    return t;
  }

  const std::vector<int> &shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  double *data() { return data_.data(); }
  const double *data() const { return data_.data(); }
  std::vector<double> &vec() { return data_; }
  const std::vector<double> &vec() const { return data_; }

  double &operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-D accessors (rows x cols).
  double &at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

  int rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int cols() const { return rank() < 2 ? 1 : shape_[1]; }

  bool same_shape(const Tensor &o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int> shape) const {
    if (numel_of(shape) != numel())
      throw InputError("Tensor: reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  void fill(double v) {
    for (auto &x : data_) x = v;
  }

  static int64_t numel_of(const std::vector<int> &shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw InputError("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// Elementwise helpers on plain tensors (no autodiff).
Tensor operator+(const Tensor &a, const Tensor &b);
Tensor operator-(const Tensor &a, const Tensor &b);
Tensor operator*(double s, const Tensor &a);
double max_abs_diff(const Tensor &a, const Tensor &b);
bool all_finite(const Tensor &a);

// Resamples a [rows, cols] matrix to [new_rows, cols] by linear
// interpolation along the row (time) axis.
Tensor resample_rows(const Tensor &x, int new_rows);

// Layout conversions between row-per-image HWC storage (as used by the
// on-disk frame blobs) and the [N,C,H,W] layout the conv ops expect.
Tensor hwc_rows_to_nchw(const Tensor &rows, int h, int w, int c);
Tensor nchw_to_hwc_rows(const Tensor &x);

}  // namespace cemnet

#endif  // CEMNET_CORE_TENSOR_H_
