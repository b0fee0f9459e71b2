// core/tensor.cc

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

#include "cemnet/core/tensor.h"

#include <cmath>
#include <sstream>

namespace cemnet {

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

Tensor operator+(const Tensor &a, const Tensor &b) {
  if (!a.same_shape(b)) throw InputError("Tensor +: shape mismatch");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor operator-(const Tensor &a, const Tensor &b) {
  if (!a.same_shape(b)) throw InputError("Tensor -: shape mismatch");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor operator*(double s, const Tensor &a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = s * a[i];
  return out;
}

double max_abs_diff(const Tensor &a, const Tensor &b) {
  if (!a.same_shape(b)) throw InputError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor &a) {
  for (int64_t i = 0; i < a.numel(); ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

Tensor resample_rows(const Tensor &x, int new_rows) {
  if (x.rank() != 2) throw InputError("resample_rows: want rank-2 input");
  const int rows = x.dim(0), cols = x.dim(1);
  if (rows < 1 || new_rows < 1)
    throw InputError("resample_rows: empty input or output");
  Tensor out({new_rows, cols});
  if (rows == 1) {
    for (int r = 0; r < new_rows; ++r)
      for (int c = 0; c < cols; ++c) out.at(r, c) = x.at(0, c);
    return out;
  }
  for (int r = 0; r < new_rows; ++r) {
    // Endpoints map to endpoints; interior positions interpolate.
    double pos = (new_rows == 1)
                     ? 0.0
                     : static_cast<double>(r) * (rows - 1) / (new_rows - 1);
    int lo = static_cast<int>(pos);
    if (lo >= rows - 1) lo = rows - 2;
    double w = pos - lo;
    for (int c = 0; c < cols; ++c)
      out.at(r, c) = (1.0 - w) * x.at(lo, c) + w * x.at(lo + 1, c);
  }
  return out;
}

Tensor hwc_rows_to_nchw(const Tensor &rows, int h, int w, int c) {
  if (rows.rank() != 2 || rows.cols() != h * w * c)
    throw InputError("hwc_rows_to_nchw: row width does not match h*w*c");
  const int n = rows.rows();
  Tensor out({n, c, h, w});
  for (int i = 0; i < n; ++i) {
    const double *src = rows.data() + static_cast<int64_t>(i) * h * w * c;
    double *dst = out.data() + static_cast<int64_t>(i) * h * w * c;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          dst[(static_cast<int64_t>(ch) * h + y) * w + x] =
              src[(static_cast<int64_t>(y) * w + x) * c + ch];
  }
  return out;
}

Tensor nchw_to_hwc_rows(const Tensor &x) {
  if (x.rank() != 4) throw InputError("nchw_to_hwc_rows: want rank-4 input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, h * w * c});
  for (int i = 0; i < n; ++i) {
    const double *src = x.data() + static_cast<int64_t>(i) * c * h * w;
    double *dst = out.data() + static_cast<int64_t>(i) * h * w * c;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch)
          dst[(static_cast<int64_t>(y) * w + xx) * c + ch] =
              src[(static_cast<int64_t>(ch) * h + y) * w + xx];
  }
  return out;
}

}  // namespace cemnet
