// datagen/dtw.cc

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

#include <algorithm>
#include <cmath>
#include <limits>

#include "cemnet/core/error.h"
#include "cemnet/datagen/dtw.h"

namespace cemnet {
namespace datagen {

double euclidean_frame_cost(const Tensor &a, int i, const Tensor &b, int j) {
  double s = 0.0;
  const int c = a.cols();
  const double *pa = a.data() + static_cast<int64_t>(i) * c;
  const double *pb = b.data() + static_cast<int64_t>(j) * c;
  for (int k = 0; k < c; ++k) {
    double d = pa[k] - pb[k];
    s += d * d;
  }
  return std::sqrt(s);
}

DtwResult dtw_align(const Tensor &a, const Tensor &b, const FrameCost &cost) {
  if (a.rank() != 2 || b.rank() != 2)
    throw InputError("dtw_align: inputs must be rank-2");
  const int fa = a.rows(), fb = b.rows();
  if (fa == 0 || fb == 0) throw InputError("dtw_align: empty sequence");
  if (a.cols() != b.cols())
    throw InputError("dtw_align: feature dimensions differ");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(static_cast<size_t>(fa) * fb, inf);
  auto at = [&](int i, int j) -> double & {
    return d[static_cast<size_t>(i) * fb + j];
  };
  for (int i = 0; i < fa; ++i)
    for (int j = 0; j < fb; ++j) {
      double best;
      if (i == 0 && j == 0)
        best = 0.0;
      else {
        best = inf;
        if (i > 0 && j > 0) best = at(i - 1, j - 1);
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
      }
      at(i, j) = best + cost(a, i, b, j);
    }

  DtwResult res;
  res.cost = at(fa - 1, fb - 1);
  // Backtrack; on ties the diagonal step wins, then the step in a.
  int i = fa - 1, j = fb - 1;
  res.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    double diag = (i > 0 && j > 0) ? at(i - 1, j - 1) : inf;
    double up = i > 0 ? at(i - 1, j) : inf;
    double left = j > 0 ? at(i, j - 1) : inf;
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
    res.path.emplace_back(i, j);
  }
  std::reverse(res.path.begin(), res.path.end());

  const int c = b.cols();
  res.warped_b = Tensor({fa, c});
  std::vector<int> counts(static_cast<size_t>(fa), 0);
  for (const auto &[pi, pj] : res.path) {
    ++counts[static_cast<size_t>(pi)];
    double *out = res.warped_b.data() + static_cast<int64_t>(pi) * c;
    const double *src = b.data() + static_cast<int64_t>(pj) * c;
    for (int k = 0; k < c; ++k) out[k] += src[k];
  }
  for (int r = 0; r < fa; ++r) {
    double *out = res.warped_b.data() + static_cast<int64_t>(r) * c;
    for (int k = 0; k < c; ++k) out[k] /= counts[static_cast<size_t>(r)];
  }
  return res;
}

}  // namespace datagen
}  // namespace cemnet
