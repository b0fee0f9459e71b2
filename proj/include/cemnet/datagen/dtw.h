// cemnet/datagen/dtw.h

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

#ifndef CEMNET_DATAGEN_DTW_H_
#define CEMNET_DATAGEN_DTW_H_

#include <functional>
#include <utility>
#include <vector>

#include "cemnet/core/tensor.h"

namespace cemnet {
namespace datagen {

// Per-frame distance between row i of a and row j of b.
using FrameCost =
    std::function<double(const Tensor &a, int i, const Tensor &b, int j)>;

// Euclidean distance over the feature dimension.
double euclidean_frame_cost(const Tensor &a, int i, const Tensor &b, int j);

struct DtwResult {
  double cost = 0.0;
  // Monotone alignment path from (0,0) to (Fa-1, Fb-1) with steps
  // (1,0), (0,1), (1,1).
  std::vector<std::pair<int, int>> path;
  // b warped onto a's time axis: row i is the mean of all b rows matched
  // to a row i, so warped_b has a's frame count.
  Tensor warped_b;
};

DtwResult dtw_align(const Tensor &a, const Tensor &b,
                    const FrameCost &cost = euclidean_frame_cost);

}  // namespace datagen
}  // namespace cemnet

#endif  // CEMNET_DATAGEN_DTW_H_
