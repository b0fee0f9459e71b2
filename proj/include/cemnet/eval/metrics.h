// cemnet/eval/metrics.h

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

#ifndef CEMNET_EVAL_METRICS_H_
#define CEMNET_EVAL_METRICS_H_

#include <string>

#include <nlohmann/json.hpp>

#include "cemnet/core/tensor.h"
#include "cemnet/visenc/visenc.h"

namespace cemnet {
namespace eval {

// Pixel metrics. Images are rank-2 batches of flat HWC rows ([N, h*w*c])
// with values in [0, 1]; a single image is a one-row batch. Both operands
// must have identical shapes (InputError otherwise).

// Mean PSNR in dB over the whole batch, capped at 99 dB (identical inputs
// would otherwise be +inf).
double psnr(const Tensor &a, const Tensor &b);

// Mean SSIM with a 7x7 Gaussian window (sigma 1.5), c1 = 0.01^2,
// c2 = 0.03^2 on unit dynamic range. Channels are scored as independent
// planes and averaged; only fully-valid window positions contribute.
double ssim(const Tensor &a, const Tensor &b, int h = 64, int w = 64,
            int c = 3);

// Mouth landmark distance: mean over frames and points of the Euclidean
// point-to-point distance. Inputs are [T, 2P] (x, y) rows in normalized
// coordinates; the result is in the same units (reports scale it by 100).
double m_lmd(const Tensor &pred, const Tensor &gt);

// Crop flat HWC frame rows to the lower half of the image (rows y >= h/2).
// Mouth-region pixel metrics run on this crop.
Tensor lower_half_rows(const Tensor &frames, int h = 64, int w = 64,
                       int c = 3);

// Classifier-based metrics. All take frame rows ([N, 12288]) and a trained
// VisualEncoders (UsageError propagates from it otherwise).

// EA: mean predicted probability mass on the expected emotion, in percent.
double emotion_accuracy(const Tensor &frames, int expected_emotion,
                        const visenc::VisualEncoders &enc);

// Secondary EA variant: top-1 classification rate, in percent.
double emotion_top1(const Tensor &frames, int expected_emotion,
                    const visenc::VisualEncoders &enc);

// CSIM: cosine similarity of identity embeddings. With equal frame counts
// the comparison is frame-paired (so frames vs themselves give exactly 1);
// otherwise every frame is scored against the normalized mean reference
// embedding.
double csim(const Tensor &frames, const Tensor &reference_frames,
            const visenc::VisualEncoders &enc);

// Per-frame emotion confidence averaged over the slice -> [1, E].
Tensor emotion_proportion(const Tensor &frames,
                          const visenc::VisualEncoders &enc);

// 1 - mean cosine between paired identity embeddings of the edited and
// original frames.
double identity_deterioration(const Tensor &edited, const Tensor &original,
                              const visenc::VisualEncoders &enc);

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double m_lmd = 0.0;  // normalized-coordinate units x 100
  double ea = 0.0;     // mean confidence, percent
  double ea_top1 = 0.0;
  double csim = 0.0;
  double identity_deterioration = 0.0;
  int num_clips = 0;
  nlohmann::json per_clip = nlohmann::json::array();

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json &j);
};

}  // namespace eval
}  // namespace cemnet

#endif  // CEMNET_EVAL_METRICS_H_
