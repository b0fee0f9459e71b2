// cemnet/renderer/renderer.h

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

// Landmark-conditioned renderer: a flow estimator warps reference images
// toward the predicted landmarks, a confidence-weighted fusion combines the
// warps, and a small u-net generator inpaints the masked target face.
// Trained adversarially with perceptual + LSGAN + feature-matching losses.

#ifndef CEMNET_RENDERER_RENDERER_H_
#define CEMNET_RENDERER_RENDERER_H_

#include <string>
#include <utility>
#include <vector>

#include "cemnet/core/nn.h"
#include "cemnet/core/tensor.h"
#include "cemnet/datagen/datagen.h"

#include "nlohmann/json.hpp"

namespace cemnet {
namespace renderer {

struct RendererConfig {
  int image_size = 64;
  int n_refs = 2;             // reference images per sample
  int frames_per_step = 4;    // target frames rendered per training step
  double sigma = 1.5;         // landmark heatmap splat stddev, pixels
  double flow_scale = 10.0;   // head activations -> pixels
  int flow_ch = 12;           // base width of the flow u-net
  int gen_ch = 12;            // base width of the generator u-net
  int disc_ch = 12;           // base width of the patch discriminator
  int per_ch = 8;             // base width of the fixed perceptual net
  double w_per = 4.0;
  double w_gan = 0.25;
  double w_fm = 1.0;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  int epochs = 6;
  int clips_per_epoch = 96;   // training clips sampled per epoch
  int heldout_contents = 4;   // content tail excluded from training
  double clip_norm = 5.0;
  double collapse_eps = 0.01;   // discriminator-collapse loss floor
  int collapse_patience = 50;   // consecutive steps below eps before rebalance
  uint64_t seed = 1;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static RendererConfig from_json(const nlohmann::json &j);
};

// One training/inference sample: N references plus T frames of the target
// clip. Frames are flat HWC rows ([*, size*size*3]); landmarks are full
// 136-value rows. masked zeroes every pixel row y >= size/2 of gt.
struct RenderBatch {
  Tensor refs;      // [N, size*size*3]
  Tensor ref_lms;   // [N, 136]
  Tensor face_lms;  // [T, 136] predicted (inference) or gt (training)
  Tensor masked;    // [T, size*size*3]
  Tensor gt;        // [T, size*size*3]; empty at inference
};

struct RenderLossParts {
  double l_per = 0.0, l_gan = 0.0, l_fm = 0.0, total = 0.0;
};

struct RendererHistory {
  std::vector<double> g_total, g_per, g_gan, g_fm, d_loss;
};

// Rasterizes one landmark row (n_points x/y pairs in normalized [0,1]
// coordinates) to a [size, size] heatmap: per-point Gaussian splats of the
// given stddev (pixels), combined with max so clustered mouth points do not
// saturate. Values in [0,1].
Tensor rasterize_heatmap(const double *lm, int n_points, int size,
                         double sigma);

// Zeroes pixel rows y >= h/2 of flat HWC frame rows, in place.
void mask_lower_half(Tensor *rows, int h, int w, int c);

class Renderer {
 public:
  Renderer() = default;
  explicit Renderer(const RendererConfig &config);

  // Flow estimation. Input: per (reference i, frame t) sample of
  // [ref image (3) | ref heatmap (1) | target heatmap (1)] channels,
  // i-major ([N*T, 5, H, W]). Output: flows [N*T, 2, H, W] in pixels and
  // strictly positive fusion weights [N*T, 1] (softplus of the pooled
  // confidence logit). Throws InputError on an empty batch.
  std::pair<ad::Var, ad::Var> estimate_flow(const ad::Var &flow_in) const;

  // Confidence-weighted warp fusion. refs [N*T, 3, H, W] (reference i
  // repeated over t, i-major), flows/weights as estimate_flow returns.
  // Output [T, 3, H, W]. Throws InputError on a nonpositive weight.
  ad::Var warp_and_fuse(const ad::Var &flows, const ad::Var &weights,
                        const ad::Var &refs, int n_refs, int t_frames) const;

  // Generator. warped/masked [T, 3, H, W], target heatmaps [T, 1, H, W].
  // Output [T, 3, H, W] clamped to [0,1]; the zero-initialized head makes a
  // fresh generator return the warped fusion unchanged.
  ad::Var generate(const ad::Var &warped, const ad::Var &masked,
                   const ad::Var &tgt_hm) const;

  // Full differentiable forward for one batch (heatmaps rasterized outside
  // the graph). Returns the rendered frames [T, 3, H, W].
  ad::Var render(const RenderBatch &batch) const;

  // Patch discriminator on [image (3) | target heatmap (1)] channels.
  // Returns the patch logit map and the intermediate feature maps used by
  // the feature-matching loss.
  std::pair<ad::Var, std::vector<ad::Var>> discriminate(
      const ad::Var &img, const ad::Var &tgt_hm) const;

  // Fixed random multi-scale feature pyramid (raw image as scale 0).
  std::vector<ad::Var> perceptual(const ad::Var &img) const;

  // Generator-side loss: w_per * L_per + w_gan * L_gan + w_fm * L_fm with
  // L_per the mean multi-scale perceptual L1, L_gan the least-squares
  // adversarial term and L_fm the mean discriminator-feature L1.
  ad::Var generator_loss(const ad::Var &pred, const ad::Var &gt,
                         const ad::Var &tgt_hm,
                         RenderLossParts *parts = nullptr) const;

  // LSGAN discriminator loss; the fake branch is cut from the generator.
  ad::Var discriminator_loss(const ad::Var &pred, const ad::Var &gt,
                             const ad::Var &tgt_hm) const;

  // Frozen-params inference: renders batch.face_lms and returns flat HWC
  // rows [T, size*size*3] in [0,1]. UsageError before training.
  Tensor infer_rows(const RenderBatch &batch) const;

  void train_on_corpus(const datagen::Corpus &corpus);

  const RendererConfig &config() const { return config_; }
  nn::ParamStore &params_g() { return params_g_; }
  nn::ParamStore &params_d() { return params_d_; }
  const RendererHistory &history() const { return history_; }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

  void save(const std::string &dir) const;
  static Renderer load(const std::string &dir);

 private:
  ad::Var flow_unet(const ad::Var &x) const;
  ad::Var gen_unet(const ad::Var &x) const;
  void require_trained() const;

  RendererConfig config_;
  nn::ParamStore params_g_;  // flow net + generator, one optimizer
  nn::ParamStore params_d_;
  nn::ParamStore params_p_;  // fixed perceptual weights, never stepped
  nn::Conv2d f_enc1_, f_enc2_, f_mid_, f_up1_, f_up2_, f_head_;
  nn::Conv2d g_enc1_, g_enc2_, g_mid_, g_up1_, g_up2_, g_head_;
  nn::Conv2d d1_, d2_, d_patch_;
  nn::Conv2d p1_, p2_;
  RendererHistory history_;
  bool trained_ = false;
};

// Assembles a batch: frame_ids rows of the target clip as gt (masked copy
// included) with teacher-forced landmarks, plus n_refs random frames of
// ref_clip as references.
RenderBatch build_render_batch(const datagen::Corpus &corpus, int target_clip,
                               int ref_clip, const std::vector<int> &frame_ids,
                               int n_refs, Rng &rng);

// Trains on the corpus with the content tail held out; references are drawn
// from a random same-identity clip of any emotion, targets use ground-truth
// landmarks (teacher forcing).
Renderer train_renderer(const datagen::Corpus &corpus,
                        const RendererConfig &config);

}  // namespace renderer
}  // namespace cemnet

#endif  // CEMNET_RENDERER_RENDERER_H_
