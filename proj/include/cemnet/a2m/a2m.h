// cemnet/a2m/a2m.h

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

#ifndef CEMNET_A2M_A2M_H_
#define CEMNET_A2M_A2M_H_

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cemnet/core/autodiff.h"
#include "cemnet/core/nn.h"
#include "cemnet/core/tensor.h"
#include "cemnet/datagen/datagen.h"

namespace cemnet {
namespace a2m {

// Emotion-agnostic Audio2Mouth: N reference landmark sets + T audio feature
// blocks + T pose windows -> T mouth predictions. The transformer sees
// N + 2T tokens of width feature_dim; the last T output tokens carry the
// mouth head.
struct A2MConfig {
  int feature_dim = 64;  // D_a
  int heads = 4;
  int layers = 4;
  int n_refs = 5;  // N
  int window = 5;  // T
  double lambda_v = 1.0;

  double lr = 1e-4;
  int max_epochs = 150;
  int patience = 12;
  int batch_size = 8;
  int window_stride = 2;  // training window stride over clip frames
  int val_contents = 2;   // trailing contents held out for early stopping
  uint64_t seed = 1;

  void validate() const;  // ConfigError
  nlohmann::json to_json() const;
  static A2MConfig from_json(const nlohmann::json &j);
};

// One prediction window. All coordinates are normalized-image units.
struct A2MBatch {
  Tensor refs;    // [N, 136] full reference landmark rows
  Tensor audio;   // [T, 104] = 4 audio feature rows x 26 bins per frame
  Tensor pose;    // [T, 54]  jaw + brow points of the window frames
  Tensor target;  // [T, 40]  mouth points; may be empty at inference
};

struct A2MLoss {
  double l1 = 0.0;
  double lv = 0.0;
  double total = 0.0;
};

// Reporting-path loss, exact (no smoothing epsilon): L1 is the mean
// absolute error, Lv the mean over transitions of the L2 norm of the
// velocity difference, total = L1 + lambda * Lv. T < 2 makes Lv 0.
A2MLoss a2m_loss(const Tensor &pred, const Tensor &target, double lambda_v);

struct A2MHistory {
  std::vector<double> train_total;
  std::vector<double> val_l1;
  int best_epoch = -1;
  double best_val_l1 = 0.0;
};

// Mouth anchor: the mean mouth block of the reference rows, tiled to T
// rows. The prediction head emits residuals from this anchor, so identity
// mouth geometry comes straight from the references and the network only
// has to learn articulation.
Tensor mouth_anchor(const Tensor &refs, int t_len);

class Audio2Mouth {
 public:
  Audio2Mouth() = default;
  explicit Audio2Mouth(const A2MConfig &config);

  // Encoder stage: [N + 2T, D_a] tokens ordered [ref.., audio.., pose..].
  ad::Var encode_inputs(const A2MBatch &batch);
  // Transformer + linear head on the last T tokens -> [T, 40]. With an
  // anchor the head output is a residual added to it (the full prediction
  // paths always pass one).
  ad::Var predict_mouth(const ad::Var &tokens, const Tensor *anchor = nullptr);
  // Training loss graph; the velocity norm carries a 1e-12 smoothing term
  // inside the square root so the gradient exists at zero velocity error.
  // Exact components (per a2m_loss) are written to *components if given.
  ad::Var loss_graph(const ad::Var &pred, const Tensor &target,
                     A2MLoss *components = nullptr);

  // Batched forward: one graph over B windows, attention block-diagonal
  // per window. Returns the stacked predictions [B*T, 40] (anchors
  // included). Matches the per-window path to rounding error.
  ad::Var predict_batch(const std::vector<const A2MBatch *> &windows);
  // Batch average of the per-window loss (L1 over everything + mean of the
  // per-window velocity terms).
  ad::Var batch_loss(const ad::Var &preds,
                     const std::vector<const A2MBatch *> &windows);

  // Forward pass without keeping the graph.
  Tensor predict_window(const A2MBatch &batch);
  // Whole-clip prediction: overlapping windows, starts every `stride`
  // frames plus one flush with the clip end; overlaps averaged. audio is
  // the raw [4*Tc, 26] clip feature matrix, pose [Tc, 54], refs [N, 136].
  Tensor predict_clip(const Tensor &audio, const Tensor &pose,
                      const Tensor &refs, int stride = 1);

  const A2MConfig &config() const { return config_; }
  nn::ParamStore &params() { return params_; }
  const nn::ParamStore &params() const { return params_; }
  A2MHistory &history() { return history_; }
  const A2MHistory &history() const { return history_; }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

  void save(const std::string &dir) const;
  static Audio2Mouth load(const std::string &dir);

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear q, k, v, o, f1, f2;
  };

  ad::Var run_encoder(const nn::Conv2d *stack, const Tensor &rows, int h,
                      int w, bool standardize) const;
  ad::Var transformer_core(ad::Var h, const Tensor *mask);

  A2MConfig config_;
  nn::ParamStore params_;
  nn::Conv2d ref_enc_[4], audio_enc_[4], pose_enc_[4];
  ad::Var pos_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_ln_;
  nn::Linear head_;
  A2MHistory history_;
  bool trained_ = false;
};

// Cuts one training/eval window out of a stored clip: frames
// [start, start + T), references drawn by ref_rng from the whole clip.
A2MBatch make_window(const datagen::SyntheticClip &clip, int start,
                     const A2MConfig &config, Rng &ref_rng);

// Trains on the neutral-emotion slice (Adam, lr per config, early stop on
// validation L1). Throws StageError if the loss goes non-finite.
Audio2Mouth train_a2m(const datagen::Corpus &corpus, const A2MConfig &config);

}  // namespace a2m
}  // namespace cemnet

#endif  // CEMNET_A2M_A2M_H_
