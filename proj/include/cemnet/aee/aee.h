// cemnet/aee/aee.h

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

// Audio Emotion Enhancement: three audio encoders (emotion / timbre /
// content) trained by cross-reconstruction against factor-swapped targets,
// plus classification and triplet auxiliaries. After training, the frozen
// emotion encoder supplies the clean target-emotion embedding downstream.
//
// The encoders are first pretrained on per-factor classification; a snapshot
// of the pretrained emotion encoder is kept so the "plain emotion
// classifier" ablation variant can bypass the disentangling stage.

#ifndef CEMNET_AEE_AEE_H_
#define CEMNET_AEE_AEE_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cemnet/core/autodiff.h"
#include "cemnet/core/nn.h"
#include "cemnet/core/rng.h"
#include "cemnet/core/tensor.h"
#include "cemnet/datagen/datagen.h"

namespace cemnet {
namespace aee {

struct AEELossWeights {
  double lambda_a = 1.0;
  double lambda_clst = 0.1;
  double lambda_clse = 0.1;
  double lambda_tri = 0.5;
  double margin = 0.2;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static AEELossWeights from_json(const nlohmann::json &j);
};

struct AEEConfig {
  int embed_dim = 32;     // all three encoders emit this many dims
  int pool_frames = 64;   // sequences are resampled here before encoding
  int feature_bins = 26;
  int num_emotions = 8;
  int num_identities = 12;
  int num_contents = 20;
  AEELossWeights weights;
  int pretrain_epochs = 40;
  double pretrain_lr = 1e-3;
  double pretrain_floor = 0.9;  // min train accuracy per encoder
  int train_epochs = 30;
  double lr = 2e-4;
  int pretrain_batch = 16;
  int batch_pairs = 4;
  uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static AEEConfig from_json(const nlohmann::json &j);
};

struct AEELossParts {
  double l_a = 0.0;
  double l_clse = 0.0;
  double l_clst = 0.0;
  double l_tri = 0.0;
  double total = 0.0;
};

// Margin triplet over L2-normalized rows with squared euclidean distance:
// mean over rows of max(0, d(a,p) - d(a,n) + margin).
ad::Var triplet_loss(const ad::Var &anchor, const ad::Var &positive,
                     const ad::Var &negative, double margin);

class AudioEmotionEnhancer {
 public:
  explicit AudioEmotionEnhancer(const AEEConfig &config);

  // [F, bins] -> [pool_frames, bins] by linear interpolation.
  Tensor pool_audio(const Tensor &audio) const;

  // Batched encoder forwards. Input is B pooled sequences stacked on rows
  // ([B*pool_frames, bins]); output is [B, embed_dim].
  ad::Var emotion_embed(const Tensor &pooled, int batch);
  ad::Var timbre_embed(const Tensor &pooled, int batch);
  ad::Var content_embed(const Tensor &pooled, int batch);

  // Decoder on concatenated (timbre, emotion, content) rows:
  // [B, 3*embed] -> [B, pool_frames*bins].
  ad::Var decode(const ad::Var &emb);

  // All 8 (i,j,k) recombinations of the pair, decoded. recons[s] with
  // s = (i<<2)|(j<<1)|k mirrors the pair's target_swaps indexing: emotion
  // from clip i, timbre from clip j, content from clip k (0 = a, 1 = b).
  // L_a is the sum over the 8 terms of the mean squared error against the
  // pooled ground-truth swap target.
  ad::Var cross_reconstruct(const datagen::CrossReconPair &pair,
                            const datagen::Corpus &corpus,
                            std::vector<ad::Var> *recons = nullptr);

  // Full per-pair objective; components (values) via *parts.
  ad::Var aee_losses(const datagen::CrossReconPair &pair,
                     const datagen::Corpus &corpus,
                     AEELossParts *parts = nullptr);

  // Same objective over a minibatch (mean over pairs); one graph.
  ad::Var batch_losses(const std::vector<const datagen::CrossReconPair *> &pairs,
                       const datagen::Corpus &corpus, AEELossParts *parts);

  // Frozen-encoder embedding of one clip's audio, [1, embed_dim].
  // Throws UsageError until training ran.
  Tensor extract_target_emotion(const Tensor &audio) const;
  // Same, from the pretrain-only emotion encoder snapshot (the "plain
  // emotion classifier" ablation path). Throws UsageError until pretrained.
  Tensor extract_plain_emotion(const Tensor &audio) const;

  // Stage 1: per-factor classification pretraining. Throws StageError with
  // the offending accuracies if any encoder misses the floor.
  void pretrain(const datagen::Corpus &corpus);
  // Stage 2: cross-reconstruction training on sampled pairs.
  void train(const datagen::Corpus &corpus,
             const std::vector<datagen::CrossReconPair> &pairs);

  const AEEConfig &config() const { return config_; }
  nn::ParamStore &params() { return params_; }
  bool pretrained() const { return pretrained_; }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }
  const std::map<std::string, double> &pretrain_accuracy() const {
    return pretrain_acc_;
  }
  std::vector<double> &train_history() { return train_history_; }

  void save(const std::string &dir) const;
  static AudioEmotionEnhancer load(const std::string &dir);

 private:
  struct Encoder {
    std::vector<nn::Conv2d> convs;  // eight layers, stride 1/2 alternating
    std::vector<nn::Linear> fcs;    // three layers
  };

  Encoder make_encoder(nn::ParamStore &ps, const std::string &name, Rng &rng);
  ad::Var run_encoder(const Encoder &enc, const Tensor &pooled,
                      int batch) const;
  // Classification pretraining of one encoder + linear head.
  double pretrain_one(const std::string &which, const Encoder &enc,
                      const nn::Linear &head,
                      const std::vector<Tensor> &pooled,
                      const std::vector<int> &labels, int num_classes);

  AEEConfig config_;
  nn::ParamStore params_;
  Encoder enc_e_, enc_t_, enc_c_;
  nn::Linear cls_e_, cls_t_, cls_c_;  // cls_c used in pretraining only
  std::vector<nn::Linear> dec_;
  nn::ParamStore snap_params_;  // pretrain-only emotion encoder copy
  Encoder snap_e_;
  bool pretrained_ = false;
  bool trained_ = false;
  std::map<std::string, double> pretrain_acc_;
  std::vector<double> train_history_;  // per-epoch mean total loss
};

// Pretrain + cross-reconstruction with pairs sampled from the corpus.
AudioEmotionEnhancer train_aee(const datagen::Corpus &corpus,
                               const AEEConfig &config, int num_pairs = 256);

// Linear-probe accuracies of each encoder's embeddings against each factor,
// evaluated on held-out identities (emotion/content probes) or held-out
// contents (identity probe). Keys look like "Ee.emotion".
std::map<std::string, double> probe_embeddings(AudioEmotionEnhancer &model,
                                               const datagen::Corpus &corpus,
                                               uint64_t seed);

}  // namespace aee
}  // namespace cemnet

#endif  // CEMNET_AEE_AEE_H_
