// cemnet/visenc/visenc.h

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

// Image-side encoders: a source-emotion extractor and an identity embedder,
// both small conv classifiers whose penultimate pooled activations serve as
// 32-dim embeddings. These are desk-scale stand-ins for the pretrained
// extractors a full system would use, so every identity/emotion score in the
// reports is relative to these toy networks, not to any external model.

#ifndef CEMNET_VISENC_VISENC_H_
#define CEMNET_VISENC_VISENC_H_

#include <string>

#include "cemnet/core/nn.h"
#include "cemnet/core/tensor.h"
#include "cemnet/datagen/datagen.h"

namespace cemnet {
namespace visenc {

struct VisEncConfig {
  int embed_dim = 32;
  int epochs = 20;
  int batch_size = 64;
  double lr = 2e-3;
  int frames_per_clip = 2;    // sampled per clip for the train/eval sets
  int heldout_contents = 4;   // content tail reserved for evaluation
  bool augment = true;        // flip / shift / brightness jitter
  double accuracy_floor = 0.85;
  uint64_t seed = 1;
};

// Conv stack 3->8->16->32->32 (stride 2 each, down to 4x4), flattened and
// projected to a 32-dim embedding; a linear head on top classifies. The
// flatten keeps coarse position information, which carries most of the
// emotion signal in these renders.
struct ConvClassifier {
  nn::Conv2d c1, c2, c3, c4;
  nn::Linear fc, head;
  ConvClassifier() = default;
  ConvClassifier(nn::ParamStore &ps, const std::string &prefix,
                 int num_classes, Rng &rng);
  ad::Var embed(const ad::Var &x) const;   // [N,3,64,64] -> [N,32]
  ad::Var logits(const ad::Var &x) const;  // [N,3,64,64] -> [N,C]
};

struct VisEncStats {
  double emotion_train_acc = 0.0, emotion_eval_acc = 0.0;
  double identity_train_acc = 0.0, identity_eval_acc = 0.0;
};

class VisualEncoders {
 public:
  VisualEncoders() = default;
  VisualEncoders(int num_identities, int num_emotions,
                 const VisEncConfig &config);

  // All of these take frame rows ([N, 12288] HWC) and are usable only after
  // training (UsageError otherwise). Embeddings are unit-normalized.
  Tensor source_emotion(const Tensor &frames_hwc) const;  // [N, 32]
  Tensor identity_embed(const Tensor &frames_hwc) const;  // [N, 32]
  Tensor emotion_probs(const Tensor &frames_hwc) const;   // [N, E]

  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }
  int num_identities() const { return num_identities_; }
  int num_emotions() const { return num_emotions_; }
  const VisEncConfig &config() const { return config_; }
  const VisEncStats &stats() const { return stats_; }
  VisEncStats &stats() { return stats_; }
  nn::ParamStore &params() { return params_; }
  const ConvClassifier &emotion_net() const { return emotion_net_; }
  const ConvClassifier &identity_net() const { return identity_net_; }

  void save(const std::string &dir) const;
  static VisualEncoders load(const std::string &dir);

 private:
  void require_trained() const;

  VisEncConfig config_;
  int num_identities_ = 0, num_emotions_ = 0;
  bool trained_ = false;
  VisEncStats stats_;
  nn::ParamStore params_;
  ConvClassifier emotion_net_, identity_net_;
};

// Flip / shift / brightness jitter on HWC frame rows, in place. The
// flip_only mode keeps the geometry untouched apart from mirroring; it is
// used for the emotion net, whose signal is a few pixels of displacement
// that shifts would erase.
void augment_rows(Tensor *rows, int h, int w, int c, Rng &rng,
                  bool flip_only = false);

// Trains both encoders on rendered corpus frames with a held-out content
// split; throws StageError when either held-out accuracy misses the floor.
VisualEncoders train_visenc(const datagen::Corpus &corpus,
                            const VisEncConfig &config);

}  // namespace visenc
}  // namespace cemnet

#endif  // CEMNET_VISENC_VISENC_H_
