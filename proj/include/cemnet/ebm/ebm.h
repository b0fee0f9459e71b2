// include/cemnet/ebm/ebm.h

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

// Emotion Bridging Memory: paired key/value slot banks that translate a
// cross-emotion query (target emotion, source emotion, identity, agnostic
// lip motion) into a lip-displacement feature, plus the residual landmark
// decoder that turns that feature and the emotion-agnostic mouth into
// emotion-aware mouth motion.
//
// Training reads the value bank through attention over encoded ground-truth
// displacements; inference reads the same value bank through attention over
// the key bank (the "bridge"). A KL term ties the two attention patterns
// together so the key path can stand in for the value path once the
// ground truth is gone.

#ifndef CEMNET_EBM_EBM_H_
#define CEMNET_EBM_EBM_H_

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cemnet/a2m/a2m.h"
#include "cemnet/aee/aee.h"
#include "cemnet/core/autodiff.h"
#include "cemnet/core/nn.h"
#include "cemnet/core/rng.h"
#include "cemnet/core/tensor.h"
#include "cemnet/datagen/datagen.h"
#include "cemnet/visenc/visenc.h"

namespace cemnet {
namespace ebm {

struct EBMConfig {
  int slots = 32;      // K
  int dim = 64;        // D, slot width and query width
  int part_dim = 32;   // each of the four query parts
  int window = 5;      // frames per training window (matches a2m)
  int mouth_cols = 40; // 20 mouth points x 2
  bool cosine = true;  // false: raw dot-product scores (comparison mode)
  bool use_memory = true;           // false: feed the query to the decoder
  std::string emotion_source = "aee";  // "aee" | "plain"
  double w_rec = 1.0, w_align = 1.0, w_a2m = 1.0;
  double lambda_v = 1.0;   // velocity weight inside the A2M-form loss
  double kl_eps = 1e-8;
  int epochs = 60;
  int batch = 8;
  double lr = 1e-3;
  int tuples = 512;            // training tuples sampled from the corpus
  int heldout_tuples = 64;     // extra tuples for the key/value gap check
  int heldout_contents = 4;    // content tail excluded from tuple sampling
  double clip_norm = 5.0;
  int seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static EBMConfig from_json(const nlohmann::json &j);
};

// One cross-emotion training (or inference) example. `agnostic` is the
// Audio2Mouth window prediction, `gt` the same window of the target clip's
// real mouth; the three embeddings come from the frozen upstream encoders.
// At inference `gt` may be empty.
struct EBMTuple {
  Tensor agnostic;        // [T, 40]
  Tensor gt;              // [T, 40]
  Tensor target_emotion;  // [1, part_dim]
  Tensor source_emotion;  // [1, part_dim]
  Tensor identity;        // [1, part_dim]
  int emotion = -1;       // target emotion id (reports only)
  int source = -1;        // source emotion id
  int clip = -1;          // corpus index of the target clip
};

struct EBMLossParts {
  double l_rec = 0.0, l_align = 0.0, l_a2m = 0.0, total = 0.0;
};

struct EBMEval {
  EBMLossParts parts;
  double key_value_gap = 0.0;  // mean ||bridge(alpha_k) - f_hat||_2
};

struct EBMHistory {
  std::vector<double> total, rec, align, a2m;
  double kl_initial = 0.0, kl_final = 0.0;
};

class EmotionBridgingMemory {
 public:
  explicit EmotionBridgingMemory(const EBMConfig &config);

  // --- attention over the banks (graph ops) ---

  // Softmax attention of query rows [B, D] against a bank [K, D]. Cosine
  // mode normalizes both sides and scores in [-1, 1]; dot mode uses the
  // raw products. A query row with (near-)zero norm has no direction to
  // attend with and is an InputError in either mode.
  ad::Var attention(const ad::Var &queries, const ad::Var &bank) const;
  // Eq. 8/9 path: weights against M_v, readout over the raw value slots.
  std::pair<ad::Var, ad::Var> value_attend(const ad::Var &f_dlip) const;
  // Eq. 11: weights against M_k.
  ad::Var key_attend(const ad::Var &f_e) const;
  // Eq. 13: read the value bank with key-side weights.
  ad::Var bridge(const ad::Var &alpha_k) const;

  // --- feature builders ---

  // [B, T*40] flattened agnostic windows -> [B, part_dim].
  ad::Var encode_lip_motion(const ad::Var &flat_windows) const;
  // [B, T*40] flattened raw displacements (gt - agnostic) -> [B, dim].
  ad::Var encode_displacement(const ad::Var &flat_disp) const;
  // Concat(target_emotion, source_emotion, identity, lip_motion) -> f_e.
  // Part order is fixed; the lip part is encoded from the tuples' agnostic
  // windows, the other three are taken from the tuples as constants.
  ad::Var make_query(const std::vector<const EBMTuple *> &batch) const;

  // Residual landmark decoder: f [B, dim] + agnostic rows [B*T, 40] ->
  // refined mouth [B*T, 40], coordinates clipped to [0, 1]. The last layer
  // starts at zero, so a fresh decoder returns the agnostic mouth exactly.
  ad::Var decode_emotional_mouth(const ad::Var &f,
                                 const Tensor &agnostic_rows) const;

  // --- losses ---

  // L_rec (Eq. 10, squared L2 per sample, batch mean) + L_align (Eq. 12,
  // KL(alpha_k || alpha_v) with alpha_v held constant and kl_eps floors)
  // + the A2M-form loss on the decoded mouth. target rows are [B*T, 40].
  ad::Var ebm_losses(const ad::Var &alpha_k, const ad::Var &alpha_v,
                     const ad::Var &f_dlip, const ad::Var &f_hat,
                     const ad::Var &decoded, const Tensor &target,
                     EBMLossParts *parts = nullptr) const;
  // Full training graph for a tuple batch. Memory mode decodes the
  // value-path readout; direct mode decodes the projected query and only
  // the A2M term is active.
  ad::Var batch_losses(const std::vector<const EBMTuple *> &batch,
                       EBMLossParts *parts = nullptr) const;

  // --- inference / training ---

  // Key-path refinement of one window (tuple.gt is ignored): [T, 40].
  Tensor refine(const EBMTuple &tuple) const;

  // Forward-only average losses and key/value gap over a tuple set.
  EBMEval evaluate(const std::vector<EBMTuple> &tuples) const;

  void train_on_tuples(const std::vector<EBMTuple> &train,
                       const std::vector<EBMTuple> &heldout);

  // Slot usage over a tuple set: argmax histograms for both attention
  // paths, per-slot max alpha_v, and the dead-slot list (slots whose
  // max alpha_v never exceeds 1/K).
  nlohmann::json memory_report(const std::vector<EBMTuple> &tuples) const;
  const nlohmann::json &training_report() const { return report_; }

  const EBMConfig &config() const { return config_; }
  nn::ParamStore &params() { return params_; }
  const nn::ParamStore &params() const { return params_; }
  const EBMHistory &history() const { return history_; }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

  void save(const std::string &dir) const;
  static EmotionBridgingMemory load(const std::string &dir);

 private:
  ad::Var a2m_form_loss(const ad::Var &decoded, const Tensor &target,
                        int batch) const;
  void require_trained() const;

  EBMConfig config_;
  nn::ParamStore params_;
  ad::Var m_k_, m_v_;              // [K, D] banks
  nn::Linear lip1_, lip2_;         // lip motion encoder
  nn::Linear disp1_, disp2_;       // displacement encoder
  nn::Linear proj_;                // query projector, 4*part_dim -> dim
  nn::Linear dec1_, dec2_;         // residual landmark decoder
  EBMHistory history_;
  nlohmann::json report_;
  bool trained_ = false;
};

// Samples cross-emotion tuples from the corpus: target clip (i, c, e),
// source clip (i, c, s != e); reference landmarks and frames come from the
// source clip, audio and (teacher-forced) pose from the target clip. The
// agnostic mouth is a single-window Audio2Mouth prediction. Contents are
// restricted to [content_lo, content_hi); `tag` names the sampling stream.
std::vector<EBMTuple> build_tuples(const datagen::Corpus &corpus,
                                   a2m::Audio2Mouth &a2m,
                                   const visenc::VisualEncoders &visenc,
                                   const aee::AudioEmotionEnhancer &aee,
                                   const EBMConfig &config, int count,
                                   int content_lo, int content_hi,
                                   const std::string &tag);

// Loads the three frozen upstream checkpoints (ConfigError when a directory
// or its manifest is missing or the model inside is untrained), builds
// training tuples from the non-held-out contents, and trains the memory.
EmotionBridgingMemory train_ebm(const datagen::Corpus &corpus,
                                const std::string &a2m_dir,
                                const std::string &visenc_dir,
                                const std::string &aee_dir,
                                const EBMConfig &config);

}  // namespace ebm
}  // namespace cemnet

#endif  // CEMNET_EBM_EBM_H_
