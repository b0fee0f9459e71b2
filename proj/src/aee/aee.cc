// src/aee/aee.cc

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

#include "cemnet/aee/aee.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "cemnet/core/error.h"
#include "cemnet/core/io.h"

namespace cemnet {
namespace aee {

void AEELossWeights::validate() const {
  if (lambda_a < 0 || lambda_clst < 0 || lambda_clse < 0 || lambda_tri < 0)
    throw ConfigError("aee: loss weights must be nonnegative");
  if (margin < 0) throw ConfigError("aee: triplet margin must be nonnegative");
}

nlohmann::json AEELossWeights::to_json() const {
  return {{"lambda_a", lambda_a},
          {"lambda_clst", lambda_clst},
          {"lambda_clse", lambda_clse},
          {"lambda_tri", lambda_tri},
          {"margin", margin}};
}

AEELossWeights AEELossWeights::from_json(const nlohmann::json &j) {
  AEELossWeights w;
  w.lambda_a = j.value("lambda_a", w.lambda_a);
  w.lambda_clst = j.value("lambda_clst", w.lambda_clst);
  w.lambda_clse = j.value("lambda_clse", w.lambda_clse);
  w.lambda_tri = j.value("lambda_tri", w.lambda_tri);
  w.margin = j.value("margin", w.margin);
  w.validate();
  return w;
}

void AEEConfig::validate() const {
  if (embed_dim < 4 || embed_dim % 4 != 0)
    throw ConfigError("aee: embed_dim must be a positive multiple of 4");
  if (pool_frames < 16) throw ConfigError("aee: pool_frames must be >= 16");
  if (feature_bins < 4) throw ConfigError("aee: feature_bins must be >= 4");
  if (num_emotions < 2 || num_identities < 2 || num_contents < 2)
    throw ConfigError("aee: need at least two classes per factor");
  weights.validate();
  if (pretrain_epochs < 0 || train_epochs < 0)
    throw ConfigError("aee: epoch counts must be nonnegative");
  if (pretrain_lr <= 0 || lr <= 0)
    throw ConfigError("aee: learning rates must be positive");
  if (pretrain_floor < 0 || pretrain_floor > 1)
    throw ConfigError("aee: pretrain_floor must be in [0, 1]");
  if (pretrain_batch < 1 || batch_pairs < 1)
    throw ConfigError("aee: batch sizes must be positive");
}

nlohmann::json AEEConfig::to_json() const {
  return {{"embed_dim", embed_dim},
          {"pool_frames", pool_frames},
          {"feature_bins", feature_bins},
          {"num_emotions", num_emotions},
          {"num_identities", num_identities},
          {"num_contents", num_contents},
          {"weights", weights.to_json()},
          {"pretrain_epochs", pretrain_epochs},
          {"pretrain_lr", pretrain_lr},
          {"pretrain_floor", pretrain_floor},
          {"train_epochs", train_epochs},
          {"lr", lr},
          {"pretrain_batch", pretrain_batch},
          {"batch_pairs", batch_pairs},
          {"seed", std::to_string(seed)}};
}

AEEConfig AEEConfig::from_json(const nlohmann::json &j) {
  AEEConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.pool_frames = j.value("pool_frames", c.pool_frames);
  c.feature_bins = j.value("feature_bins", c.feature_bins);
  c.num_emotions = j.value("num_emotions", c.num_emotions);
  c.num_identities = j.value("num_identities", c.num_identities);
  c.num_contents = j.value("num_contents", c.num_contents);
  if (j.contains("weights")) c.weights = AEELossWeights::from_json(j["weights"]);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
  c.pretrain_floor = j.value("pretrain_floor", c.pretrain_floor);
  c.train_epochs = j.value("train_epochs", c.train_epochs);
  c.lr = j.value("lr", c.lr);
  c.pretrain_batch = j.value("pretrain_batch", c.pretrain_batch);
  c.batch_pairs = j.value("batch_pairs", c.batch_pairs);
  if (j.contains("seed")) {
    if (j["seed"].is_string())
      c.seed = std::stoull(j["seed"].get<std::string>());
    else
      c.seed = j["seed"].get<uint64_t>();
  }
  c.validate();
  return c;
}

ad::Var triplet_loss(const ad::Var &anchor, const ad::Var &positive,
                     const ad::Var &negative, double margin) {
  ad::Var a = ad::l2_normalize_rows(anchor);
  ad::Var p = ad::l2_normalize_rows(positive);
  ad::Var n = ad::l2_normalize_rows(negative);
  ad::Var d_ap = ad::sum_cols(ad::square(ad::sub(a, p)));  // [B,1]
  ad::Var d_an = ad::sum_cols(ad::square(ad::sub(a, n)));
  ad::Var hinge = ad::relu(ad::add_scalar(ad::sub(d_ap, d_an), margin));
  return ad::mean(hinge);
}

AudioEmotionEnhancer::AudioEmotionEnhancer(const AEEConfig &config)
    : config_(config) {
  config_.validate();
  Rng rng = substream(config_.seed, "aee_init");
  enc_e_ = make_encoder(params_, "Ee", rng);
  enc_t_ = make_encoder(params_, "Et", rng);
  enc_c_ = make_encoder(params_, "Ec", rng);
  const int e = config_.embed_dim;
  cls_e_ = nn::Linear(params_, "Ce", e, config_.num_emotions, rng);
  cls_t_ = nn::Linear(params_, "Ct", e, config_.num_identities, rng);
  cls_c_ = nn::Linear(params_, "Cc", e, config_.num_contents, rng);
  dec_.push_back(nn::Linear(params_, "dec.fc0", 3 * e, 4 * e, rng));
  dec_.push_back(nn::Linear(params_, "dec.fc1", 4 * e, 8 * e, rng));
  dec_.push_back(nn::Linear(params_, "dec.fc2", 8 * e,
                            config_.pool_frames * config_.feature_bins, rng));
  Rng snap_rng = substream(config_.seed, "aee_init");  // same shapes
  snap_e_ = make_encoder(snap_params_, "Ee", snap_rng);
}

AudioEmotionEnhancer::Encoder AudioEmotionEnhancer::make_encoder(
    nn::ParamStore &ps, const std::string &name, Rng &rng) {
  Encoder enc;
  const int c1 = std::max(1, config_.embed_dim / 4);
  const int ch[9] = {1,      c1,     c1,     2 * c1, 2 * c1,
                     3 * c1, 3 * c1, 4 * c1, 4 * c1};
  for (int i = 0; i < 8; ++i)
    enc.convs.push_back(nn::Conv2d(ps, name + ".conv" + std::to_string(i),
                                   ch[i], ch[i + 1], 3, (i % 2 == 0) ? 1 : 2,
                                   1, rng));
  const int h = config_.embed_dim + config_.embed_dim / 2;
  enc.fcs.push_back(nn::Linear(ps, name + ".fc0", 4 * c1, h, rng));
  enc.fcs.push_back(nn::Linear(ps, name + ".fc1", h, h, rng));
  enc.fcs.push_back(nn::Linear(ps, name + ".fc2", h, config_.embed_dim, rng));
  return enc;
}

Tensor AudioEmotionEnhancer::pool_audio(const Tensor &audio) const {
  if (audio.rank() != 2 || audio.cols() != config_.feature_bins)
    throw InputError("aee: audio must be [F, " +
                     std::to_string(config_.feature_bins) + "], got " +
                     audio.shape_str());
  return resample_rows(audio, config_.pool_frames);
}

ad::Var AudioEmotionEnhancer::run_encoder(const Encoder &enc,
                                          const Tensor &pooled,
                                          int batch) const {
  if (pooled.rank() != 2 || pooled.rows() != batch * config_.pool_frames ||
      pooled.cols() != config_.feature_bins)
    throw InputError("aee: encoder input must be [B*pool, bins], got " +
                     pooled.shape_str());
  ad::Var x = ad::constant(pooled.reshaped(
      {batch, 1, config_.pool_frames, config_.feature_bins}));
  for (const nn::Conv2d &c : enc.convs)
    x = ad::leaky_relu(c(x), 0.01);  // leaky: keeps gradcheck off the kink
  x = ad::mean_hw(x);
  x = ad::leaky_relu(enc.fcs[0](x), 0.01);
  x = ad::leaky_relu(enc.fcs[1](x), 0.01);
  return enc.fcs[2](x);
}

ad::Var AudioEmotionEnhancer::emotion_embed(const Tensor &pooled, int batch) {
  return run_encoder(enc_e_, pooled, batch);
}
ad::Var AudioEmotionEnhancer::timbre_embed(const Tensor &pooled, int batch) {
  return run_encoder(enc_t_, pooled, batch);
}
ad::Var AudioEmotionEnhancer::content_embed(const Tensor &pooled, int batch) {
  return run_encoder(enc_c_, pooled, batch);
}

ad::Var AudioEmotionEnhancer::decode(const ad::Var &emb) {
  ad::Var x = ad::leaky_relu(dec_[0](emb), 0.01);
  x = ad::leaky_relu(dec_[1](x), 0.01);
  return dec_[2](x);
}

namespace {

// Stacks pooled [P, bins] matrices on rows.
Tensor stack_pooled(const std::vector<Tensor> &mats) {
  const int p = mats[0].rows(), bins = mats[0].cols();
  Tensor out({static_cast<int>(mats.size()) * p, bins});
  int r = 0;
  for (const Tensor &m : mats)
    for (int i = 0; i < p; ++i, ++r)
      for (int c = 0; c < bins; ++c) out.at(r, c) = m.at(i, c);
  return out;
}

}  // namespace

ad::Var AudioEmotionEnhancer::cross_reconstruct(
    const datagen::CrossReconPair &pair, const datagen::Corpus &corpus,
    std::vector<ad::Var> *recons) {
  if (pair.target_swaps.size() != 8)
    throw InputError("aee: pair is missing target swaps (want 8, have " +
                     std::to_string(pair.target_swaps.size()) + ")");
  if (pair.clip_a < 0 ||
      pair.clip_a >= static_cast<int>(corpus.clips.size()) ||
      pair.clip_b < 0 || pair.clip_b >= static_cast<int>(corpus.clips.size()))
    throw InputError("aee: pair clip indices outside corpus");

  Tensor a0 = pool_audio(corpus.clips[static_cast<size_t>(pair.clip_a)].audio);
  Tensor a1 = pool_audio(pair.aligned_b);
  Tensor both = stack_pooled({a0, a1});
  ad::Var ee = emotion_embed(both, 2);
  ad::Var et = timbre_embed(both, 2);
  ad::Var ec = content_embed(both, 2);

  std::vector<ad::Var> rows;
  for (int s = 0; s < 8; ++s) {
    const int i = (s >> 2) & 1, j = (s >> 1) & 1, k = s & 1;
    rows.push_back(ad::concat_cols({ad::slice_rows(et, j, j + 1),
                                    ad::slice_rows(ee, i, i + 1),
                                    ad::slice_rows(ec, k, k + 1)}));
  }
  ad::Var dec = decode(ad::concat_rows(rows));  // [8, P*bins]

  ad::Var l_a;
  for (int s = 0; s < 8; ++s) {
    ad::Var r = ad::slice_rows(dec, s, s + 1);
    if (recons) recons->push_back(r);
    Tensor target = pool_audio(pair.target_swaps[static_cast<size_t>(s)]);
    ad::Var term = ad::mse_loss(
        r, ad::constant(target.reshaped(
               {1, config_.pool_frames * config_.feature_bins})));
    l_a = (s == 0) ? term : ad::add(l_a, term);
  }
  return l_a;
}

ad::Var AudioEmotionEnhancer::aee_losses(const datagen::CrossReconPair &pair,
                                         const datagen::Corpus &corpus,
                                         AEELossParts *parts) {
  std::vector<const datagen::CrossReconPair *> one{&pair};
  return batch_losses(one, corpus, parts);
}

// Joint objective over a minibatch of pairs. One graph: encoders run on
// stacked inputs, the decoder on all 8*B recombinations at once. With B = 1
// this is exactly the per-pair objective.
ad::Var AudioEmotionEnhancer::batch_losses(
    const std::vector<const datagen::CrossReconPair *> &pairs,
    const datagen::Corpus &corpus, AEELossParts *parts) {
  const int b = static_cast<int>(pairs.size());
  if (b == 0) throw InputError("aee: empty pair batch");
  std::vector<Tensor> et_in, ec_in, targets;
  std::vector<int> emo_labels, id_labels;
  for (const datagen::CrossReconPair *pp : pairs) {
    const datagen::CrossReconPair &pair = *pp;
    if (pair.target_swaps.size() != 8)
      throw InputError("aee: pair is missing target swaps (want 8, have " +
                       std::to_string(pair.target_swaps.size()) + ")");
    if (pair.clip_a < 0 ||
        pair.clip_a >= static_cast<int>(corpus.clips.size()) ||
        pair.clip_b < 0 ||
        pair.clip_b >= static_cast<int>(corpus.clips.size()))
      throw InputError("aee: pair clip indices outside corpus");
    const datagen::SyntheticClip &ca =
        corpus.clips[static_cast<size_t>(pair.clip_a)];
    const datagen::SyntheticClip &cb =
        corpus.clips[static_cast<size_t>(pair.clip_b)];
    Tensor a0 = pool_audio(ca.audio);
    Tensor a1 = pool_audio(pair.aligned_b);
    et_in.push_back(a0);
    et_in.push_back(a1);
    // Content encoder also sees the swaps that keep one clip's content with
    // the other clip's emotion and timbre; they serve as triplet positives.
    ec_in.push_back(a0);
    ec_in.push_back(a1);
    ec_in.push_back(pool_audio(pair.target_swaps[6]));  // e_b, t_b, c_a
    ec_in.push_back(pool_audio(pair.target_swaps[1]));  // e_a, t_a, c_b
    for (int s = 0; s < 8; ++s)
      targets.push_back(pool_audio(pair.target_swaps[static_cast<size_t>(s)]));
    emo_labels.push_back(ca.emotion_id);
    emo_labels.push_back(cb.emotion_id);
    id_labels.push_back(ca.identity_id);
    id_labels.push_back(cb.identity_id);
  }

  ad::Var ee = emotion_embed(stack_pooled(et_in), 2 * b);
  ad::Var et = timbre_embed(stack_pooled(et_in), 2 * b);
  ad::Var ec = content_embed(stack_pooled(ec_in), 4 * b);

  std::vector<ad::Var> rows;
  for (int p = 0; p < b; ++p)
    for (int s = 0; s < 8; ++s) {
      const int i = (s >> 2) & 1, j = (s >> 1) & 1, k = s & 1;
      rows.push_back(
          ad::concat_cols({ad::slice_rows(et, 2 * p + j, 2 * p + j + 1),
                           ad::slice_rows(ee, 2 * p + i, 2 * p + i + 1),
                           ad::slice_rows(ec, 4 * p + k, 4 * p + k + 1)}));
    }
  ad::Var dec = decode(ad::concat_rows(rows));  // [8B, P*bins]

  Tensor tgt({8 * b, config_.pool_frames * config_.feature_bins});
  for (int r = 0; r < 8 * b; ++r)
    for (int c = 0; c < config_.pool_frames * config_.feature_bins; ++c)
      tgt.at(r, c) = targets[static_cast<size_t>(r)][c];
  // Per pair, L_a is the SUM of the 8 per-term mean squared errors; the
  // batch mean over pairs is then 8x the elementwise MSE.
  ad::Var l_a = ad::scale(ad::mse_loss(dec, ad::constant(tgt)), 8.0);

  ad::Var l_clse = ad::cross_entropy_logits(cls_e_(ee), emo_labels);
  ad::Var l_clst = ad::cross_entropy_logits(cls_t_(et), id_labels);

  std::vector<ad::Var> anc, pos, neg;
  for (int p = 0; p < b; ++p) {
    anc.push_back(ad::slice_rows(ec, 4 * p + 0, 4 * p + 1));
    anc.push_back(ad::slice_rows(ec, 4 * p + 1, 4 * p + 2));
    pos.push_back(ad::slice_rows(ec, 4 * p + 2, 4 * p + 3));
    pos.push_back(ad::slice_rows(ec, 4 * p + 3, 4 * p + 4));
    neg.push_back(ad::slice_rows(ec, 4 * p + 1, 4 * p + 2));
    neg.push_back(ad::slice_rows(ec, 4 * p + 0, 4 * p + 1));
  }
  ad::Var l_tri = triplet_loss(ad::concat_rows(anc), ad::concat_rows(pos),
                               ad::concat_rows(neg), config_.weights.margin);

  ad::Var total = ad::add(
      ad::add(ad::scale(l_a, config_.weights.lambda_a),
              ad::scale(l_clse, config_.weights.lambda_clse)),
      ad::add(ad::scale(l_clst, config_.weights.lambda_clst),
              ad::scale(l_tri, config_.weights.lambda_tri)));
  if (parts) {
    parts->l_a = l_a->value[0];
    parts->l_clse = l_clse->value[0];
    parts->l_clst = l_clst->value[0];
    parts->l_tri = l_tri->value[0];
    parts->total = total->value[0];
  }
  return total;
}

Tensor AudioEmotionEnhancer::extract_target_emotion(const Tensor &audio) const {
  if (!trained_)
    throw UsageError("aee: extract_target_emotion requires a trained model");
  return run_encoder(enc_e_, pool_audio(audio), 1)->value;
}

Tensor AudioEmotionEnhancer::extract_plain_emotion(const Tensor &audio) const {
  if (!pretrained_)
    throw UsageError("aee: extract_plain_emotion requires pretraining");
  return run_encoder(snap_e_, pool_audio(audio), 1)->value;
}

double AudioEmotionEnhancer::pretrain_one(const std::string &which,
                                          const Encoder &enc,
                                          const nn::Linear &head,
                                          const std::vector<Tensor> &pooled,
                                          const std::vector<int> &labels,
                                          int num_classes) {
  const int n = static_cast<int>(pooled.size());
  nn::Adam opt(params_, config_.pretrain_lr);
  Rng order_seed = substream(config_.seed, "aee_pre_" + which);

  auto accuracy = [&]() {
    int hit = 0;
    for (int at = 0; at < n; at += 64) {
      const int hi = std::min(n, at + 64);
      std::vector<Tensor> chunk(pooled.begin() + at, pooled.begin() + hi);
      Tensor logits =
          head(run_encoder(enc, stack_pooled(chunk), hi - at))->value;
      for (int r = 0; r < hi - at; ++r) {
        int best = 0;
        for (int c = 1; c < num_classes; ++c)
          if (logits.at(r, c) > logits.at(r, best)) best = c;
        if (best == labels[static_cast<size_t>(at + r)]) ++hit;
      }
    }
    return static_cast<double>(hit) / n;
  };

  double acc = 0.0;
  for (int epoch = 0; epoch < config_.pretrain_epochs; ++epoch) {
    Rng order = substream(config_.seed, "aee_pre_" + which, epoch);
    std::vector<int> perm = order.permutation(n);
    for (int at = 0; at < n; at += config_.pretrain_batch) {
      const int hi = std::min(n, at + config_.pretrain_batch);
      std::vector<Tensor> chunk;
      std::vector<int> lab;
      for (int i = at; i < hi; ++i) {
        chunk.push_back(pooled[static_cast<size_t>(perm[i])]);
        lab.push_back(labels[static_cast<size_t>(perm[i])]);
      }
      ad::Var logits = head(run_encoder(enc, stack_pooled(chunk), hi - at));
      ad::Var loss = ad::cross_entropy_logits(logits, lab);
      if (!std::isfinite(loss->value[0]))
        throw StageError("aee: non-finite pretrain loss (" + which + ")");
      params_.zero_grad();
      ad::backward(loss);
      nn::clip_global_norm(params_, 5.0);
      opt.step();
    }
    acc = accuracy();
    std::printf("[aee] pretrain %s epoch %d/%d acc %.3f\n", which.c_str(),
                epoch + 1, config_.pretrain_epochs, acc);
    std::fflush(stdout);
    if (acc >= config_.pretrain_floor) break;
  }
  return acc;
}

void AudioEmotionEnhancer::pretrain(const datagen::Corpus &corpus) {
  if (corpus.clips.empty()) throw InputError("aee: empty corpus");
  std::vector<Tensor> pooled;
  std::vector<int> emo, ident, content;
  for (const datagen::SyntheticClip &clip : corpus.clips) {
    pooled.push_back(pool_audio(clip.audio));
    emo.push_back(clip.emotion_id);
    ident.push_back(clip.identity_id);
    content.push_back(clip.content_id);
  }
  pretrain_acc_["emotion"] =
      pretrain_one("emotion", enc_e_, cls_e_, pooled, emo,
                   config_.num_emotions);
  pretrain_acc_["identity"] =
      pretrain_one("identity", enc_t_, cls_t_, pooled, ident,
                   config_.num_identities);
  pretrain_acc_["content"] =
      pretrain_one("content", enc_c_, cls_c_, pooled, content,
                   config_.num_contents);

  std::string misses;
  for (const auto &kv : pretrain_acc_)
    if (kv.second < config_.pretrain_floor)
      misses += " " + kv.first + "=" + std::to_string(kv.second);
  if (!misses.empty())
    throw StageError("aee: pretrain accuracy below floor " +
                     std::to_string(config_.pretrain_floor) + ":" + misses);

  // Snapshot the pretrain-only emotion encoder for the ablation variant.
  std::map<std::string, Tensor> snap;
  for (const auto &kv : params_.state_dict())
    if (kv.first.rfind("Ee.", 0) == 0) snap.emplace(kv.first, kv.second);
  snap_params_.load_state_dict(snap);
  pretrained_ = true;
}

void AudioEmotionEnhancer::train(
    const datagen::Corpus &corpus,
    const std::vector<datagen::CrossReconPair> &pairs) {
  if (!pretrained_)
    throw UsageError("aee: pretrain before cross-reconstruction training");
  if (pairs.empty()) throw InputError("aee: no training pairs");
  nn::Adam opt(params_, config_.lr);
  const int n = static_cast<int>(pairs.size());
  for (int epoch = 0; epoch < config_.train_epochs; ++epoch) {
    Rng order = substream(config_.seed, "aee_order", epoch);
    std::vector<int> perm = order.permutation(n);
    double sum = 0.0;
    int steps = 0;
    for (int at = 0; at < n; at += config_.batch_pairs) {
      const int hi = std::min(n, at + config_.batch_pairs);
      std::vector<const datagen::CrossReconPair *> batch;
      for (int i = at; i < hi; ++i)
        batch.push_back(&pairs[static_cast<size_t>(perm[i])]);
      ad::Var total = batch_losses(batch, corpus, nullptr);
      if (!std::isfinite(total->value[0]))
        throw StageError("aee: non-finite loss at epoch " +
                         std::to_string(epoch));
      params_.zero_grad();
      ad::backward(total);
      nn::clip_global_norm(params_, 5.0);
      opt.step();
      sum += total->value[0];
      ++steps;
    }
    train_history_.push_back(sum / steps);
    std::printf("[aee] epoch %d/%d total %.5f\n", epoch + 1,
                config_.train_epochs, sum / steps);
    std::fflush(stdout);
  }
  trained_ = true;
}

void AudioEmotionEnhancer::save(const std::string &dir) const {
  CheckpointArchive a;
  a.set_module("aee");
  a.set_seed(config_.seed);
  a.meta()["config"] = config_.to_json();
  a.meta()["pretrained"] = pretrained_;
  a.meta()["trained"] = trained_;
  a.meta()["pretrain_accuracy"] = pretrain_acc_;
  a.meta()["train_history"] = train_history_;
  for (const auto &kv : params_.state_dict()) a.put(kv.first, kv.second);
  for (const auto &kv : snap_params_.state_dict())
    a.put("snap." + kv.first, kv.second);
  a.save(dir);
}

AudioEmotionEnhancer AudioEmotionEnhancer::load(const std::string &dir) {
  CheckpointArchive a = CheckpointArchive::load(dir);
  if (a.module() != "aee")
    throw FormatError(dir + ": checkpoint module '" + a.module() +
                      "' is not 'aee'");
  AudioEmotionEnhancer m(AEEConfig::from_json(a.meta().at("config")));
  std::map<std::string, Tensor> main, snap;
  for (const auto &kv : a.tensors()) {
    if (kv.first.rfind("snap.", 0) == 0)
      snap.emplace(kv.first.substr(5), kv.second);
    else
      main.emplace(kv.first, kv.second);
  }
  m.params_.load_state_dict(main);
  if (!snap.empty()) m.snap_params_.load_state_dict(snap);
  m.pretrained_ = a.meta().value("pretrained", false);
  m.trained_ = a.meta().value("trained", false);
  if (a.meta().contains("pretrain_accuracy"))
    m.pretrain_acc_ =
        a.meta()["pretrain_accuracy"].get<std::map<std::string, double>>();
  if (a.meta().contains("train_history"))
    m.train_history_ = a.meta()["train_history"].get<std::vector<double>>();
  return m;
}

AudioEmotionEnhancer train_aee(const datagen::Corpus &corpus,
                               const AEEConfig &config, int num_pairs) {
  AEEConfig cfg = config;
  cfg.num_emotions = corpus.spec.num_emotions();
  cfg.num_identities = corpus.spec.num_identities;
  cfg.num_contents = corpus.spec.num_contents;
  cfg.feature_bins = corpus.spec.feature_bins;
  cfg.validate();
  AudioEmotionEnhancer model(cfg);
  model.pretrain(corpus);
  datagen::Generator gen(corpus.spec);
  std::vector<datagen::CrossReconPair> pairs =
      datagen::make_crossrecon_pairs(corpus, gen, num_pairs);
  model.train(corpus, pairs);
  return model;
}

namespace {

// Linear softmax probe on frozen embeddings; returns held-out accuracy.
double linear_probe(const Tensor &embeds, const std::vector<int> &labels,
                    const std::vector<int> &train_idx,
                    const std::vector<int> &eval_idx, int num_classes,
                    uint64_t seed) {
  nn::ParamStore ps;
  Rng rng = substream(seed, "probe_init");
  nn::Linear head(ps, "probe", embeds.cols(), num_classes, rng);
  Tensor xtr({static_cast<int>(train_idx.size()), embeds.cols()});
  std::vector<int> ytr;
  for (size_t i = 0; i < train_idx.size(); ++i) {
    for (int c = 0; c < embeds.cols(); ++c)
      xtr.at(static_cast<int>(i), c) = embeds.at(train_idx[i], c);
    ytr.push_back(labels[static_cast<size_t>(train_idx[i])]);
  }
  nn::Adam opt(ps, 5e-2);
  for (int it = 0; it < 300; ++it) {
    ad::Var loss = ad::cross_entropy_logits(head(ad::constant(xtr)), ytr);
    ps.zero_grad();
    ad::backward(loss);
    opt.step();
  }
  int hit = 0;
  for (int idx : eval_idx) {
    Tensor row({1, embeds.cols()});
    for (int c = 0; c < embeds.cols(); ++c) row.at(0, c) = embeds.at(idx, c);
    Tensor logits = head(ad::constant(row))->value;
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (logits.at(0, c) > logits.at(0, best)) best = c;
    if (best == labels[static_cast<size_t>(idx)]) ++hit;
  }
  return eval_idx.empty() ? 0.0 : static_cast<double>(hit) / eval_idx.size();
}

}  // namespace

std::map<std::string, double> probe_embeddings(AudioEmotionEnhancer &model,
                                               const datagen::Corpus &corpus,
                                               uint64_t seed) {
  const int n = static_cast<int>(corpus.clips.size());
  if (n == 0) throw InputError("aee: empty corpus");
  const AEEConfig &cfg = model.config();

  std::vector<Tensor> pooled;
  for (const datagen::SyntheticClip &clip : corpus.clips)
    pooled.push_back(model.pool_audio(clip.audio));
  Tensor embeds[3] = {Tensor({n, cfg.embed_dim}), Tensor({n, cfg.embed_dim}),
                      Tensor({n, cfg.embed_dim})};
  for (int at = 0; at < n; at += 64) {
    const int hi = std::min(n, at + 64);
    std::vector<Tensor> chunk(pooled.begin() + at, pooled.begin() + hi);
    Tensor stacked = stack_pooled(chunk);
    Tensor e[3] = {model.emotion_embed(stacked, hi - at)->value,
                   model.timbre_embed(stacked, hi - at)->value,
                   model.content_embed(stacked, hi - at)->value};
    for (int k = 0; k < 3; ++k)
      for (int i = 0; i < hi - at; ++i)
        for (int c = 0; c < cfg.embed_dim; ++c)
          embeds[k].at(at + i, c) = e[k].at(i, c);
  }

  const char *enc_names[3] = {"Ee", "Et", "Ec"};
  const char *factor_names[3] = {"emotion", "identity", "content"};
  std::map<std::string, double> out;
  for (int enc = 0; enc < 3; ++enc) {
    for (int f = 0; f < 3; ++f) {
      std::vector<int> labels, train_idx, eval_idx;
      int num_classes;
      for (const datagen::SyntheticClip &clip : corpus.clips)
        labels.push_back(f == 0   ? clip.emotion_id
                         : f == 1 ? clip.identity_id
                                  : clip.content_id);
      if (f == 1) {
        // Identity probe: its labels must appear in training, so hold out
        // contents instead of identities.
        const int held = std::min(2, corpus.spec.num_contents - 1);
        const int cut = corpus.spec.num_contents - held;
        for (int i = 0; i < n; ++i)
          (corpus.clips[static_cast<size_t>(i)].content_id < cut ? train_idx
                                                                 : eval_idx)
              .push_back(i);
        num_classes = corpus.spec.num_identities;
      } else {
        const int held = std::min(2, corpus.spec.num_identities - 1);
        const int cut = corpus.spec.num_identities - held;
        for (int i = 0; i < n; ++i)
          (corpus.clips[static_cast<size_t>(i)].identity_id < cut ? train_idx
                                                                  : eval_idx)
              .push_back(i);
        num_classes =
            f == 0 ? corpus.spec.num_emotions() : corpus.spec.num_contents;
      }
      out[std::string(enc_names[enc]) + "." + factor_names[f]] =
          linear_probe(embeds[enc], labels, train_idx, eval_idx, num_classes,
                       fnv1a64(std::to_string(seed) + enc_names[enc] +
                               factor_names[f]));
    }
  }
  return out;
}

}  // namespace aee
}  // namespace cemnet
