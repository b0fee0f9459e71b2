// a2m/a2m.cc

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
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cemnet/a2m/a2m.h"
#include "cemnet/core/error.h"
#include "cemnet/core/io.h"

namespace cemnet {
namespace a2m {

namespace {

constexpr int kRefCols = 2 * datagen::kNumPoints;        // 136
constexpr int kPoseCols = 2 * datagen::kPosePoints;      // 54
constexpr int kMouthCols = 2 * datagen::kMouthPoints;    // 40
constexpr int kAudioBins = 26;
constexpr int kAudioRowsPerFrame = 4;
constexpr int kAudioCols = kAudioRowsPerFrame * kAudioBins;  // 104

void check_dims(const Tensor &t, int rows, int cols, const char *what) {
  if (t.rank() != 2 || t.rows() != rows || t.cols() != cols)
    throw InputError(std::string("a2m: ") + what + " expected [" +
                     std::to_string(rows) + "," + std::to_string(cols) +
                     "], got " + t.shape_str());
}

}  // namespace

void A2MConfig::validate() const {
  if (feature_dim < heads || feature_dim % heads != 0)
    throw ConfigError("a2m: feature_dim must be a positive multiple of heads");
  if (heads < 1 || layers < 1) throw ConfigError("a2m: heads/layers must be >= 1");
  if (n_refs < 1 || window < 1) throw ConfigError("a2m: N and T must be >= 1");
  if (lambda_v < 0.0) throw ConfigError("a2m: lambda_v must be >= 0");
  if (lr <= 0.0 || max_epochs < 1 || patience < 0 || batch_size < 1 ||
      window_stride < 1 || val_contents < 0)
    throw ConfigError("a2m: bad training hyperparameters");
}

nlohmann::json A2MConfig::to_json() const {
  return nlohmann::json{{"feature_dim", feature_dim},
                        {"heads", heads},
                        {"layers", layers},
                        {"n_refs", n_refs},
                        {"window", window},
                        {"lambda_v", lambda_v},
                        {"lr", lr},
                        {"max_epochs", max_epochs},
                        {"patience", patience},
                        {"batch_size", batch_size},
                        {"window_stride", window_stride},
                        {"val_contents", val_contents},
                        {"seed", std::to_string(seed)}};
}

A2MConfig A2MConfig::from_json(const nlohmann::json &j) {
  A2MConfig c;
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.n_refs = j.value("n_refs", c.n_refs);
  c.window = j.value("window", c.window);
  c.lambda_v = j.value("lambda_v", c.lambda_v);
  c.lr = j.value("lr", c.lr);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.window_stride = j.value("window_stride", c.window_stride);
  c.val_contents = j.value("val_contents", c.val_contents);
  if (j.contains("seed")) {
    if (j.at("seed").is_string())
      c.seed = std::strtoull(j.at("seed").get<std::string>().c_str(), nullptr, 10);
    else
      c.seed = j.at("seed").get<uint64_t>();
  }
  c.validate();
  return c;
}

A2MLoss a2m_loss(const Tensor &pred, const Tensor &target, double lambda_v) {
  if (pred.rank() != 2 || !pred.same_shape(target))
    throw InputError("a2m_loss: shape mismatch " + pred.shape_str() + " vs " +
                     target.shape_str());
  A2MLoss out;
  for (int64_t i = 0; i < pred.numel(); ++i)
    out.l1 += std::fabs(pred[i] - target[i]);
  out.l1 /= static_cast<double>(pred.numel());
  const int t_len = pred.rows();
  if (t_len >= 2) {
    for (int t = 1; t < t_len; ++t) {
      double sq = 0.0;
      for (int c = 0; c < pred.cols(); ++c) {
        double d = (pred.at(t, c) - pred.at(t - 1, c)) -
                   (target.at(t, c) - target.at(t - 1, c));
        sq += d * d;
      }
      out.lv += std::sqrt(sq);
    }
    out.lv /= (t_len - 1);
  }
  out.total = out.l1 + lambda_v * out.lv;
  return out;
}

Audio2Mouth::Audio2Mouth(const A2MConfig &config) : config_(config) {
  config_.validate();
  Rng rng = substream(config_.seed, "a2m_init");
  const int d = config_.feature_dim;
  const int ch[5] = {1, std::max(1, d / 8), std::max(1, d / 4),
                     std::max(1, d / 2), d};
  // Reference and pose stacks stride 2 throughout; the audio block is only
  // 4 rows tall, so its first layer keeps full resolution.
  for (int i = 0; i < 4; ++i) {
    ref_enc_[i] = nn::Conv2d(params_, "ref_enc.c" + std::to_string(i + 1),
                             ch[i], ch[i + 1], 3, 2, 1, rng);
    audio_enc_[i] = nn::Conv2d(params_, "audio_enc.c" + std::to_string(i + 1),
                               ch[i], ch[i + 1], 3, i == 0 ? 1 : 2, 1, rng);
    pose_enc_[i] = nn::Conv2d(params_, "pose_enc.c" + std::to_string(i + 1),
                              ch[i], ch[i + 1], 3, 2, 1, rng);
  }
  const int tokens = config_.n_refs + 2 * config_.window;
  pos_ = params_.add("pos", Tensor::randn({tokens, d}, rng, 0.02));
  blocks_.resize(config_.layers);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l + 1) + ".";
    Block &b = blocks_[l];
    b.ln1 = nn::LayerNorm(params_, p + "ln1", d);
    b.q = nn::Linear(params_, p + "q", d, d, rng);
    b.k = nn::Linear(params_, p + "k", d, d, rng);
    b.v = nn::Linear(params_, p + "v", d, d, rng);
    b.o = nn::Linear(params_, p + "o", d, d, rng);
    b.ln2 = nn::LayerNorm(params_, p + "ln2", d);
    b.f1 = nn::Linear(params_, p + "ffn1", d, 2 * d, rng);
    b.f2 = nn::Linear(params_, p + "ffn2", 2 * d, d, rng);
  }
  final_ln_ = nn::LayerNorm(params_, "final_ln", d);
  // Small head init: predictions start near the reference-mouth anchor, so
  // training only has to learn the articulation residual.
  head_ = nn::Linear(params_, "head", d, kMouthCols, rng, 0.01);
}

Tensor mouth_anchor(const Tensor &refs, int t_len) {
  if (refs.rank() != 2 || refs.cols() != kRefCols || refs.rows() < 1)
    throw InputError("a2m: anchor wants reference rows [N, 136], got " +
                     refs.shape_str());
  Tensor a({t_len, kMouthCols});
  for (int c = 0; c < kMouthCols; ++c) {
    double m = 0.0;
    for (int i = 0; i < refs.rows(); ++i)
      m += refs.at(i, 2 * datagen::kMouthStart + c);
    m /= refs.rows();
    for (int t = 0; t < t_len; ++t) a.at(t, c) = m;
  }
  return a;
}

ad::Var Audio2Mouth::run_encoder(const nn::Conv2d *stack, const Tensor &rows,
                                 int h, int w, bool standardize) const {
  // Landmark-style inputs are DC-dominated around 0.5; recentering keeps
  // the first conv from spending its budget on the offset.
  Tensor x0 = rows;
  if (standardize)
    for (double &v : x0.vec()) v = (v - 0.5) * 4.0;
  ad::Var x = ad::reshape(ad::constant(x0), {rows.rows(), 1, h, w});
  for (int i = 0; i < 4; ++i) {
    x = stack[i](x);
    // leaky: clipped-to-zero patches would otherwise park downstream
    // activations exactly on the relu kink.
    if (i < 3) x = ad::leaky_relu(x, 0.01);
  }
  return ad::mean_hw(x);  // [rows, D_a]
}

ad::Var Audio2Mouth::encode_inputs(const A2MBatch &batch) {
  check_dims(batch.refs, config_.n_refs, kRefCols, "refs");
  check_dims(batch.audio, config_.window, kAudioCols, "audio");
  check_dims(batch.pose, config_.window, kPoseCols, "pose");
  ad::Var ref_tok = run_encoder(ref_enc_, batch.refs, kRefCols, 1, true);
  ad::Var audio_tok = run_encoder(audio_enc_, batch.audio, kAudioRowsPerFrame,
                                  kAudioBins, false);
  ad::Var pose_tok = run_encoder(pose_enc_, batch.pose, kPoseCols, 1, true);
  return ad::concat_rows({ref_tok, audio_tok, pose_tok});
}

ad::Var Audio2Mouth::transformer_core(ad::Var h, const Tensor *mask) {
  const int hd = config_.feature_dim / config_.heads;
  ad::Var maskv;
  if (mask) maskv = ad::constant(*mask);
  for (const Block &blk : blocks_) {
    ad::Var a = blk.ln1(h);
    ad::Var q = blk.q(a), k = blk.k(a), v = blk.v(a);
    std::vector<ad::Var> heads;
    for (int i = 0; i < config_.heads; ++i) {
      ad::Var qi = ad::slice_cols(q, i * hd, (i + 1) * hd);
      ad::Var ki = ad::slice_cols(k, i * hd, (i + 1) * hd);
      ad::Var vi = ad::slice_cols(v, i * hd, (i + 1) * hd);
      ad::Var scores =
          ad::scale(ad::matmul(qi, ad::transpose(ki)), 1.0 / std::sqrt(hd));
      if (mask) scores = ad::add(scores, maskv);
      heads.push_back(ad::matmul(ad::softmax_rows(scores), vi));
    }
    h = ad::add(h, blk.o(ad::concat_cols(heads)));
    ad::Var f = blk.ln2(h);
    h = ad::add(h, blk.f2(ad::relu(blk.f1(f))));
  }
  return final_ln_(h);
}

ad::Var Audio2Mouth::predict_mouth(const ad::Var &tokens,
                                   const Tensor *anchor) {
  const int d = config_.feature_dim;
  const int seq = config_.n_refs + 2 * config_.window;
  if (tokens->value.rows() != seq || tokens->value.cols() != d)
    throw InputError("a2m: token matrix has shape " +
                     tokens->value.shape_str() + ", expected [" +
                     std::to_string(seq) + "," + std::to_string(d) + "]");
  ad::Var h = transformer_core(ad::add(tokens, pos_), nullptr);
  ad::Var out =
      head_(ad::slice_rows(h, config_.n_refs + config_.window, seq));
  if (anchor) {
    if (anchor->rows() != config_.window || anchor->cols() != kMouthCols)
      throw InputError("a2m: anchor must be [T, 40], got " +
                       anchor->shape_str());
    out = ad::add(out, ad::constant(*anchor));
  }
  return out;  // [T, 40]
}

ad::Var Audio2Mouth::predict_batch(
    const std::vector<const A2MBatch *> &windows) {
  if (windows.empty()) throw InputError("a2m: empty window batch");
  const int b_n = static_cast<int>(windows.size());
  const int n = config_.n_refs, t_win = config_.window;
  const int seq = n + 2 * t_win;

  Tensor refs_all({b_n * n, kRefCols});
  Tensor audio_all({b_n * t_win, kAudioCols});
  Tensor pose_all({b_n * t_win, kPoseCols});
  Tensor anchors({b_n * t_win, kMouthCols});
  for (int b = 0; b < b_n; ++b) {
    const A2MBatch &w = *windows[b];
    check_dims(w.refs, n, kRefCols, "refs");
    check_dims(w.audio, t_win, kAudioCols, "audio");
    check_dims(w.pose, t_win, kPoseCols, "pose");
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < kRefCols; ++c)
        refs_all.at(b * n + i, c) = w.refs.at(i, c);
    for (int t = 0; t < t_win; ++t) {
      for (int c = 0; c < kAudioCols; ++c)
        audio_all.at(b * t_win + t, c) = w.audio.at(t, c);
      for (int c = 0; c < kPoseCols; ++c)
        pose_all.at(b * t_win + t, c) = w.pose.at(t, c);
    }
    Tensor anc = mouth_anchor(w.refs, t_win);
    for (int t = 0; t < t_win; ++t)
      for (int c = 0; c < kMouthCols; ++c)
        anchors.at(b * t_win + t, c) = anc.at(t, c);
  }

  ad::Var rt = run_encoder(ref_enc_, refs_all, kRefCols, 1, true);
  ad::Var at = run_encoder(audio_enc_, audio_all, kAudioRowsPerFrame,
                           kAudioBins, false);
  ad::Var pt = run_encoder(pose_enc_, pose_all, kPoseCols, 1, true);

  std::vector<ad::Var> parts;
  for (int b = 0; b < b_n; ++b) {
    parts.push_back(ad::slice_rows(rt, b * n, (b + 1) * n));
    parts.push_back(ad::slice_rows(at, b * t_win, (b + 1) * t_win));
    parts.push_back(ad::slice_rows(pt, b * t_win, (b + 1) * t_win));
  }
  ad::Var h = ad::add(ad::concat_rows(parts),
                      ad::concat_rows(std::vector<ad::Var>(b_n, pos_)));

  if (b_n == 1) {
    h = transformer_core(h, nullptr);
  } else {
    // Block-diagonal attention: windows never see each other.
    Tensor mask({b_n * seq, b_n * seq});
    for (int r = 0; r < b_n * seq; ++r)
      for (int c = 0; c < b_n * seq; ++c)
        mask.at(r, c) = (r / seq == c / seq) ? 0.0 : -1e9;
    h = transformer_core(h, &mask);
  }

  std::vector<ad::Var> outs;
  for (int b = 0; b < b_n; ++b)
    outs.push_back(ad::slice_rows(h, b * seq + n + t_win, (b + 1) * seq));
  return ad::add(head_(ad::concat_rows(outs)), ad::constant(anchors));
}

ad::Var Audio2Mouth::batch_loss(const ad::Var &preds,
                                const std::vector<const A2MBatch *> &windows) {
  const int b_n = static_cast<int>(windows.size());
  const int t_win = config_.window;
  if (preds->value.rows() != b_n * t_win ||
      preds->value.cols() != kMouthCols)
    throw InputError("a2m: batch predictions have shape " +
                     preds->value.shape_str());
  Tensor targets({b_n * t_win, kMouthCols});
  for (int b = 0; b < b_n; ++b) {
    check_dims(windows[b]->target, t_win, kMouthCols, "target");
    for (int t = 0; t < t_win; ++t)
      for (int c = 0; c < kMouthCols; ++c)
        targets.at(b * t_win + t, c) = windows[b]->target.at(t, c);
  }
  ad::Var l1 = ad::l1_loss(preds, ad::constant(targets));
  if (t_win < 2 || config_.lambda_v == 0.0) return l1;
  ad::Var lv_sum;
  for (int b = 0; b < b_n; ++b) {
    ad::Var pb = ad::slice_rows(preds, b * t_win, (b + 1) * t_win);
    ad::Var dp = ad::sub(ad::slice_rows(pb, 1, t_win),
                         ad::slice_rows(pb, 0, t_win - 1));
    Tensor dt({t_win - 1, kMouthCols});
    for (int t = 1; t < t_win; ++t)
      for (int c = 0; c < kMouthCols; ++c)
        dt.at(t - 1, c) =
            windows[b]->target.at(t, c) - windows[b]->target.at(t - 1, c);
    ad::Var norms = ad::sqrt_op(ad::add_scalar(
        ad::sum_cols(ad::square(ad::sub(dp, ad::constant(dt)))), 1e-12));
    ad::Var lv = ad::mean(norms);
    lv_sum = (b == 0) ? lv : ad::add(lv_sum, lv);
  }
  return ad::add(l1, ad::scale(lv_sum, config_.lambda_v / b_n));
}

ad::Var Audio2Mouth::loss_graph(const ad::Var &pred, const Tensor &target,
                                A2MLoss *components) {
  if (!pred->value.same_shape(target))
    throw InputError("a2m loss: prediction " + pred->value.shape_str() +
                     " vs target " + target.shape_str());
  if (components) *components = a2m_loss(pred->value, target, config_.lambda_v);
  ad::Var l1 = ad::l1_loss(pred, ad::constant(target));
  const int t_len = target.rows();
  if (t_len < 2 || config_.lambda_v == 0.0) return l1;
  ad::Var dp = ad::sub(ad::slice_rows(pred, 1, t_len),
                       ad::slice_rows(pred, 0, t_len - 1));
  Tensor dt({t_len - 1, target.cols()});
  for (int t = 1; t < t_len; ++t)
    for (int c = 0; c < target.cols(); ++c)
      dt.at(t - 1, c) = target.at(t, c) - target.at(t - 1, c);
  ad::Var diff = ad::sub(dp, ad::constant(dt));
  ad::Var norms =
      ad::sqrt_op(ad::add_scalar(ad::sum_cols(ad::square(diff)), 1e-12));
  return ad::add(l1, ad::scale(ad::mean(norms), config_.lambda_v));
}

Tensor Audio2Mouth::predict_window(const A2MBatch &batch) {
  std::vector<const A2MBatch *> one{&batch};
  return predict_batch(one)->value;
}

Tensor Audio2Mouth::predict_clip(const Tensor &audio, const Tensor &pose,
                                 const Tensor &refs, int stride) {
  const int t_clip = pose.rows();
  const int t_win = config_.window;
  if (stride < 1 || stride > t_win)
    throw InputError("a2m: stride must be in [1, T]");
  if (pose.rank() != 2 || pose.cols() != kPoseCols)
    throw InputError("a2m: pose must be [Tc, 54], got " + pose.shape_str());
  if (audio.rank() != 2 || audio.cols() != kAudioBins ||
      audio.rows() != kAudioRowsPerFrame * t_clip)
    throw InputError("a2m: audio must be [4*Tc, 26], got " +
                     audio.shape_str());
  if (t_clip < t_win)
    throw InputError("a2m: clip has " + std::to_string(t_clip) +
                     " frames, window needs " + std::to_string(t_win));

  std::vector<int> starts;
  for (int s = 0; s + t_win <= t_clip; s += stride) starts.push_back(s);
  if (starts.back() != t_clip - t_win) starts.push_back(t_clip - t_win);

  std::vector<A2MBatch> wins(starts.size());
  std::vector<const A2MBatch *> ptrs;
  for (size_t i = 0; i < starts.size(); ++i) {
    const int s = starts[i];
    A2MBatch &b = wins[i];
    b.refs = refs;
    b.audio = Tensor({t_win, kAudioCols});
    b.pose = Tensor({t_win, kPoseCols});
    for (int t = 0; t < t_win; ++t) {
      for (int r = 0; r < kAudioRowsPerFrame; ++r)
        for (int c = 0; c < kAudioBins; ++c)
          b.audio.at(t, r * kAudioBins + c) =
              audio.at((s + t) * kAudioRowsPerFrame + r, c);
      for (int c = 0; c < kPoseCols; ++c) b.pose.at(t, c) = pose.at(s + t, c);
    }
    ptrs.push_back(&b);
  }
  Tensor preds = predict_batch(ptrs)->value;

  Tensor sum({t_clip, kMouthCols});
  std::vector<int> hits(t_clip, 0);
  for (size_t i = 0; i < starts.size(); ++i) {
    for (int t = 0; t < t_win; ++t) {
      ++hits[starts[i] + t];
      for (int c = 0; c < kMouthCols; ++c)
        sum.at(starts[i] + t, c) += preds.at(static_cast<int>(i) * t_win + t, c);
    }
  }
  for (int t = 0; t < t_clip; ++t)
    for (int c = 0; c < kMouthCols; ++c) sum.at(t, c) /= hits[t];
  return sum;
}

void Audio2Mouth::save(const std::string &dir) const {
  CheckpointArchive a;
  a.set_module("a2m");
  a.set_seed(config_.seed);
  a.meta()["trained"] = trained_;
  a.meta()["config"] = config_.to_json();
  a.meta()["history"] = {{"train_total", history_.train_total},
                         {"val_l1", history_.val_l1},
                         {"best_epoch", history_.best_epoch},
                         {"best_val_l1", history_.best_val_l1}};
  for (const auto &kv : params_.state_dict()) a.put(kv.first, kv.second);
  a.save(dir);
}

Audio2Mouth Audio2Mouth::load(const std::string &dir) {
  CheckpointArchive a = CheckpointArchive::load(dir);
  if (a.module() != "a2m")
    throw FormatError(dir + ": checkpoint module '" + a.module() +
                      "' is not 'a2m'");
  Audio2Mouth m(A2MConfig::from_json(a.meta().at("config")));
  m.params_.load_state_dict(a.tensors());
  m.trained_ = a.meta().value("trained", false);
  if (a.meta().contains("history")) {
    const auto &jh = a.meta().at("history");
    m.history_.train_total =
        jh.value("train_total", std::vector<double>());
    m.history_.val_l1 = jh.value("val_l1", std::vector<double>());
    m.history_.best_epoch = jh.value("best_epoch", -1);
    m.history_.best_val_l1 = jh.value("best_val_l1", 0.0);
  }
  return m;
}

A2MBatch make_window(const datagen::SyntheticClip &clip, int start,
                     const A2MConfig &config, Rng &ref_rng) {
  const int t_clip = clip.video_frames();
  const int t_win = config.window;
  if (start < 0 || start + t_win > t_clip)
    throw InputError("a2m: window [" + std::to_string(start) + ", " +
                     std::to_string(start + t_win) + ") outside clip of " +
                     std::to_string(t_clip) + " frames");
  A2MBatch b;
  b.refs = Tensor({config.n_refs, kRefCols});
  for (int i = 0; i < config.n_refs; ++i) {
    int f = ref_rng.uniform_int(t_clip);
    for (int c = 0; c < kRefCols; ++c) b.refs.at(i, c) = clip.landmarks.at(f, c);
  }
  b.audio = Tensor({t_win, kAudioCols});
  b.pose = Tensor({t_win, kPoseCols});
  b.target = Tensor({t_win, kMouthCols});
  for (int t = 0; t < t_win; ++t) {
    for (int r = 0; r < kAudioRowsPerFrame; ++r)
      for (int c = 0; c < kAudioBins; ++c)
        b.audio.at(t, r * kAudioBins + c) =
            clip.audio.at((start + t) * kAudioRowsPerFrame + r, c);
    for (int c = 0; c < kPoseCols; ++c)
      b.pose.at(t, c) = clip.landmarks.at(start + t, c);
    for (int c = 0; c < kMouthCols; ++c)
      b.target.at(t, c) =
          clip.landmarks.at(start + t, 2 * datagen::kMouthStart + c);
  }
  return b;
}

namespace {

std::vector<int> window_starts(int t_clip, int t_win, int stride) {
  std::vector<int> starts;
  for (int s = 0; s + t_win <= t_clip; s += stride) starts.push_back(s);
  if (!starts.empty() && starts.back() != t_clip - t_win)
    starts.push_back(t_clip - t_win);
  return starts;
}

std::vector<A2MBatch> collect_windows(const datagen::Corpus &corpus,
                                      const A2MConfig &cfg, int content_lo,
                                      int content_hi) {
  std::vector<A2MBatch> out;
  for (const datagen::SyntheticClip &clip : corpus.clips) {
    if (clip.emotion_id != 0) continue;
    if (clip.content_id < content_lo || clip.content_id >= content_hi)
      continue;
    if (clip.video_frames() < cfg.window) continue;
    Rng ref_rng = substream(cfg.seed, "a2m_refs", clip.clip_id);
    for (int s :
         window_starts(clip.video_frames(), cfg.window, cfg.window_stride))
      out.push_back(make_window(clip, s, cfg, ref_rng));
  }
  return out;
}

}  // namespace

Audio2Mouth train_a2m(const datagen::Corpus &corpus, const A2MConfig &config) {
  config.validate();
  if (corpus.clips.empty()) throw InputError("a2m: empty corpus");

  const int nc = corpus.spec.num_contents;
  const int val_c = std::min(config.val_contents, nc - 1);
  std::vector<A2MBatch> train =
      collect_windows(corpus, config, 0, nc - val_c);
  std::vector<A2MBatch> val = collect_windows(corpus, config, nc - val_c, nc);
  if (train.empty()) throw InputError("a2m: no neutral training windows");
  if (val.empty()) val = train;  // degenerate corpora (overfit smoke tests)

  Audio2Mouth model(config);
  nn::Adam opt(model.params(), config.lr);
  double best = std::numeric_limits<double>::infinity();
  std::map<std::string, Tensor> best_sd;
  int best_epoch = -1, bad = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng order = substream(config.seed, "a2m_order", epoch);
    std::vector<int> perm = order.permutation(static_cast<int>(train.size()));
    double train_sum = 0.0;
    int steps = 0;
    for (size_t at = 0; at < perm.size(); at += config.batch_size) {
      size_t hi = std::min(perm.size(), at + config.batch_size);
      std::vector<const A2MBatch *> batch;
      for (size_t i = at; i < hi; ++i) batch.push_back(&train[perm[i]]);
      ad::Var preds = model.predict_batch(batch);
      ad::Var total = model.batch_loss(preds, batch);
      if (!std::isfinite(total->value[0]))
        throw StageError("a2m: non-finite loss at epoch " +
                         std::to_string(epoch) + " step " +
                         std::to_string(steps));
      model.params().zero_grad();
      ad::backward(total);
      nn::clip_global_norm(model.params(), 5.0);
      opt.step();
      train_sum += total->value[0];
      ++steps;
    }

    // All val windows are the same size, so pooling |pred - target| over
    // every element equals the mean of per-window L1 terms.
    double val_l1 = 0.0;
    for (size_t at = 0; at < val.size(); at += config.batch_size) {
      size_t hi = std::min(val.size(), at + config.batch_size);
      std::vector<const A2MBatch *> batch;
      for (size_t i = at; i < hi; ++i) batch.push_back(&val[i]);
      Tensor preds = model.predict_batch(batch)->value;
      for (size_t i = at; i < hi; ++i) {
        const Tensor &tgt = val[i].target;
        int off = static_cast<int>(i - at) * config.window;
        for (int t = 0; t < config.window; ++t)
          for (int c = 0; c < kMouthCols; ++c)
            val_l1 += std::abs(preds.at(off + t, c) - tgt.at(t, c));
      }
    }
    val_l1 /= static_cast<double>(val.size() * config.window * kMouthCols);

    model.history().train_total.push_back(train_sum / steps);
    model.history().val_l1.push_back(val_l1);
    std::printf("[a2m] epoch %d/%d train %.5f val_l1 %.5f\n", epoch + 1,
                config.max_epochs, train_sum / steps, val_l1);
    std::fflush(stdout);

    if (val_l1 < best - 1e-9) {
      best = val_l1;
      best_sd = model.params().state_dict();
      best_epoch = epoch;
      bad = 0;
    } else if (++bad > config.patience) {
      break;
    }
  }

  if (!best_sd.empty()) model.params().load_state_dict(best_sd);
  model.history().best_epoch = best_epoch;
  model.history().best_val_l1 = best;
  model.set_trained(true);
  return model;
}

}  // namespace a2m
}  // namespace cemnet
