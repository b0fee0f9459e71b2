// visenc/visenc.cc

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

#include "cemnet/core/error.h"
#include "cemnet/core/io.h"
#include "cemnet/visenc/visenc.h"

namespace cemnet {
namespace visenc {

using datagen::kFrameValues;
using datagen::kImageSize;

ConvClassifier::ConvClassifier(nn::ParamStore &ps, const std::string &prefix,
                               int num_classes, Rng &rng)
    : c1(ps, prefix + ".c1", 3, 8, 3, 2, 1, rng),
      c2(ps, prefix + ".c2", 8, 16, 3, 2, 1, rng),
      c3(ps, prefix + ".c3", 16, 32, 3, 2, 1, rng),
      c4(ps, prefix + ".c4", 32, 32, 3, 2, 1, rng),
      fc(ps, prefix + ".fc", 32 * 4 * 4, 32, rng),
      head(ps, prefix + ".head", 32, num_classes, rng) {}

ad::Var ConvClassifier::embed(const ad::Var &x) const {
  ad::Var h = ad::relu(c1(x));
  h = ad::relu(c2(h));
  h = ad::relu(c3(h));
  h = ad::relu(c4(h));  // [N, 32, 4, 4]
  const int n = h->value.dim(0);
  // Unit-normalized post-activation features: the head classifies on the
  // sphere, so cross-entropy training directly tightens the angular
  // clusters that the downstream cosine metrics measure.
  return ad::l2_normalize_rows(
      ad::relu(fc(ad::reshape(h, {n, 32 * 4 * 4}))));  // [N, 32]
}

ad::Var ConvClassifier::logits(const ad::Var &x) const {
  // The fixed scale is a softmax temperature; unit-norm features alone
  // cannot reach confident probabilities.
  return head(ad::scale(embed(x), 10.0));
}

VisualEncoders::VisualEncoders(int num_identities, int num_emotions,
                               const VisEncConfig &config)
    : config_(config),
      num_identities_(num_identities),
      num_emotions_(num_emotions) {
  if (config.embed_dim != 32)
    throw ConfigError("VisualEncoders: embed_dim is fixed at 32");
  Rng rng = substream(config.seed, "visenc_init");
  emotion_net_ = ConvClassifier(params_, "emotion", num_emotions, rng);
  identity_net_ = ConvClassifier(params_, "identity", num_identities, rng);
}

void VisualEncoders::require_trained() const {
  if (!trained_)
    throw UsageError("visenc: encoders are untrained; run train-visenc first");
}

static Tensor normalize_rows_plain(const Tensor &x) {
  Tensor out(x.shape());
  for (int r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (int c = 0; c < x.cols(); ++c) s += x.at(r, c) * x.at(r, c);
    s = std::sqrt(s) + 1e-12;
    for (int c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) / s;
  }
  return out;
}

// Batched no-training forward: rows -> f(nchw batch) stacked back together.
static Tensor batched_forward(
    const Tensor &rows, int batch,
    const std::function<Tensor(const Tensor &)> &f) {
  if (rows.rank() != 2 || rows.cols() != kFrameValues)
    throw InputError("visenc: expected [N, " + std::to_string(kFrameValues) +
                     "] frame rows, got " + rows.shape_str());
  Tensor out;
  for (int start = 0; start < rows.rows(); start += batch) {
    const int n = std::min(batch, rows.rows() - start);
    Tensor chunk({n, rows.cols()});
    std::copy_n(rows.data() + static_cast<int64_t>(start) * rows.cols(),
                static_cast<int64_t>(n) * rows.cols(), chunk.data());
    Tensor y = f(hwc_rows_to_nchw(chunk, kImageSize, kImageSize, 3));
    if (out.numel() == 0) {
      out = Tensor({rows.rows(), y.cols()});
    }
    std::copy_n(y.data(), y.numel(),
                out.data() + static_cast<int64_t>(start) * y.cols());
  }
  return out;
}

Tensor VisualEncoders::source_emotion(const Tensor &frames_hwc) const {
  require_trained();
  Tensor raw = batched_forward(frames_hwc, config_.batch_size,
                               [&](const Tensor &x) {
                                 return emotion_net_.embed(ad::constant(x))
                                     ->value;
                               });
  return normalize_rows_plain(raw);
}

Tensor VisualEncoders::identity_embed(const Tensor &frames_hwc) const {
  require_trained();
  Tensor raw = batched_forward(frames_hwc, config_.batch_size,
                               [&](const Tensor &x) {
                                 return identity_net_.embed(ad::constant(x))
                                     ->value;
                               });
  return normalize_rows_plain(raw);
}

Tensor VisualEncoders::emotion_probs(const Tensor &frames_hwc) const {
  require_trained();
  return batched_forward(frames_hwc, config_.batch_size,
                         [&](const Tensor &x) {
                           return ad::softmax_rows(
                                      emotion_net_.logits(ad::constant(x)))
                               ->value;
                         });
}

void VisualEncoders::save(const std::string &dir) const {
  CheckpointArchive a;
  a.set_module("visenc");
  a.set_seed(config_.seed);
  a.meta()["trained"] = trained_;
  a.meta()["num_identities"] = num_identities_;
  a.meta()["num_emotions"] = num_emotions_;
  a.meta()["config"] = {{"embed_dim", config_.embed_dim},
                        {"epochs", config_.epochs},
                        {"batch_size", config_.batch_size},
                        {"lr", config_.lr},
                        {"frames_per_clip", config_.frames_per_clip},
                        {"heldout_contents", config_.heldout_contents},
                        {"augment", config_.augment},
                        {"accuracy_floor", config_.accuracy_floor},
                        {"seed", std::to_string(config_.seed)}};
  a.meta()["stats"] = {{"emotion_train_acc", stats_.emotion_train_acc},
                       {"emotion_eval_acc", stats_.emotion_eval_acc},
                       {"identity_train_acc", stats_.identity_train_acc},
                       {"identity_eval_acc", stats_.identity_eval_acc}};
  for (const auto &kv : params_.state_dict()) a.put(kv.first, kv.second);
  a.save(dir);
}

VisualEncoders VisualEncoders::load(const std::string &dir) {
  CheckpointArchive a = CheckpointArchive::load(dir);
  if (a.module() != "visenc")
    throw FormatError(dir + ": checkpoint module '" + a.module() +
                      "' is not 'visenc'");
  const auto &meta = a.meta();
  VisEncConfig cfg;
  const auto &jc = meta.at("config");
  cfg.embed_dim = jc.value("embed_dim", cfg.embed_dim);
  cfg.epochs = jc.value("epochs", cfg.epochs);
  cfg.batch_size = jc.value("batch_size", cfg.batch_size);
  cfg.lr = jc.value("lr", cfg.lr);
  cfg.frames_per_clip = jc.value("frames_per_clip", cfg.frames_per_clip);
  cfg.heldout_contents = jc.value("heldout_contents", cfg.heldout_contents);
  cfg.augment = jc.value("augment", cfg.augment);
  cfg.accuracy_floor = jc.value("accuracy_floor", cfg.accuracy_floor);
  cfg.seed = std::strtoull(
      jc.value("seed", std::string("1")).c_str(), nullptr, 10);
  VisualEncoders enc(meta.at("num_identities").get<int>(),
                     meta.at("num_emotions").get<int>(), cfg);
  enc.params_.load_state_dict(a.tensors());
  enc.trained_ = meta.value("trained", false);
  if (meta.contains("stats")) {
    const auto &js = meta.at("stats");
    enc.stats_.emotion_train_acc = js.value("emotion_train_acc", 0.0);
    enc.stats_.emotion_eval_acc = js.value("emotion_eval_acc", 0.0);
    enc.stats_.identity_train_acc = js.value("identity_train_acc", 0.0);
    enc.stats_.identity_eval_acc = js.value("identity_eval_acc", 0.0);
  }
  return enc;
}

void augment_rows(Tensor *rows, int h, int w, int c, Rng &rng,
                  bool flip_only) {
  std::vector<double> tmp(static_cast<size_t>(h) * w * c);
  for (int r = 0; r < rows->rows(); ++r) {
    double *px = rows->data() + static_cast<int64_t>(r) * h * w * c;
    const bool flip = rng.uniform() < 0.5;
    const int dx = flip_only ? 0 : rng.uniform_int(3) - 1;
    const int dy = flip_only ? 0 : rng.uniform_int(3) - 1;
    const double bright = flip_only ? 0.0 : rng.uniform(-0.1, 0.1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int sx = std::clamp(x - dx, 0, w - 1);
        int sy = std::clamp(y - dy, 0, h - 1);
        if (flip) sx = w - 1 - sx;
        for (int ch = 0; ch < c; ++ch)
          tmp[(static_cast<size_t>(y) * w + x) * c + ch] = std::clamp(
              px[(static_cast<size_t>(sy) * w + sx) * c + ch] + bright, 0.0,
              1.0);
      }
    std::copy(tmp.begin(), tmp.end(), px);
  }
}

namespace {

struct FrameSet {
  Tensor rows;  // [M, 12288]
  std::vector<int> emotion, identity;
};

// Samples frames_per_clip frames from every clip, split by content tail.
void sample_frames(const datagen::Corpus &corpus, const VisEncConfig &cfg,
                   FrameSet *train, FrameSet *eval) {
  const int split =
      corpus.spec.num_contents - std::max(1, cfg.heldout_contents);
  if (split < 1)
    throw ConfigError("train_visenc: heldout_contents leaves no train split");
  std::vector<std::pair<int, int>> train_ix, eval_ix;  // (clip, frame)
  for (size_t i = 0; i < corpus.clips.size(); ++i) {
    const datagen::SyntheticClip &clip = corpus.clips[i];
    Rng r = substream(cfg.seed, "visenc_sample",
                      static_cast<uint64_t>(clip.clip_id));
    for (int s = 0; s < cfg.frames_per_clip; ++s) {
      int t = r.uniform_int(clip.video_frames());
      if (clip.content_id < split)
        train_ix.emplace_back(static_cast<int>(i), t);
      else
        eval_ix.emplace_back(static_cast<int>(i), t);
    }
  }
  auto gather = [&](const std::vector<std::pair<int, int>> &ix,
                    FrameSet *out) {
    out->rows = Tensor({static_cast<int>(ix.size()), kFrameValues});
    int last_clip = -1;
    Tensor frames;
    for (size_t s = 0; s < ix.size(); ++s) {
      if (ix[s].first != last_clip) {
        frames = corpus.clip_frames(ix[s].first);
        last_clip = ix[s].first;
      }
      std::copy_n(
          frames.data() + static_cast<int64_t>(ix[s].second) * kFrameValues,
          kFrameValues,
          out->rows.data() + static_cast<int64_t>(s) * kFrameValues);
      const datagen::SyntheticClip &clip =
          corpus.clips[static_cast<size_t>(ix[s].first)];
      out->emotion.push_back(clip.emotion_id);
      out->identity.push_back(clip.identity_id);
    }
  };
  gather(train_ix, train);
  gather(eval_ix, eval);
}

double accuracy_of(const ConvClassifier &net, const Tensor &rows,
                   const std::vector<int> &labels, int batch) {
  int hits = 0;
  for (int start = 0; start < rows.rows(); start += batch) {
    const int n = std::min(batch, rows.rows() - start);
    Tensor chunk({n, rows.cols()});
    std::copy_n(rows.data() + static_cast<int64_t>(start) * rows.cols(),
                static_cast<int64_t>(n) * rows.cols(), chunk.data());
    Tensor logits =
        net.logits(ad::constant(hwc_rows_to_nchw(chunk, kImageSize,
                                                 kImageSize, 3)))
            ->value;
    for (int r = 0; r < n; ++r) {
      int arg = 0;
      for (int cc = 1; cc < logits.cols(); ++cc)
        if (logits.at(r, cc) > logits.at(r, arg)) arg = cc;
      if (arg == labels[static_cast<size_t>(start + r)]) ++hits;
    }
  }
  return rows.rows() == 0 ? 0.0 : static_cast<double>(hits) / rows.rows();
}

// One classifier head training loop; returns final held-out accuracy.
double train_net(const ConvClassifier &net, nn::ParamStore &store,
                 const FrameSet &train, const FrameSet &eval,
                 const std::vector<int> &train_y,
                 const std::vector<int> &eval_y, const VisEncConfig &cfg,
                 const char *tag, bool flip_only, double *train_acc_out) {
  nn::Adam opt(store, cfg.lr);
  Rng order = substream(cfg.seed, std::string("visenc_order_") + tag);
  Rng aug = substream(cfg.seed, std::string("visenc_aug_") + tag);
  double eval_acc = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(cfg.lr * std::pow(0.5, epoch / 10));  // step decay
    std::vector<int> perm = order.permutation(train.rows.rows());
    double loss_sum = 0.0;
    int steps = 0;
    for (int start = 0; start < static_cast<int>(perm.size());
         start += cfg.batch_size) {
      const int n = std::min(cfg.batch_size,
                             static_cast<int>(perm.size()) - start);
      Tensor batch({n, kFrameValues});
      std::vector<int> labels(static_cast<size_t>(n));
      for (int r = 0; r < n; ++r) {
        const int src = perm[static_cast<size_t>(start + r)];
        std::copy_n(train.rows.data() + static_cast<int64_t>(src) *
                                            kFrameValues,
                    kFrameValues,
                    batch.data() + static_cast<int64_t>(r) * kFrameValues);
        labels[static_cast<size_t>(r)] = train_y[static_cast<size_t>(src)];
      }
      if (cfg.augment)
        augment_rows(&batch, kImageSize, kImageSize, 3, aug, flip_only);
      ad::Var x = ad::constant(
          hwc_rows_to_nchw(batch, kImageSize, kImageSize, 3));
      ad::Var loss = ad::cross_entropy_logits(net.logits(x), labels);
      ad::backward(loss);
      nn::clip_global_norm(store, 5.0);
      opt.step();
      loss_sum += loss->value[0];
      ++steps;
    }
    eval_acc = accuracy_of(net, eval.rows, eval_y, cfg.batch_size);
    std::printf("[visenc] %s epoch %d/%d loss %.4f heldout_acc %.4f\n", tag,
                epoch + 1, cfg.epochs, loss_sum / std::max(1, steps),
                eval_acc);
    std::fflush(stdout);
    // Deterministic early stop; the minimum epoch count keeps the angular
    // clusters tightening past the point where raw accuracy saturates.
    if (eval_acc >= 0.97 && epoch >= 11) break;
  }
  *train_acc_out = accuracy_of(net, train.rows, train_y, cfg.batch_size);
  return eval_acc;
}

}  // namespace

VisualEncoders train_visenc(const datagen::Corpus &corpus,
                            const VisEncConfig &config) {
  FrameSet train, eval;
  sample_frames(corpus, config, &train, &eval);
  if (train.rows.rows() == 0 || eval.rows.rows() == 0)
    throw InputError("train_visenc: empty train or eval split");
  VisualEncoders enc(corpus.spec.num_identities, corpus.spec.num_emotions(),
                     config);
  VisEncStats &st = enc.stats();
  st.emotion_eval_acc = train_net(
      enc.emotion_net(), enc.params(), train, eval, train.emotion,
      eval.emotion, config, "emotion", /*flip_only=*/true,
      &st.emotion_train_acc);
  st.identity_eval_acc = train_net(
      enc.identity_net(), enc.params(), train, eval, train.identity,
      eval.identity, config, "identity", /*flip_only=*/false,
      &st.identity_train_acc);
  enc.set_trained(true);
  if (st.emotion_eval_acc < config.accuracy_floor ||
      st.identity_eval_acc < config.accuracy_floor) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "train_visenc: held-out accuracy floor %.2f unmet "
                  "(emotion %.3f, identity %.3f)",
                  config.accuracy_floor, st.emotion_eval_acc,
                  st.identity_eval_acc);
    throw StageError(buf);
  }
  return enc;
}

}  // namespace visenc
}  // namespace cemnet
