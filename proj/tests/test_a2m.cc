// tests/test_a2m.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "cemnet/a2m/a2m.h"
#include "cemnet/core/error.h"
#include "cemnet/datagen/datagen.h"
#include "cemnet/eval/metrics.h"
#include "gradcheck.h"

using namespace cemnet;

// Landmark-only corpus (4 identities x 6 contents x 8 emotions); only the
// neutral slice is exercised here.
static const datagen::Corpus &a2m_corpus() {
  static datagen::Corpus corpus = [] {
    datagen::FactorSpec spec;
    spec.num_identities = 4;
    spec.num_contents = 6;
    spec.seed = 202;
    return datagen::generate_corpus(spec, /*with_frames=*/false);
  }();
  return corpus;
}

static a2m::A2MBatch random_batch(const a2m::A2MConfig &cfg, uint64_t seed) {
  Rng rng(seed);
  a2m::A2MBatch b;
  b.refs = Tensor({cfg.n_refs, 136});
  b.audio = Tensor({cfg.window, 104});
  b.pose = Tensor({cfg.window, 54});
  b.target = Tensor({cfg.window, 40});
  for (int64_t i = 0; i < b.refs.numel(); ++i) b.refs[i] = rng.uniform();
  for (int64_t i = 0; i < b.audio.numel(); ++i) b.audio[i] = rng.uniform();
  for (int64_t i = 0; i < b.pose.numel(); ++i) b.pose[i] = rng.uniform();
  for (int64_t i = 0; i < b.target.numel(); ++i) b.target[i] = rng.uniform();
  return b;
}

TEST_CASE("a2m: config validation and JSON round-trip") {
  a2m::A2MConfig bad;
  bad.feature_dim = 66;  // not a multiple of 4 heads
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = a2m::A2MConfig();
  bad.window = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = a2m::A2MConfig();
  bad.n_refs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  a2m::A2MConfig c;
  c.layers = 2;
  c.lambda_v = 0.5;
  c.seed = 0xFEEDFACE12345678ULL;
  a2m::A2MConfig back = a2m::A2MConfig::from_json(
      nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.layers == 2);
  CHECK(back.lambda_v == 0.5);
  CHECK(back.seed == c.seed);
  CHECK(back.feature_dim == c.feature_dim);
}

TEST_CASE("a2m: encoders emit N+2T tokens, ref order maps to token order") {
  a2m::A2MConfig cfg;
  a2m::Audio2Mouth model(cfg);
  a2m::A2MBatch b = random_batch(cfg, 11);

  Tensor tokens = model.encode_inputs(b)->value;
  CHECK(tokens.rows() == cfg.n_refs + 2 * cfg.window);  // 15
  CHECK(tokens.cols() == cfg.feature_dim);
  CHECK(all_finite(tokens));

  // Zero inputs ride the bias-only path and stay finite.
  a2m::A2MBatch zero;
  zero.refs = Tensor({cfg.n_refs, 136});
  zero.audio = Tensor({cfg.window, 104});
  zero.pose = Tensor({cfg.window, 54});
  CHECK(all_finite(model.encode_inputs(zero)->value));

  // Reversing the reference rows reverses exactly the first N token rows.
  a2m::A2MBatch rev = b;
  for (int i = 0; i < cfg.n_refs; ++i)
    for (int c = 0; c < 136; ++c)
      rev.refs.at(i, c) = b.refs.at(cfg.n_refs - 1 - i, c);
  Tensor tokens_rev = model.encode_inputs(rev)->value;
  for (int i = 0; i < cfg.n_refs; ++i)
    for (int c = 0; c < cfg.feature_dim; ++c)
      CHECK(tokens_rev.at(i, c) ==
            doctest::Approx(tokens.at(cfg.n_refs - 1 - i, c)).epsilon(1e-12));
  for (int i = cfg.n_refs; i < tokens.rows(); ++i)
    for (int c = 0; c < cfg.feature_dim; ++c)
      CHECK(tokens_rev.at(i, c) == tokens.at(i, c));

  // Shape police.
  a2m::A2MBatch wrong = b;
  wrong.audio = Tensor({cfg.window, 26});
  CHECK_THROWS_AS(model.encode_inputs(wrong), InputError);
}

TEST_CASE("a2m: prediction shape, finiteness, and audio sensitivity") {
  a2m::A2MConfig cfg;
  a2m::Audio2Mouth model(cfg);
  a2m::A2MBatch b = random_batch(cfg, 21);

  Tensor pred = model.predict_window(b);
  CHECK(pred.rows() == cfg.window);
  CHECK(pred.cols() == 40);
  CHECK(all_finite(pred));

  a2m::A2MBatch other = b;
  Rng rng(22);
  for (int64_t i = 0; i < other.audio.numel(); ++i)
    other.audio[i] = rng.uniform();
  Tensor pred2 = model.predict_window(other);
  CHECK(max_abs_diff(pred, pred2) > 1e-9);  // audio reaches the mouth head
}

TEST_CASE("a2m: loss matches a hand-rolled oracle") {
  a2m::A2MConfig cfg;

  // Values on a dyadic grid (multiples of 2^-20) make every subtraction
  // below exact, so the offset cases can assert bitwise zeros.
  Tensor t({3, 4});
  Rng rng(31);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = std::floor(rng.uniform() * 1048576.0) / 1048576.0;
  a2m::A2MLoss zero = a2m::a2m_loss(t, t, cfg.lambda_v);
  CHECK(zero.l1 == 0.0);
  CHECK(zero.lv == 0.0);
  CHECK(zero.total == 0.0);

  // Constant per-frame offset: velocity cancels, L1 is the offset.
  Tensor off = t;
  for (int64_t i = 0; i < off.numel(); ++i) off[i] += 0.25;
  a2m::A2MLoss c = a2m::a2m_loss(off, t, cfg.lambda_v);
  CHECK(c.lv == 0.0);
  CHECK(c.l1 == 0.25);

  // Independent scalar reference on a random T=3, 2-point case.
  Tensor pred({3, 4});
  for (int64_t i = 0; i < pred.numel(); ++i) pred[i] = rng.uniform();
  double l1 = 0.0;
  for (int i = 0; i < 12; ++i) l1 += std::fabs(pred[i] - t[i]);
  l1 /= 12.0;
  double lv = 0.0;
  for (int row = 1; row < 3; ++row) {
    double sq = 0.0;
    for (int col = 0; col < 4; ++col) {
      double d = (pred.at(row, col) - pred.at(row - 1, col)) -
                 (t.at(row, col) - t.at(row - 1, col));
      sq += d * d;
    }
    lv += std::sqrt(sq);
  }
  lv /= 2.0;
  a2m::A2MLoss got = a2m::a2m_loss(pred, t, 1.0);
  CHECK(std::abs(got.l1 - l1) < 1e-12);
  CHECK(std::abs(got.lv - lv) < 1e-12);
  CHECK(std::abs(got.total - (l1 + lv)) < 1e-12);

  // T = 1 has no transitions.
  CHECK(a2m::a2m_loss(Tensor({1, 4}), Tensor({1, 4}), 1.0).lv == 0.0);
  CHECK_THROWS_AS(a2m::a2m_loss(Tensor({2, 4}), Tensor({2, 3}), 1.0),
                  InputError);

  // Graph value agrees with the exact components up to the sqrt smoothing.
  a2m::Audio2Mouth model(cfg);
  ad::Var p = ad::param(pred.reshaped({3, 4}));
  // loss_graph wants [T, cols] of any width.
  a2m::A2MLoss comps;
  ad::Var g = model.loss_graph(p, t, &comps);
  CHECK(std::abs(g->value[0] - comps.total) < 1e-5);
}

TEST_CASE("a2m: velocity loss ignores constant sequence offsets") {
  Rng rng(41);
  Tensor pred({5, 40}), target({5, 40});
  for (int64_t i = 0; i < pred.numel(); ++i) {
    // Dyadic grid again: shifting by 0.25 keeps frame deltas bit-identical.
    pred[i] = std::floor(rng.uniform() * 1048576.0) / 1048576.0;
    target[i] = std::floor(rng.uniform() * 1048576.0) / 1048576.0;
  }
  Tensor shifted = pred;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 40; ++c) shifted.at(r, c) += 0.25;
  CHECK(a2m::a2m_loss(pred, target, 1.0).lv ==
        a2m::a2m_loss(shifted, target, 1.0).lv);
}

TEST_CASE("a2m: gradients match central differences on a tiny config") {
  a2m::A2MConfig cfg;
  cfg.feature_dim = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.n_refs = 2;
  cfg.window = 3;
  a2m::Audio2Mouth model(cfg);
  a2m::A2MBatch b = random_batch(cfg, 51);

  std::vector<ad::Var> leaves;
  for (const auto &kv : model.params().items()) leaves.push_back(kv.second);
  double worst = testutil::gradcheck(
      [&] {
        return model.loss_graph(model.predict_mouth(model.encode_inputs(b)),
                                b.target);
      },
      leaves);
  MESSAGE("a2m gradcheck worst rel err ", worst);
  CHECK(worst < 1e-5);
}

TEST_CASE("a2m: batched attention matches the per-window path") {
  a2m::A2MConfig cfg;
  cfg.feature_dim = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.n_refs = 2;
  cfg.window = 3;
  a2m::Audio2Mouth model(cfg);
  std::vector<a2m::A2MBatch> wins;
  for (int s = 0; s < 3; ++s) wins.push_back(random_batch(cfg, 61 + s));
  std::vector<const a2m::A2MBatch *> ptrs;
  for (const auto &w : wins) ptrs.push_back(&w);

  // Forward: the block-diagonal mask must keep windows independent.
  Tensor batched = model.predict_batch(ptrs)->value;
  REQUIRE(batched.rows() == 3 * cfg.window);
  for (int s = 0; s < 3; ++s) {
    Tensor anchor = a2m::mouth_anchor(wins[s].refs, cfg.window);
    Tensor single =
        model.predict_mouth(model.encode_inputs(wins[s]), &anchor)->value;
    for (int t = 0; t < cfg.window; ++t)
      for (int c = 0; c < 40; ++c)
        CHECK(batched.at(s * cfg.window + t, c) ==
              doctest::Approx(single.at(t, c)).epsilon(1e-9));
  }

  // Backward: batch_loss gradients equal the averaged single-window ones.
  model.params().zero_grad();
  ad::Var preds = model.predict_batch(ptrs);
  ad::backward(model.batch_loss(preds, ptrs));
  std::map<std::string, Tensor> got;
  for (const auto &kv : model.params().items())
    got.emplace(kv.first, kv.second->grad);

  model.params().zero_grad();
  ad::Var total;
  for (size_t s = 0; s < wins.size(); ++s) {
    Tensor anchor = a2m::mouth_anchor(wins[s].refs, cfg.window);
    ad::Var l = model.loss_graph(
        model.predict_mouth(model.encode_inputs(wins[s]), &anchor),
        wins[s].target);
    total = (s == 0) ? l : ad::add(total, l);
  }
  ad::backward(ad::scale(total, 1.0 / 3.0));
  for (const auto &kv : model.params().items())
    CHECK(max_abs_diff(got.at(kv.first), kv.second->grad) < 1e-8);
}

TEST_CASE("a2m: make_window slices the clip exactly") {
  const datagen::Corpus &corpus = a2m_corpus();
  const datagen::SyntheticClip &clip =
      corpus.clips[corpus.index_of(1, 2, 0)];
  a2m::A2MConfig cfg;
  Rng rng(61);
  a2m::A2MBatch b = a2m::make_window(clip, 2, cfg, rng);

  for (int t = 0; t < cfg.window; ++t) {
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 26; ++c)
        CHECK(b.audio.at(t, r * 26 + c) == clip.audio.at((2 + t) * 4 + r, c));
    for (int c = 0; c < 54; ++c)
      CHECK(b.pose.at(t, c) == clip.landmarks.at(2 + t, c));
    for (int c = 0; c < 40; ++c)
      CHECK(b.target.at(t, c) == clip.landmarks.at(2 + t, 96 + c));
  }
  // Every reference row is a verbatim clip row.
  for (int i = 0; i < cfg.n_refs; ++i) {
    bool found = false;
    for (int f = 0; f < clip.video_frames() && !found; ++f) {
      bool same = true;
      for (int c = 0; c < 136 && same; ++c)
        same = b.refs.at(i, c) == clip.landmarks.at(f, c);
      found = same;
    }
    CHECK(found);
  }
  CHECK_THROWS_AS(a2m::make_window(clip, -1, cfg, rng), InputError);
  CHECK_THROWS_AS(
      a2m::make_window(clip, clip.video_frames() - cfg.window + 1, cfg, rng),
      InputError);
}

TEST_CASE("a2m: predict_clip rejects malformed inputs") {
  a2m::A2MConfig cfg;
  a2m::Audio2Mouth model(cfg);
  Tensor audio({4 * 12, 26}), pose({12, 54}), refs({cfg.n_refs, 136});
  CHECK_THROWS_AS(model.predict_clip(audio, pose, refs, 0), InputError);
  CHECK_THROWS_AS(model.predict_clip(audio, pose, refs, 6), InputError);
  CHECK_THROWS_AS(model.predict_clip(Tensor({4 * 11, 26}), pose, refs, 1),
                  InputError);
  CHECK_THROWS_AS(
      model.predict_clip(Tensor({4 * 4, 26}), Tensor({4, 54}), refs, 1),
      InputError);  // clip shorter than the window
}

TEST_CASE("a2m: single-clip overfit run is deterministic and memorizes") {
  datagen::FactorSpec spec;
  spec.num_identities = 2;
  spec.num_contents = 2;
  spec.seed = 203;
  datagen::Corpus corpus = datagen::generate_corpus(spec, false);
  corpus.clips.erase(corpus.clips.begin() + 1, corpus.clips.end());
  REQUIRE(corpus.clips[0].emotion_id == 0);

  a2m::A2MConfig cfg;
  cfg.max_epochs = 120;
  cfg.patience = 120;  // run the full budget
  cfg.window_stride = 1;
  cfg.lr = 3e-3;
  cfg.seed = 7;
  a2m::Audio2Mouth m1 = a2m::train_a2m(corpus, cfg);
  a2m::Audio2Mouth m2 = a2m::train_a2m(corpus, cfg);

  CHECK(m1.history().train_total.size() <= static_cast<size_t>(cfg.max_epochs));
  CHECK(m1.history().train_total == m2.history().train_total);
  CHECK(m1.history().val_l1 == m2.history().val_l1);

  const std::vector<double> &h = m1.history().train_total;
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += h[i] / 10.0;
    tail += h[h.size() - 1 - i] / 10.0;
  }
  MESSAGE("overfit loss head ", head, " tail ", tail, " best val_l1 ",
          m1.history().best_val_l1);
  // The velocity term is an L2 norm over 40 coordinates, so it dwarfs the L1
  // term long after the positions are memorized; judge memorization on val_l1.
  CHECK(tail < 0.7 * head);
  CHECK(m1.history().best_val_l1 < 0.006);
}

TEST_CASE("a2m: trained model beats the mean-mouth baseline on held-out clips") {
  const datagen::Corpus &corpus = a2m_corpus();
  a2m::A2MConfig cfg;
  cfg.max_epochs = 60;
  cfg.patience = 8;
  cfg.seed = 9;
  a2m::Audio2Mouth model = a2m::train_a2m(corpus, cfg);
  CHECK(model.trained());
  CHECK(model.history().val_l1.size() <= static_cast<size_t>(cfg.max_epochs));
  CHECK(model.history().best_epoch >= 0);

  // Constant-mean-mouth baseline from the training contents.
  Tensor mean_mouth({1, 40});
  int64_t rows = 0;
  for (const auto &clip : corpus.clips) {
    if (clip.emotion_id != 0 ||
        clip.content_id >= corpus.spec.num_contents - cfg.val_contents)
      continue;
    for (int t = 0; t < clip.video_frames(); ++t, ++rows)
      for (int c = 0; c < 40; ++c)
        mean_mouth.at(0, c) += clip.landmarks.at(t, 96 + c);
  }
  for (int c = 0; c < 40; ++c) mean_mouth.at(0, c) /= rows;

  double model_sum = 0.0, base_sum = 0.0, disjoint_sum = 0.0;
  int count = 0;
  Rng ref_rng(71);
  for (const auto &clip : corpus.clips) {
    if (clip.emotion_id != 0 ||
        clip.content_id < corpus.spec.num_contents - cfg.val_contents)
      continue;
    const int tc = clip.video_frames();
    Tensor pose({tc, 54}), gt({tc, 40});
    for (int t = 0; t < tc; ++t) {
      for (int c = 0; c < 54; ++c) pose.at(t, c) = clip.landmarks.at(t, c);
      for (int c = 0; c < 40; ++c) gt.at(t, c) = clip.landmarks.at(t, 96 + c);
    }
    Tensor refs({cfg.n_refs, 136});
    for (int i = 0; i < cfg.n_refs; ++i) {
      int f = ref_rng.uniform_int(tc);
      for (int c = 0; c < 136; ++c) refs.at(i, c) = clip.landmarks.at(f, c);
    }
    Tensor pred = model.predict_clip(clip.audio, pose, refs, 1);
    Tensor disjoint = model.predict_clip(clip.audio, pose, refs, cfg.window);
    Tensor tiled({tc, 40});
    for (int t = 0; t < tc; ++t)
      for (int c = 0; c < 40; ++c) tiled.at(t, c) = mean_mouth.at(0, c);
    model_sum += eval::m_lmd(pred, gt);
    disjoint_sum += eval::m_lmd(disjoint, gt);
    base_sum += eval::m_lmd(tiled, gt);
    ++count;
  }
  double model_mlmd = model_sum / count, base_mlmd = base_sum / count;
  double disjoint_mlmd = disjoint_sum / count;
  MESSAGE("held-out M-LMD model ", model_mlmd, " baseline ", base_mlmd,
          " disjoint-windows ", disjoint_mlmd);
  CHECK(model_mlmd < base_mlmd);
  // Window consistency: overlapping-average vs disjoint windows.
  CHECK(std::abs(model_mlmd - disjoint_mlmd) / disjoint_mlmd < 0.05);

  // Checkpoint round-trip (float32 on disk).
  const std::string dir = "/tmp/cemnet_a2m_ckpt_test";
  std::filesystem::remove_all(dir);
  model.save(dir);
  a2m::Audio2Mouth back = a2m::Audio2Mouth::load(dir);
  CHECK(back.trained());
  CHECK(back.config().feature_dim == cfg.feature_dim);
  CHECK(back.history().best_epoch == model.history().best_epoch);
  a2m::A2MBatch probe = random_batch(cfg, 81);
  CHECK(max_abs_diff(back.predict_window(probe), model.predict_window(probe)) <
        1e-3);
}
