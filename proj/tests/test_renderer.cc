// tests/test_renderer.cc

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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "cemnet/core/error.h"
#include "cemnet/core/nn.h"
#include "cemnet/datagen/datagen.h"
#include "cemnet/eval/metrics.h"
#include "cemnet/renderer/renderer.h"
#include "gradcheck.h"

using namespace cemnet;

// 8x8 micro renderer: all derived spatial sizes stay valid (8 -> 4 -> 2)
// while every conv is a few dozen weights, keeping gradchecks fast.
static renderer::RendererConfig micro_config() {
  renderer::RendererConfig cfg;
  cfg.image_size = 8;
  cfg.n_refs = 1;
  cfg.frames_per_step = 1;
  cfg.flow_ch = 2;
  cfg.gen_ch = 2;
  cfg.disc_ch = 2;
  cfg.per_ch = 2;
  cfg.seed = 9;
  return cfg;
}

static Tensor uniform_tensor(std::vector<int> shape, Rng &rng, double lo,
                             double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Jitters a zero-initialized head so flows are non-integer and residuals
// nonzero; gradchecks at exact zero would park every bilinear sample on its
// interpolation kink.
static void jitter_params(nn::ParamStore &ps, const std::string &prefix,
                          Rng &rng, double stddev) {
  for (auto &kv : ps.items())
    if (kv.first.rfind(prefix, 0) == 0)
      for (int64_t i = 0; i < kv.second->value.numel(); ++i)
        kv.second->value[i] = stddev * rng.normal();
}

TEST_CASE("renderer: config validation and json round-trip") {
  renderer::RendererConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  renderer::RendererConfig bad = cfg;
  bad.image_size = 10;  // not divisible by 4
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.n_refs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.w_gan = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr_g = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.collapse_patience = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  cfg.flow_scale = 7.5;
  cfg.epochs = 3;
  cfg.seed = 123;
  renderer::RendererConfig back =
      renderer::RendererConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("renderer: heatmap rasterization and mask oracles") {
  const double sigma = 1.5, inv = 1.0 / (2.0 * sigma * sigma);
  // One point dead on pixel (4,4) of a 9x9 grid.
  const double lm1[2] = {0.5, 0.5};
  Tensor hm = renderer::rasterize_heatmap(lm1, 1, 9, sigma);
  CHECK(hm.rows() == 9);
  CHECK(hm[4 * 9 + 4] == 1.0);
  CHECK(hm[4 * 9 + 5] == std::exp(-1.0 * inv));
  CHECK(hm[0] == std::exp(-32.0 * inv));
  for (int64_t i = 0; i < hm.numel(); ++i) {
    CHECK(hm[i] >= 0.0);
    CHECK(hm[i] <= 1.0);
  }
  // Max combine: a duplicated point changes nothing; a second point only
  // raises cells where its splat wins.
  const double lm2[4] = {0.5, 0.5, 0.5, 0.5};
  CHECK(max_abs_diff(renderer::rasterize_heatmap(lm2, 2, 9, sigma), hm) ==
        0.0);
  const double lm3[4] = {0.5, 0.5, 0.25, 0.5};
  Tensor hm3 = renderer::rasterize_heatmap(lm3, 2, 9, sigma);
  for (int64_t i = 0; i < hm.numel(); ++i) CHECK(hm3[i] >= hm[i]);

  // Mask: pixel rows y >= h/2 zeroed, upper rows untouched.
  Tensor rows({2, 4 * 4 * 3});
  for (int64_t i = 0; i < rows.numel(); ++i) rows[i] = 1.0 + i;
  Tensor orig = rows;
  renderer::mask_lower_half(&rows, 4, 4, 3);
  for (int r = 0; r < 2; ++r)
    for (int y = 0; y < 4; ++y)
      for (int k = 0; k < 4 * 3; ++k) {
        const int64_t i = r * rows.cols() + y * 4 * 3 + k;
        CHECK(rows[i] == (y < 2 ? orig[i] : 0.0));
      }
  Tensor bad({1, 10});
  CHECK_THROWS_AS(renderer::mask_lower_half(&bad, 4, 4, 3), InputError);
}

TEST_CASE("renderer: zero-initialized flow head gives exact zero flow") {
  renderer::Renderer r(micro_config());
  Rng rng(41);
  Tensor fin = uniform_tensor({4, 5, 8, 8}, rng, 0.0, 1.0);
  auto [flow, conf] = r.estimate_flow(ad::constant(fin));
  CHECK(flow->value.rank() == 4);
  CHECK(flow->value.dim(0) == 4);
  CHECK(flow->value.dim(1) == 2);
  CHECK(conf->value.rows() == 4);
  for (int64_t i = 0; i < flow->value.numel(); ++i)
    CHECK(flow->value[i] == 0.0);
  // Confidence logit pools to exactly zero, so every weight is softplus(0).
  for (int64_t i = 0; i < conf->value.numel(); ++i)
    CHECK(conf->value[i] == std::log1p(1.0));

  CHECK_THROWS_AS(r.estimate_flow(ad::constant(Tensor({2, 5}))), InputError);
  CHECK_THROWS_AS(
      r.estimate_flow(ad::constant(uniform_tensor({1, 4, 8, 8}, rng, 0, 1))),
      InputError);
}

TEST_CASE("renderer: warp identity and fusion arithmetic") {
  renderer::Renderer r(micro_config());
  Rng rng(42);
  Tensor img = uniform_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);

  // Bilinear warp with identity flow returns the image bit-for-bit.
  ad::Var warped =
      ad::bilinear_sample(ad::constant(img), ad::constant(Tensor({1, 2, 8, 8})));
  CHECK(max_abs_diff(warped->value, img) == 0.0);

  // N=1: the weight cancels. A power-of-two weight cancels exactly; an
  // arbitrary one up to rounding.
  for (double w : {0.5, 0.7}) {
    ad::Var fused = r.warp_and_fuse(ad::constant(Tensor({1, 2, 8, 8})),
                                    ad::constant(Tensor::full({1, 1}, w)),
                                    ad::constant(img), 1, 1);
    const double tol = (w == 0.5) ? 0.0 : 1e-12;
    CHECK(max_abs_diff(fused->value, img) <= tol);
  }

  // N=2, equal weights, constant images: fused value is the plain mean.
  Tensor pair({2, 3, 8, 8});
  for (int64_t i = 0; i < pair.numel(); ++i)
    pair[i] = i < pair.numel() / 2 ? 0.25 : 0.75;
  ad::Var mean2 = r.warp_and_fuse(ad::constant(Tensor({2, 2, 8, 8})),
                                  ad::constant(Tensor::full({2, 1}, 0.5)),
                                  ad::constant(pair), 2, 1);
  for (int64_t i = 0; i < mean2->value.numel(); ++i)
    CHECK(mean2->value[i] == 0.5);
  for (int64_t i = 0; i < pair.numel(); ++i)
    pair[i] = i < pair.numel() / 2 ? 0.2 : 0.6;
  ad::Var mean3 = r.warp_and_fuse(ad::constant(Tensor({2, 2, 8, 8})),
                                  ad::constant(Tensor::full({2, 1}, 0.3)),
                                  ad::constant(pair), 2, 1);
  for (int64_t i = 0; i < mean3->value.numel(); ++i)
    CHECK(mean3->value[i] == doctest::Approx(0.4).epsilon(1e-12));

  // Nonpositive weights violate the Eq. 15 precondition.
  Tensor wneg = Tensor::full({2, 1}, 0.5);
  wneg[1] = 0.0;
  CHECK_THROWS_AS(r.warp_and_fuse(ad::constant(Tensor({2, 2, 8, 8})),
                                  ad::constant(wneg), ad::constant(pair), 2, 1),
                  InputError);

  // Convexity: with positive weights every fused pixel lies inside the
  // per-pixel range of the warped references.
  const int n = 3, t = 2;
  Tensor refs = uniform_tensor({n * t, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor flows = uniform_tensor({n * t, 2, 8, 8}, rng, -3.0, 3.0);
  Tensor w({n * t, 1});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(0.05, 2.0);
  ad::Var wv = ad::bilinear_sample(ad::constant(refs), ad::constant(flows));
  ad::Var fused = r.warp_and_fuse(ad::constant(flows), ad::constant(w),
                                  ad::constant(refs), n, t);
  const int64_t chw = 3 * 8 * 8;
  for (int tt = 0; tt < t; ++tt)
    for (int64_t p = 0; p < chw; ++p) {
      double lo = 1e9, hi = -1e9;
      for (int i = 0; i < n; ++i) {
        const double v = wv->value[(static_cast<int64_t>(i) * t + tt) * chw + p];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double f = fused->value[tt * chw + p];
      CHECK(f >= lo - 1e-9);
      CHECK(f <= hi + 1e-9);
    }
}

TEST_CASE("renderer: fresh generator is an exact passthrough") {
  renderer::Renderer r(micro_config());
  Rng rng(43);
  Tensor warped = uniform_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor masked = uniform_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor hm = uniform_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
  ad::Var out = r.generate(ad::constant(warped), ad::constant(masked),
                           ad::constant(hm));
  CHECK(max_abs_diff(out->value, warped) == 0.0);

  // Saturating the residual head bias clamps the output to the range ends.
  r.params_g().get("gen.head.b")->value.fill(5.0);
  ad::Var hi = r.generate(ad::constant(warped), ad::constant(masked),
                          ad::constant(hm));
  for (int64_t i = 0; i < hi->value.numel(); ++i) CHECK(hi->value[i] == 1.0);
  r.params_g().get("gen.head.b")->value.fill(-5.0);
  ad::Var lo = r.generate(ad::constant(warped), ad::constant(masked),
                          ad::constant(hm));
  for (int64_t i = 0; i < lo->value.numel(); ++i) CHECK(lo->value[i] == 0.0);

  // Random weights keep the output in [0,1]; permuting the batch permutes
  // the outputs and nothing else.
  Rng jr(44);
  jitter_params(r.params_g(), "gen.", jr, 0.3);
  renderer::RenderBatch b;
  b.refs = uniform_tensor({1, 8 * 8 * 3}, rng, 0.0, 1.0);
  b.ref_lms = uniform_tensor({1, 6}, rng, 0.2, 0.8);
  b.face_lms = uniform_tensor({2, 6}, rng, 0.2, 0.8);
  b.gt = uniform_tensor({2, 8 * 8 * 3}, rng, 0.0, 1.0);
  b.masked = b.gt;
  renderer::mask_lower_half(&b.masked, 8, 8, 3);
  ad::Var y = r.render(b);
  for (int64_t i = 0; i < y->value.numel(); ++i) {
    CHECK(y->value[i] >= 0.0);
    CHECK(y->value[i] <= 1.0);
  }
  renderer::RenderBatch swapped = b;
  for (int64_t c = 0; c < b.face_lms.cols(); ++c) {
    swapped.face_lms.at(0, static_cast<int>(c)) = b.face_lms.at(1, static_cast<int>(c));
    swapped.face_lms.at(1, static_cast<int>(c)) = b.face_lms.at(0, static_cast<int>(c));
  }
  for (int64_t c = 0; c < b.masked.cols(); ++c) {
    swapped.masked.at(0, static_cast<int>(c)) = b.masked.at(1, static_cast<int>(c));
    swapped.masked.at(1, static_cast<int>(c)) = b.masked.at(0, static_cast<int>(c));
  }
  ad::Var ys = r.render(swapped);
  const int64_t chw = 3 * 8 * 8;
  for (int64_t p = 0; p < chw; ++p) {
    CHECK(ys->value[p] == y->value[chw + p]);
    CHECK(ys->value[chw + p] == y->value[p]);
  }
}

TEST_CASE("renderer: loss components match scalar-loop oracles") {
  renderer::RendererConfig cfg = micro_config();
  renderer::Renderer r(cfg);
  Rng rng(45);
  Tensor pred_t = uniform_tensor({2, 3, 8, 8}, rng, 0.1, 0.9);
  Tensor gt_t = uniform_tensor({2, 3, 8, 8}, rng, 0.1, 0.9);
  Tensor hm_t = uniform_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
  ad::Var pred = ad::constant(pred_t), gt = ad::constant(gt_t),
          hm = ad::constant(hm_t);

  renderer::RenderLossParts parts;
  ad::Var total = r.generator_loss(pred, gt, hm, &parts);

  // Rebuild every reduction with plain loops from the feature values (the
  // conv forward itself is oracled in the core tests).
  auto l1 = [](const Tensor &a, const Tensor &b) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += std::fabs(a[i] - b[i]);
    return s / static_cast<double>(a.numel());
  };
  std::vector<ad::Var> fp = r.perceptual(pred), fg = r.perceptual(gt);
  double l_per = 0.0;
  for (size_t s = 0; s < fp.size(); ++s) l_per += l1(fp[s]->value, fg[s]->value);
  l_per /= static_cast<double>(fp.size());
  auto [pf, ff] = r.discriminate(pred, hm);
  auto [pr, fr] = r.discriminate(gt, hm);
  double l_gan = 0.0;
  for (int64_t i = 0; i < pf->value.numel(); ++i)
    l_gan += (pf->value[i] - 1.0) * (pf->value[i] - 1.0);
  l_gan /= static_cast<double>(pf->value.numel());
  double l_fm = 0.0;
  for (size_t l = 0; l < ff.size(); ++l) l_fm += l1(ff[l]->value, fr[l]->value);
  l_fm /= static_cast<double>(ff.size());

  CHECK(parts.l_per == doctest::Approx(l_per).epsilon(1e-12));
  CHECK(parts.l_gan == doctest::Approx(l_gan).epsilon(1e-12));
  CHECK(parts.l_fm == doctest::Approx(l_fm).epsilon(1e-12));
  const double tot =
      cfg.w_per * parts.l_per + cfg.w_gan * parts.l_gan + cfg.w_fm * parts.l_fm;
  CHECK(parts.total == doctest::Approx(tot).epsilon(1e-12));
  CHECK(total->value[0] == parts.total);

  // Discriminator loss oracle.
  double d_o = 0.0;
  for (int64_t i = 0; i < pr->value.numel(); ++i)
    d_o += (pr->value[i] - 1.0) * (pr->value[i] - 1.0);
  d_o /= static_cast<double>(pr->value.numel());
  double d_f = 0.0;
  for (int64_t i = 0; i < pf->value.numel(); ++i)
    d_f += pf->value[i] * pf->value[i];
  d_f /= static_cast<double>(pf->value.numel());
  ad::Var d = r.discriminator_loss(pred, gt, hm);
  CHECK(d->value[0] == doctest::Approx(0.5 * (d_o + d_f)).epsilon(1e-12));

  // Perfect prediction zeroes the feature-space terms exactly.
  renderer::RenderLossParts perfect;
  r.generator_loss(gt, gt, hm, &perfect);
  CHECK(perfect.l_per == 0.0);
  CHECK(perfect.l_fm == 0.0);

  // All-zero weights zero the total.
  renderer::RendererConfig zw = cfg;
  zw.w_per = zw.w_gan = zw.w_fm = 0.0;
  renderer::Renderer rz(zw);
  renderer::RenderLossParts zp;
  ad::Var zt = rz.generator_loss(pred, gt, hm, &zp);
  CHECK(zt->value[0] == 0.0);
  CHECK(zp.total == 0.0);
}

TEST_CASE("renderer: generator and discriminator losses pass gradcheck") {
  renderer::Renderer r(micro_config());
  Rng rng(46);
  // Non-degenerate heads: exact-zero flow would park every bilinear sample
  // on its interpolation kink.
  jitter_params(r.params_g(), "flow.head", rng, 0.05);
  jitter_params(r.params_g(), "gen.head", rng, 0.05);

  renderer::RenderBatch b;
  b.refs = uniform_tensor({1, 8 * 8 * 3}, rng, 0.2, 0.8);
  b.ref_lms = uniform_tensor({1, 6}, rng, 0.2, 0.8);
  b.face_lms = uniform_tensor({1, 6}, rng, 0.2, 0.8);
  b.gt = uniform_tensor({1, 8 * 8 * 3}, rng, 0.2, 0.8);
  b.masked = b.gt;
  renderer::mask_lower_half(&b.masked, 8, 8, 3);
  Tensor hm_t({1, 1, 8, 8});
  {
    Tensor one = renderer::rasterize_heatmap(b.face_lms.data(), 3, 8, 1.5);
    std::copy_n(one.data(), 64, hm_t.data());
  }
  Tensor gt_nchw = hwc_rows_to_nchw(b.gt, 8, 8, 3);

  // Full pipeline loss with the discriminator fixed: every flow-net and
  // generator weight gets a checked gradient.
  std::vector<ad::Var> g_leaves;
  for (auto &kv : r.params_g().items()) g_leaves.push_back(kv.second);
  double worst = testutil::gradcheck(
      [&]() {
        return r.generator_loss(r.render(b), ad::constant(gt_nchw),
                                ad::constant(hm_t));
      },
      g_leaves);
  MESSAGE("renderer generator-side gradcheck worst rel err " << worst);
  CHECK(worst < 1e-5);

  // Discriminator loss against its own parameters (generator output fixed).
  Tensor fake = uniform_tensor({1, 3, 8, 8}, rng, 0.1, 0.9);
  std::vector<ad::Var> d_leaves;
  for (auto &kv : r.params_d().items()) d_leaves.push_back(kv.second);
  double worst_d = testutil::gradcheck(
      [&]() {
        return r.discriminator_loss(ad::constant(fake), ad::constant(gt_nchw),
                                    ad::constant(hm_t));
      },
      d_leaves);
  MESSAGE("renderer discriminator gradcheck worst rel err " << worst_d);
  CHECK(worst_d < 1e-5);
}

TEST_CASE("renderer: flow net recovers a known rigid translation") {
  datagen::FactorSpec spec;
  spec.num_identities = 2;
  spec.num_contents = 2;
  spec.seed = 11;
  datagen::Generator gen(spec);
  datagen::SyntheticClip clip = gen.make_clip(0, 0, 0, false);
  const int L = clip.landmarks.cols();
  Tensor lm_ref({1, L}), lm_tgt({1, L});
  std::copy_n(clip.landmarks.data(), L, lm_ref.data());
  const double dx = 2.0, dy = 1.0;  // pixels
  for (int p = 0; p < L / 2; ++p) {
    lm_tgt[2 * p] = lm_ref[2 * p] + dx / 63.0;
    lm_tgt[2 * p + 1] = lm_ref[2 * p + 1] + dy / 63.0;
  }
  Tensor img_ref = gen.render_frame(lm_ref.data(), 0);
  Tensor img_tgt = gen.render_frame(lm_tgt.data(), 0);

  renderer::RendererConfig cfg;
  cfg.flow_ch = 8;
  cfg.seed = 12;
  renderer::Renderer r(cfg);

  Tensor fin({1, 5, 64, 64});
  std::copy_n(hwc_rows_to_nchw(img_ref, 64, 64, 3).data(), 3 * 4096,
              fin.data());
  std::copy_n(renderer::rasterize_heatmap(lm_ref.data(), L / 2, 64, cfg.sigma)
                  .data(),
              4096, fin.data() + 3 * 4096);
  std::copy_n(renderer::rasterize_heatmap(lm_tgt.data(), L / 2, 64, cfg.sigma)
                  .data(),
              4096, fin.data() + 4 * 4096);
  Tensor ref_nchw = hwc_rows_to_nchw(img_ref, 64, 64, 3);
  Tensor tgt_nchw = hwc_rows_to_nchw(img_tgt, 64, 64, 3);

  nn::Adam opt(r.params_g(), 2e-3);
  Tensor flow_v;
  for (int step = 0; step < 500; ++step) {
    auto [flow, conf] = r.estimate_flow(ad::constant(fin));
    ad::Var warped = ad::bilinear_sample(ad::constant(ref_nchw), flow);
    ad::Var loss = ad::l1_loss(warped, ad::constant(tgt_nchw));
    ad::backward(loss);
    nn::clip_global_norm(r.params_g(), cfg.clip_norm);
    opt.step();
    r.params_g().zero_grad();
    flow_v = flow->value;
  }

  // Mean flow over the face bounding box; the background is textureless and
  // pins nothing. A backward warp undoing a +d shift points at -d.
  double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
  for (int p = 0; p < L / 2; ++p) {
    x0 = std::min(x0, lm_ref[2 * p] * 63.0);
    x1 = std::max(x1, lm_ref[2 * p] * 63.0);
    y0 = std::min(y0, lm_ref[2 * p + 1] * 63.0);
    y1 = std::max(y1, lm_ref[2 * p + 1] * 63.0);
  }
  double fx = 0.0, fy = 0.0;
  int count = 0;
  for (int y = static_cast<int>(y0); y <= static_cast<int>(y1); ++y)
    for (int x = static_cast<int>(x0); x <= static_cast<int>(x1); ++x) {
      fx += flow_v[static_cast<int64_t>(y) * 64 + x];
      fy += flow_v[4096 + static_cast<int64_t>(y) * 64 + x];
      ++count;
    }
  fx /= count;
  fy /= count;
  MESSAGE("mean face-region flow (" << fx << ", " << fy << ") for shift ("
                                    << dx << ", " << dy << ")");
  CHECK(std::fabs(fx - (-dx)) < 1.0);
  CHECK(std::fabs(fy - (-dy)) < 1.0);
}

// Shared smoke corpus: 2 identities x 2 contents x 8 emotions, content 1
// held out.
static const datagen::Corpus &smoke_corpus() {
  static datagen::Corpus corpus = [] {
    datagen::FactorSpec spec;
    spec.num_identities = 2;
    spec.num_contents = 2;
    spec.seed = 303;
    return datagen::generate_corpus(spec, true);
  }();
  return corpus;
}

static renderer::RendererConfig smoke_config() {
  renderer::RendererConfig cfg;
  cfg.n_refs = 2;
  cfg.frames_per_step = 2;
  cfg.flow_ch = 8;
  cfg.gen_ch = 8;
  cfg.disc_ch = 8;
  cfg.per_ch = 4;
  cfg.epochs = 6;
  cfg.clips_per_epoch = 8;
  cfg.heldout_contents = 1;
  cfg.seed = 21;
  return cfg;
}

TEST_CASE("renderer: smoke training learns, reruns bitwise, round-trips") {
  const datagen::Corpus &corpus = smoke_corpus();
  renderer::RendererConfig cfg = smoke_config();

  renderer::Renderer fresh(cfg);
  renderer::RenderBatch probe;
  CHECK_THROWS_AS(fresh.infer_rows(probe), UsageError);

  renderer::Renderer r = renderer::train_renderer(corpus, cfg);
  const auto &h = r.history();
  const size_t n = h.g_total.size();
  CHECK(n == static_cast<size_t>(cfg.epochs * cfg.clips_per_epoch));
  double head = 0.0, tail = 0.0;
  for (size_t i = 0; i < n / 2; ++i) head += h.g_total[i];
  for (size_t i = n - n / 2; i < n; ++i) tail += h.g_total[i];
  MESSAGE("renderer smoke g_total first-half mean "
          << head / (n / 2) << " second-half mean " << tail / (n / 2));
  CHECK(tail < head);

  // Seeded rerun reproduces the loss history bitwise.
  renderer::Renderer r2 = renderer::train_renderer(corpus, cfg);
  CHECK(r2.history().g_total == h.g_total);
  CHECK(r2.history().d_loss == h.d_loss);

  // Inference on a held-out clip, chunked vs whole-window: per-sample
  // purity makes them identical.
  Rng rng(404);
  const int target = corpus.index_of(0, 1, 2);
  const int refc = corpus.index_of(0, 0, 5);
  const int t_total = corpus.clips[target].landmarks.rows();
  std::vector<int> frames;
  for (int f = 0; f < std::min(3, t_total); ++f) frames.push_back(f);
  renderer::RenderBatch batch = renderer::build_render_batch(
      corpus, target, refc, frames, cfg.n_refs, rng);
  Tensor rows = r.infer_rows(batch);
  CHECK(rows.rows() == static_cast<int>(frames.size()));
  ad::Var whole = r.render(batch);
  CHECK(max_abs_diff(rows, nchw_to_hwc_rows(whole->value)) == 0.0);

  // Checkpoint round-trip: same config, same outputs up to f32 storage.
  const std::string dir = "/tmp/cemnet_renderer_rt";
  std::filesystem::remove_all(dir);
  r.save(dir);
  renderer::Renderer back = renderer::Renderer::load(dir);
  CHECK(back.trained());
  CHECK(back.config().to_json() == cfg.to_json());
  CHECK(max_abs_diff(back.infer_rows(batch), rows) < 1e-3);
}

TEST_CASE("renderer: trained model beats copy-nearest-reference baseline") {
  const datagen::Corpus &corpus = smoke_corpus();
  // The adversarial game paces quality: the fresh warp fusion scores ~25 dB,
  // dips while the young discriminator pushes hard, and recovers past the
  // baseline around step 150. Train ~400 steps for an honest margin.
  renderer::RendererConfig cfg = smoke_config();
  cfg.epochs = 25;
  cfg.clips_per_epoch = 16;
  renderer::Renderer r = renderer::train_renderer(corpus, cfg);

  // Held-out content, cross-emotion references from the training content.
  Rng rng(505);
  double model_sum = 0.0, base_sum = 0.0;
  int cases = 0;
  for (int e : {0, 3, 6}) {
    const int target = corpus.index_of(1, 1, e);
    const int refc = corpus.index_of(1, 0, (e + 4) % 8);
    const datagen::SyntheticClip &tc = corpus.clips[target];
    std::vector<int> frames;
    for (int f = 0; f < tc.landmarks.rows(); ++f) frames.push_back(f);
    renderer::RenderBatch batch = renderer::build_render_batch(
        corpus, target, refc, frames, cfg.n_refs, rng);
    Tensor pred = r.infer_rows(batch);
    model_sum += eval::psnr(eval::lower_half_rows(pred),
                            eval::lower_half_rows(batch.gt));
    // Baseline: copy the reference whose landmarks sit closest to each
    // target frame's landmarks.
    Tensor copied(batch.gt.shape());
    for (int t = 0; t < batch.face_lms.rows(); ++t) {
      int best = 0;
      double best_d = 1e18;
      for (int i = 0; i < batch.refs.rows(); ++i) {
        double d = 0.0;
        for (int c = 0; c < batch.face_lms.cols(); ++c) {
          const double diff = batch.face_lms.at(t, c) - batch.ref_lms.at(i, c);
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      std::copy_n(batch.refs.data() + static_cast<int64_t>(best) *
                      batch.refs.cols(),
                  batch.refs.cols(),
                  copied.data() + static_cast<int64_t>(t) * copied.cols());
    }
    base_sum += eval::psnr(eval::lower_half_rows(copied),
                           eval::lower_half_rows(batch.gt));
    ++cases;
  }
  MESSAGE("held-out lower-half PSNR: model " << model_sum / cases
                                             << " dB, copy-nearest baseline "
                                             << base_sum / cases << " dB");
  CHECK(model_sum / cases > base_sum / cases);
}

TEST_CASE("renderer: single-clip overfit reaches 30 dB on the lower half") {
  const datagen::Corpus &corpus = smoke_corpus();
  renderer::RendererConfig cfg = smoke_config();
  cfg.n_refs = 1;
  cfg.frames_per_step = 2;
  cfg.seed = 23;
  renderer::Renderer r(cfg);

  const int clip = corpus.index_of(0, 0, 0);
  const datagen::SyntheticClip &tc = corpus.clips[clip];
  const int t_total = tc.landmarks.rows();
  std::vector<int> all_frames;
  for (int f = 0; f < t_total; ++f) all_frames.push_back(f);
  Rng fixed(1);
  renderer::RenderBatch full = renderer::build_render_batch(
      corpus, clip, clip, all_frames, cfg.n_refs, fixed);

  nn::Adam opt_g(r.params_g(), cfg.lr_g), opt_d(r.params_d(), cfg.lr_d);
  Rng rng(606);
  double best = 0.0;
  int steps = 0;
  for (; steps < 2000; ++steps) {
    std::vector<int> frames(2);
    for (int &f : frames) f = rng.uniform_int(t_total);
    renderer::RenderBatch batch = renderer::build_render_batch(
        corpus, clip, clip, frames, cfg.n_refs, rng);
    Tensor hm({2, 1, 64, 64});
    for (int k = 0; k < 2; ++k)
      std::copy_n(renderer::rasterize_heatmap(
                      batch.face_lms.data() + k * batch.face_lms.cols(),
                      batch.face_lms.cols() / 2, 64, cfg.sigma)
                      .data(),
                  4096, hm.data() + static_cast<int64_t>(k) * 4096);
    ad::Var hmv = ad::constant(hm);
    ad::Var gt = ad::constant(hwc_rows_to_nchw(batch.gt, 64, 64, 3));
    ad::Var pred = r.render(batch);
    ad::Var g = r.generator_loss(pred, gt, hmv);
    ad::backward(g);
    nn::clip_global_norm(r.params_g(), cfg.clip_norm);
    opt_g.step();
    r.params_g().zero_grad();
    r.params_d().zero_grad();
    ad::Var d = r.discriminator_loss(ad::constant(pred->value), gt, hmv);
    ad::backward(d);
    nn::clip_global_norm(r.params_d(), cfg.clip_norm);
    opt_d.step();
    r.params_g().zero_grad();
    r.params_d().zero_grad();

    if (steps >= 199 && (steps + 1) % 100 == 0) {
      r.set_trained(true);
      Tensor rows = r.infer_rows(full);
      best = eval::psnr(eval::lower_half_rows(rows),
                        eval::lower_half_rows(full.gt));
      if (best >= 30.0) break;
    }
  }
  MESSAGE("overfit lower-half PSNR " << best << " dB after " << steps + 1
                                     << " generator steps");
  CHECK(best >= 30.0);
}
