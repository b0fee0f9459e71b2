// src/renderer/renderer.cc

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

#include "cemnet/renderer/renderer.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <utility>

#include "cemnet/core/error.h"
#include "cemnet/core/io.h"

namespace cemnet {
namespace renderer {

namespace {

constexpr double kLeak = 0.01;

// The two u-nets share one topology: two stride-2 encoders, a bottleneck
// conv, and two upsample+skip decoders feeding a 3-channel head.
struct UNetRefs {
  const nn::Conv2d &enc1, &enc2, &mid, &up1, &up2, &head;
};

ad::Var run_unet(const UNetRefs &u, const ad::Var &x) {
  ad::Var h1 = ad::leaky_relu(u.enc1(x), kLeak);
  ad::Var h2 = ad::leaky_relu(u.enc2(h1), kLeak);
  ad::Var m = ad::leaky_relu(u.mid(h2), kLeak);
  ad::Var d1 = ad::leaky_relu(
      u.up1(ad::concat_channels({ad::upsample2x(m), h1})), kLeak);
  ad::Var d2 = ad::leaky_relu(
      u.up2(ad::concat_channels({ad::upsample2x(d1), x})), kLeak);
  return u.head(d2);
}

Tensor copy_rows(const Tensor &x, int r0, int r1) {
  Tensor out({r1 - r0, x.cols()});
  std::copy_n(x.data() + static_cast<int64_t>(r0) * x.cols(),
              static_cast<int64_t>(r1 - r0) * x.cols(), out.data());
  return out;
}

// Heatmaps for every landmark row, stacked as [K, 1, size, size].
Tensor stack_heatmaps(const Tensor &lms, int size, double sigma) {
  const int k = lms.rows(), hw = size * size;
  Tensor out({k, 1, size, size});
  for (int r = 0; r < k; ++r) {
    Tensor hm = rasterize_heatmap(lms.data() + r * lms.cols(),
                                  lms.cols() / 2, size, sigma);
    std::copy_n(hm.data(), hw, out.data() + static_cast<int64_t>(r) * hw);
  }
  return out;
}

}  // namespace

void RendererConfig::validate() const {
  if (image_size < 8 || image_size % 4 != 0)
    throw ConfigError("renderer: image_size must be >= 8 and divisible by 4");
  if (n_refs < 1) throw ConfigError("renderer: n_refs must be >= 1");
  if (frames_per_step < 1)
    throw ConfigError("renderer: frames_per_step must be >= 1");
  if (sigma <= 0) throw ConfigError("renderer: sigma must be positive");
  if (flow_scale <= 0)
    throw ConfigError("renderer: flow_scale must be positive");
  if (flow_ch < 1 || gen_ch < 1 || disc_ch < 1 || per_ch < 1)
    throw ConfigError("renderer: channel widths must be >= 1");
  if (w_per < 0 || w_gan < 0 || w_fm < 0)
    throw ConfigError("renderer: loss weights must be nonnegative");
  if (lr_g <= 0 || lr_d <= 0)
    throw ConfigError("renderer: learning rates must be positive");
  if (epochs < 1 || clips_per_epoch < 1)
    throw ConfigError("renderer: epochs and clips_per_epoch must be >= 1");
  if (heldout_contents < 0)
    throw ConfigError("renderer: heldout_contents must be >= 0");
  if (clip_norm <= 0) throw ConfigError("renderer: clip_norm must be positive");
  if (collapse_eps <= 0 || collapse_patience < 1)
    throw ConfigError("renderer: collapse thresholds must be positive");
}

nlohmann::json RendererConfig::to_json() const {
  return nlohmann::json{{"image_size", image_size},
                        {"n_refs", n_refs},
                        {"frames_per_step", frames_per_step},
                        {"sigma", sigma},
                        {"flow_scale", flow_scale},
                        {"flow_ch", flow_ch},
                        {"gen_ch", gen_ch},
                        {"disc_ch", disc_ch},
                        {"per_ch", per_ch},
                        {"w_per", w_per},
                        {"w_gan", w_gan},
                        {"w_fm", w_fm},
                        {"lr_g", lr_g},
                        {"lr_d", lr_d},
                        {"epochs", epochs},
                        {"clips_per_epoch", clips_per_epoch},
                        {"heldout_contents", heldout_contents},
                        {"clip_norm", clip_norm},
                        {"collapse_eps", collapse_eps},
                        {"collapse_patience", collapse_patience},
                        {"seed", seed}};
}

RendererConfig RendererConfig::from_json(const nlohmann::json &j) {
  RendererConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.n_refs = j.value("n_refs", c.n_refs);
  c.frames_per_step = j.value("frames_per_step", c.frames_per_step);
  c.sigma = j.value("sigma", c.sigma);
  c.flow_scale = j.value("flow_scale", c.flow_scale);
  c.flow_ch = j.value("flow_ch", c.flow_ch);
  c.gen_ch = j.value("gen_ch", c.gen_ch);
  c.disc_ch = j.value("disc_ch", c.disc_ch);
  c.per_ch = j.value("per_ch", c.per_ch);
  c.w_per = j.value("w_per", c.w_per);
  c.w_gan = j.value("w_gan", c.w_gan);
  c.w_fm = j.value("w_fm", c.w_fm);
  c.lr_g = j.value("lr_g", c.lr_g);
  c.lr_d = j.value("lr_d", c.lr_d);
  c.epochs = j.value("epochs", c.epochs);
  c.clips_per_epoch = j.value("clips_per_epoch", c.clips_per_epoch);
  c.heldout_contents = j.value("heldout_contents", c.heldout_contents);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.collapse_eps = j.value("collapse_eps", c.collapse_eps);
  c.collapse_patience = j.value("collapse_patience", c.collapse_patience);
  c.seed = j.value("seed", c.seed);
  return c;
}

Tensor rasterize_heatmap(const double *lm, int n_points, int size,
                         double sigma) {
  Tensor hm({size, size});
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int p = 0; p < n_points; ++p) {
    const double px = lm[2 * p] * (size - 1);
    const double py = lm[2 * p + 1] * (size - 1);
    const int x0 = std::max(0, static_cast<int>(std::floor(px)) - r);
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(px)) + r);
    const int y0 = std::max(0, static_cast<int>(std::floor(py)) - r);
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(py)) + r);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
        double &cell = hm[static_cast<int64_t>(y) * size + x];
        cell = std::max(cell, std::exp(-d2 * inv));
      }
  }
  return hm;
}

void mask_lower_half(Tensor *rows, int h, int w, int c) {
  if (rows->cols() != h * w * c)
    throw InputError("mask_lower_half: row width does not match h*w*c");
  const int start = (h / 2) * w * c, len = h * w * c - start;
  for (int i = 0; i < rows->rows(); ++i)
    std::fill_n(rows->data() + static_cast<int64_t>(i) * rows->cols() + start,
                len, 0.0);
}

Renderer::Renderer(const RendererConfig &config) : config_(config) {
  config_.validate();
  Rng rng = substream(config_.seed, "renderer_init");
  const int fc = config_.flow_ch, gc = config_.gen_ch;
  const int dc = config_.disc_ch, pc = config_.per_ch;
  // Flow u-net over [ref image | ref heatmap | target heatmap] = 5 channels.
  // The head is zero-initialized: a fresh net emits exactly zero flow and a
  // uniform confidence, so warping starts as the identity.
  f_enc1_ = nn::Conv2d(params_g_, "flow.enc1", 5, fc, 3, 2, 1, rng);
  f_enc2_ = nn::Conv2d(params_g_, "flow.enc2", fc, 2 * fc, 3, 2, 1, rng);
  f_mid_ = nn::Conv2d(params_g_, "flow.mid", 2 * fc, 2 * fc, 3, 1, 1, rng);
  f_up1_ = nn::Conv2d(params_g_, "flow.up1", 3 * fc, fc, 3, 1, 1, rng);
  f_up2_ = nn::Conv2d(params_g_, "flow.up2", fc + 5, fc, 3, 1, 1, rng);
  f_head_ = nn::Conv2d::zeros(params_g_, "flow.head", fc, 3, 3, 1, 1);
  // Generator over [warped | masked target | target heatmap] = 7 channels,
  // predicting a residual on the warped fusion (head zero-initialized).
  g_enc1_ = nn::Conv2d(params_g_, "gen.enc1", 7, gc, 3, 2, 1, rng);
  g_enc2_ = nn::Conv2d(params_g_, "gen.enc2", gc, 2 * gc, 3, 2, 1, rng);
  g_mid_ = nn::Conv2d(params_g_, "gen.mid", 2 * gc, 2 * gc, 3, 1, 1, rng);
  g_up1_ = nn::Conv2d(params_g_, "gen.up1", 3 * gc, gc, 3, 1, 1, rng);
  g_up2_ = nn::Conv2d(params_g_, "gen.up2", gc + 7, gc, 3, 1, 1, rng);
  g_head_ = nn::Conv2d::zeros(params_g_, "gen.head", gc, 3, 3, 1, 1);
  // Patch discriminator conditioned on the target heatmap.
  d1_ = nn::Conv2d(params_d_, "disc.c1", 4, dc, 3, 2, 1, rng);
  d2_ = nn::Conv2d(params_d_, "disc.c2", dc, 2 * dc, 3, 2, 1, rng);
  d_patch_ = nn::Conv2d(params_d_, "disc.patch", 2 * dc, 1, 3, 1, 1, rng);
  // Fixed random feature pyramid for the perceptual loss; weights live in
  // their own store so no optimizer ever touches them.
  p1_ = nn::Conv2d(params_p_, "per.c1", 3, pc, 3, 2, 1, rng);
  p2_ = nn::Conv2d(params_p_, "per.c2", pc, 2 * pc, 3, 2, 1, rng);
}

ad::Var Renderer::flow_unet(const ad::Var &x) const {
  return run_unet({f_enc1_, f_enc2_, f_mid_, f_up1_, f_up2_, f_head_}, x);
}

ad::Var Renderer::gen_unet(const ad::Var &x) const {
  return run_unet({g_enc1_, g_enc2_, g_mid_, g_up1_, g_up2_, g_head_}, x);
}

std::pair<ad::Var, ad::Var> Renderer::estimate_flow(
    const ad::Var &flow_in) const {
  const Tensor &v = flow_in->value;
  if (v.rank() != 4 || v.dim(0) < 1 || v.dim(1) != 5)
    throw InputError("renderer: flow input must be [K>=1, 5, H, W]");
  ad::Var head = flow_unet(flow_in);
  ad::Var flow = ad::scale(ad::slice_channels(head, 0, 2), config_.flow_scale);
  ad::Var conf = ad::softplus(ad::mean_hw(ad::slice_channels(head, 2, 3)));
  return {flow, conf};
}

ad::Var Renderer::warp_and_fuse(const ad::Var &flows, const ad::Var &weights,
                                const ad::Var &refs, int n_refs,
                                int t_frames) const {
  const Tensor &rv = refs->value;
  if (rv.rank() != 4 || rv.dim(0) != n_refs * t_frames)
    throw InputError("renderer: refs must be [n_refs*t_frames, 3, H, W]");
  if (weights->value.numel() != n_refs * t_frames)
    throw InputError("renderer: one fusion weight per (ref, frame) pair");
  for (int64_t i = 0; i < weights->value.numel(); ++i)
    if (!(weights->value[i] > 0.0))
      throw InputError("renderer: fusion weights must be strictly positive");
  const int h = rv.dim(2), w = rv.dim(3), hw3 = 3 * h * w;
  ad::Var warped = ad::bilinear_sample(refs, flows);
  ad::Var rows = ad::reshape(warped, {n_refs * t_frames, hw3});
  ad::Var wcol = ad::reshape(weights, {n_refs * t_frames, 1});
  std::vector<ad::Var> fused;
  fused.reserve(t_frames);
  for (int t = 0; t < t_frames; ++t) {
    ad::Var num, den;
    for (int i = 0; i < n_refs; ++i) {
      const int k = i * t_frames + t;
      ad::Var wk = ad::slice_rows(wcol, k, k + 1);
      ad::Var term = ad::mul_scalar_var(ad::slice_rows(rows, k, k + 1), wk);
      num = i ? ad::add(num, term) : term;
      den = i ? ad::add(den, wk) : wk;
    }
    fused.push_back(ad::mul_scalar_var(num, ad::reciprocal(den)));
  }
  return ad::reshape(ad::concat_rows(fused), {t_frames, 3, h, w});
}

ad::Var Renderer::generate(const ad::Var &warped, const ad::Var &masked,
                           const ad::Var &tgt_hm) const {
  ad::Var res = gen_unet(ad::concat_channels({warped, masked, tgt_hm}));
  ad::Var out = ad::add(warped, res);
  // Exact [0,1] clamp; identity on in-range inputs, so the zero-initialized
  // head leaves the warped fusion untouched bit-for-bit.
  return ad::sub(ad::relu(out), ad::relu(ad::add_scalar(out, -1.0)));
}

ad::Var Renderer::render(const RenderBatch &batch) const {
  const int size = config_.image_size, px = size * size;
  const int n = batch.refs.rows(), t = batch.face_lms.rows();
  if (n < 1 || t < 1)
    throw InputError("renderer: batch needs >= 1 reference and frame");
  if (batch.refs.cols() != px * 3 || batch.masked.cols() != px * 3)
    throw InputError("renderer: frame rows must be size*size*3 wide");
  if (batch.ref_lms.rows() != n || batch.masked.rows() != t)
    throw InputError("renderer: batch row counts disagree");
  Tensor refs_nchw = hwc_rows_to_nchw(batch.refs, size, size, 3);
  Tensor ref_hm = stack_heatmaps(batch.ref_lms, size, config_.sigma);
  Tensor tgt_hm = stack_heatmaps(batch.face_lms, size, config_.sigma);
  // Flow input per (reference, frame) pair, i-major; references tiled to
  // match so warp_and_fuse sees one row per pair.
  Tensor fin({n * t, 5, size, size});
  Tensor tiled({n * t, 3, size, size});
  for (int i = 0; i < n; ++i)
    for (int f = 0; f < t; ++f) {
      const int64_t k = static_cast<int64_t>(i) * t + f;
      std::copy_n(refs_nchw.data() + static_cast<int64_t>(i) * 3 * px, 3 * px,
                  fin.data() + k * 5 * px);
      std::copy_n(ref_hm.data() + static_cast<int64_t>(i) * px, px,
                  fin.data() + k * 5 * px + 3 * px);
      std::copy_n(tgt_hm.data() + static_cast<int64_t>(f) * px, px,
                  fin.data() + k * 5 * px + 4 * px);
      std::copy_n(refs_nchw.data() + static_cast<int64_t>(i) * 3 * px, 3 * px,
                  tiled.data() + k * 3 * px);
    }
  auto [flow, conf] = estimate_flow(ad::constant(std::move(fin)));
  ad::Var warped =
      warp_and_fuse(flow, conf, ad::constant(std::move(tiled)), n, t);
  Tensor masked_nchw = hwc_rows_to_nchw(batch.masked, size, size, 3);
  return generate(warped, ad::constant(std::move(masked_nchw)),
                  ad::constant(std::move(tgt_hm)));
}

std::pair<ad::Var, std::vector<ad::Var>> Renderer::discriminate(
    const ad::Var &img, const ad::Var &tgt_hm) const {
  ad::Var h1 = ad::leaky_relu(d1_(ad::concat_channels({img, tgt_hm})), kLeak);
  ad::Var h2 = ad::leaky_relu(d2_(h1), kLeak);
  return {d_patch_(h2), {h1, h2}};
}

std::vector<ad::Var> Renderer::perceptual(const ad::Var &img) const {
  // Raw image as scale 0, then two fixed random conv scales. Weights are
  // wrapped as constants so backward skips them.
  std::vector<ad::Var> feats{img};
  ad::Var h1 = ad::leaky_relu(
      ad::conv2d(img, ad::constant(p1_.w->value), ad::constant(p1_.b->value),
                 2, 1),
      kLeak);
  feats.push_back(h1);
  feats.push_back(ad::leaky_relu(
      ad::conv2d(h1, ad::constant(p2_.w->value), ad::constant(p2_.b->value), 2,
                 1),
      kLeak));
  return feats;
}

ad::Var Renderer::generator_loss(const ad::Var &pred, const ad::Var &gt,
                                 const ad::Var &tgt_hm,
                                 RenderLossParts *parts) const {
  std::vector<ad::Var> fp = perceptual(pred), fg = perceptual(gt);
  ad::Var l_per = ad::l1_loss(fp[0], fg[0]);
  for (size_t s = 1; s < fp.size(); ++s)
    l_per = ad::add(l_per, ad::l1_loss(fp[s], fg[s]));
  l_per = ad::scale(l_per, 1.0 / static_cast<double>(fp.size()));
  auto [patch_f, feats_f] = discriminate(pred, tgt_hm);
  auto [patch_r, feats_r] = discriminate(gt, tgt_hm);
  ad::Var ones = ad::constant(Tensor::full(patch_f->value.shape(), 1.0));
  ad::Var l_gan = ad::mse_loss(patch_f, ones);
  ad::Var l_fm = ad::l1_loss(feats_f[0], feats_r[0]);
  for (size_t l = 1; l < feats_f.size(); ++l)
    l_fm = ad::add(l_fm, ad::l1_loss(feats_f[l], feats_r[l]));
  l_fm = ad::scale(l_fm, 1.0 / static_cast<double>(feats_f.size()));
  ad::Var total = ad::add(
      ad::add(ad::scale(l_per, config_.w_per), ad::scale(l_gan, config_.w_gan)),
      ad::scale(l_fm, config_.w_fm));
  if (parts) {
    parts->l_per = l_per->value[0];
    parts->l_gan = l_gan->value[0];
    parts->l_fm = l_fm->value[0];
    parts->total = total->value[0];
  }
  return total;
}

ad::Var Renderer::discriminator_loss(const ad::Var &pred, const ad::Var &gt,
                                     const ad::Var &tgt_hm) const {
  auto [pf, ff] = discriminate(ad::stop_gradient(pred), tgt_hm);
  auto [pr, fr] = discriminate(gt, tgt_hm);
  ad::Var ones = ad::constant(Tensor::full(pr->value.shape(), 1.0));
  ad::Var zeros = ad::constant(Tensor::zeros(pf->value.shape()));
  return ad::scale(
      ad::add(ad::mse_loss(pr, ones), ad::mse_loss(pf, zeros)), 0.5);
}

Tensor Renderer::infer_rows(const RenderBatch &batch) const {
  require_trained();
  const int t = batch.face_lms.rows(), width = config_.image_size *
                                               config_.image_size * 3;
  Tensor out({t, width});
  for (int lo = 0; lo < t; lo += config_.frames_per_step) {
    const int hi = std::min(t, lo + config_.frames_per_step);
    RenderBatch chunk;
    chunk.refs = batch.refs;
    chunk.ref_lms = batch.ref_lms;
    chunk.face_lms = copy_rows(batch.face_lms, lo, hi);
    chunk.masked = copy_rows(batch.masked, lo, hi);
    Tensor rows = nchw_to_hwc_rows(render(chunk)->value);
    std::copy_n(rows.data(), rows.numel(),
                out.data() + static_cast<int64_t>(lo) * width);
  }
  return out;
}

void Renderer::require_trained() const {
  if (!trained_) throw UsageError("renderer: model is not trained");
}

RenderBatch build_render_batch(const datagen::Corpus &corpus, int target_clip,
                               int ref_clip, const std::vector<int> &frame_ids,
                               int n_refs, Rng &rng) {
  const datagen::SyntheticClip &tc =
      corpus.clips[static_cast<size_t>(target_clip)];
  Tensor tframes = corpus.clip_frames(target_clip);
  Tensor rframes = corpus.clip_frames(ref_clip);
  const Tensor &rlms = corpus.clips[static_cast<size_t>(ref_clip)].landmarks;
  const int t = static_cast<int>(frame_ids.size()), width = tframes.cols();
  RenderBatch b;
  b.gt = Tensor({t, width});
  b.face_lms = Tensor({t, tc.landmarks.cols()});
  for (int k = 0; k < t; ++k) {
    const int f = frame_ids[static_cast<size_t>(k)];
    std::copy_n(tframes.data() + static_cast<int64_t>(f) * width, width,
                b.gt.data() + static_cast<int64_t>(k) * width);
    std::copy_n(tc.landmarks.data() + static_cast<int64_t>(f) *
                    tc.landmarks.cols(),
                tc.landmarks.cols(),
                b.face_lms.data() + static_cast<int64_t>(k) *
                    tc.landmarks.cols());
  }
  b.masked = b.gt;
  mask_lower_half(&b.masked, datagen::kImageSize, datagen::kImageSize, 3);
  b.refs = Tensor({n_refs, width});
  b.ref_lms = Tensor({n_refs, rlms.cols()});
  for (int i = 0; i < n_refs; ++i) {
    const int f = rng.uniform_int(rframes.rows());
    std::copy_n(rframes.data() + static_cast<int64_t>(f) * width, width,
                b.refs.data() + static_cast<int64_t>(i) * width);
    std::copy_n(rlms.data() + static_cast<int64_t>(f) * rlms.cols(),
                rlms.cols(),
                b.ref_lms.data() + static_cast<int64_t>(i) * rlms.cols());
  }
  return b;
}

void Renderer::train_on_corpus(const datagen::Corpus &corpus) {
  const datagen::FactorSpec &spec = corpus.spec;
  if (config_.image_size != datagen::kImageSize)
    throw ConfigError("renderer: image_size must match the corpus frames");
  const int elo = 0, ehi = spec.num_emotions();
  const int chi = std::max(1, spec.num_contents - config_.heldout_contents);
  std::vector<std::array<int, 3>> pool;
  for (int i = 0; i < spec.num_identities; ++i)
    for (int c = 0; c < chi; ++c)
      for (int e = elo; e < ehi; ++e) pool.push_back({i, c, e});
  nn::Adam opt_g(params_g_, config_.lr_g), opt_d(params_d_, config_.lr_d);
  Rng sample = substream(config_.seed, "renderer_sample");
  int low_streak = 0;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    Rng order = substream(config_.seed, "renderer_order",
                          static_cast<uint64_t>(epoch));
    std::vector<int> perm = order.permutation(static_cast<int>(pool.size()));
    const int steps =
        std::min<int>(config_.clips_per_epoch, static_cast<int>(pool.size()));
    double e_total = 0.0, e_d = 0.0;
    for (int s = 0; s < steps; ++s) {
      const std::array<int, 3> &tgt = pool[static_cast<size_t>(perm[s])];
      const int target = corpus.index_of(tgt[0], tgt[1], tgt[2]);
      // References come from a random same-identity training clip of any
      // emotion, matching the cross-emotion inference setup.
      const int ref = corpus.index_of(tgt[0], sample.uniform_int(chi),
                                      sample.uniform_int(ehi - elo) + elo);
      const int t_total = corpus.clips[static_cast<size_t>(target)]
                              .landmarks.rows();
      std::vector<int> frames(static_cast<size_t>(config_.frames_per_step));
      for (int &f : frames) f = sample.uniform_int(t_total);
      RenderBatch batch = build_render_batch(corpus, target, ref, frames,
                                             config_.n_refs, sample);
      Tensor tgt_hm = stack_heatmaps(batch.face_lms, config_.image_size,
                                     config_.sigma);
      ad::Var hm = ad::constant(tgt_hm);
      ad::Var gt = ad::constant(
          hwc_rows_to_nchw(batch.gt, config_.image_size, config_.image_size,
                           3));
      ad::Var pred = render(batch);
      RenderLossParts parts;
      ad::Var g = generator_loss(pred, gt, hm, &parts);
      if (!std::isfinite(parts.total))
        throw StageError("renderer: non-finite generator loss");
      ad::backward(g);
      nn::clip_global_norm(params_g_, config_.clip_norm);
      opt_g.step();
      params_g_.zero_grad();
      params_d_.zero_grad();
      // Discriminator sees the prediction as data, on a fresh graph.
      ad::Var d = discriminator_loss(ad::constant(pred->value), gt, hm);
      const double d_val = d->value[0];
      if (!std::isfinite(d_val))
        throw StageError("renderer: non-finite discriminator loss");
      ad::backward(d);
      nn::clip_global_norm(params_d_, config_.clip_norm);
      opt_d.step();
      params_g_.zero_grad();
      params_d_.zero_grad();
      if (d_val < config_.collapse_eps) {
        if (++low_streak >= config_.collapse_patience) {
          std::printf("[renderer] discriminator collapse (loss %.3g); "
                      "halving its lr to %.3g\n",
                      d_val, 0.5 * opt_d.lr());
          opt_d.set_lr(0.5 * opt_d.lr());
          low_streak = 0;
        }
      } else {
        low_streak = 0;
      }
      history_.g_total.push_back(parts.total);
      history_.g_per.push_back(parts.l_per);
      history_.g_gan.push_back(parts.l_gan);
      history_.g_fm.push_back(parts.l_fm);
      history_.d_loss.push_back(d_val);
      e_total += parts.total;
      e_d += d_val;
    }
    std::printf("[renderer] epoch %d/%d g %.4f d %.4f\n", epoch + 1,
                config_.epochs, e_total / steps, e_d / steps);
  }
  trained_ = true;
}

void Renderer::save(const std::string &dir) const {
  CheckpointArchive a;
  a.set_module("renderer");
  a.set_seed(config_.seed);
  a.meta()["config"] = config_.to_json();
  a.meta()["trained"] = trained_;
  a.meta()["history"] = {{"g_total", history_.g_total},
                         {"g_per", history_.g_per},
                         {"g_gan", history_.g_gan},
                         {"g_fm", history_.g_fm},
                         {"d_loss", history_.d_loss}};
  for (const auto &kv : params_g_.state_dict()) a.put(kv.first, kv.second);
  for (const auto &kv : params_d_.state_dict()) a.put(kv.first, kv.second);
  for (const auto &kv : params_p_.state_dict()) a.put(kv.first, kv.second);
  a.save(dir);
}

Renderer Renderer::load(const std::string &dir) {
  CheckpointArchive a = CheckpointArchive::load(dir);
  if (a.module() != "renderer")
    throw FormatError(dir + ": checkpoint module '" + a.module() +
                      "' is not 'renderer'");
  Renderer r(RendererConfig::from_json(a.meta().at("config")));
  r.params_g_.load_state_dict(a.tensors());
  r.params_d_.load_state_dict(a.tensors());
  r.params_p_.load_state_dict(a.tensors());
  r.trained_ = a.meta().value("trained", false);
  if (a.meta().contains("history")) {
    const nlohmann::json &h = a.meta()["history"];
    r.history_.g_total = h.value("g_total", std::vector<double>{});
    r.history_.g_per = h.value("g_per", std::vector<double>{});
    r.history_.g_gan = h.value("g_gan", std::vector<double>{});
    r.history_.g_fm = h.value("g_fm", std::vector<double>{});
    r.history_.d_loss = h.value("d_loss", std::vector<double>{});
  }
  return r;
}

Renderer train_renderer(const datagen::Corpus &corpus,
                        const RendererConfig &config) {
  Renderer r(config);
  r.train_on_corpus(corpus);
  return r;
}

}  // namespace renderer
}  // namespace cemnet
