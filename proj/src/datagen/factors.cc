// datagen/factors.cc

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
#include <set>

#include "cemnet/core/error.h"
#include "cemnet/datagen/datagen.h"

namespace cemnet {
namespace datagen {

static constexpr double kPi = 3.14159265358979323846;
static constexpr double kTwoPi = 2.0 * kPi;

void FactorSpec::validate() const {
  if (num_identities < 2) throw ConfigError("FactorSpec: num_identities >= 2");
  if (num_contents < 2) throw ConfigError("FactorSpec: num_contents >= 2");
  if (emotions.size() != 8)
    throw ConfigError("FactorSpec: exactly 8 emotions required");
  std::set<std::string> uniq(emotions.begin(), emotions.end());
  if (uniq.size() != emotions.size())
    throw ConfigError("FactorSpec: emotion labels must be distinct");
  if (video_fps < 1 || audio_feature_fps < 1)
    throw ConfigError("FactorSpec: fps must be positive");
  if (audio_feature_fps % video_fps != 0)
    throw ConfigError(
        "FactorSpec: audio_feature_fps must be a multiple of video_fps");
  if (feature_bins != 26)
    throw ConfigError("FactorSpec: feature_bins must be 26");
}

static void normalize_to(double *v, int n, double scale) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += v[i] * v[i];
  s = std::sqrt(s);
  if (s < 1e-12) s = 1.0;
  for (int i = 0; i < n; ++i) v[i] = v[i] / s * scale;
}

// Fixed per-slot emotion templates (slot 0 is the neutral reference).
// Mouth block indices: 0 left corner, 1..5 upper outer (3 = top), 6 right
// corner, 7..11 lower outer (9 = bottom), 12..19 inner ring (12 left,
// 14 top, 16 right, 18 bottom).
static void emotion_templates(int e, Tensor *mouth, Tensor *brow) {
  *mouth = Tensor({kMouthPoints, 2});
  *brow = Tensor({10, 2});
  Tensor &m = *mouth;
  Tensor &b = *brow;
  auto corner_dy = [&](double d) {
    m.at(0, 1) += d;
    m.at(6, 1) += d;
    m.at(12, 1) += 0.8 * d;
    m.at(16, 1) += 0.8 * d;
  };
  auto corner_dx = [&](double d) {  // positive widens
    m.at(0, 0) -= d;
    m.at(6, 0) += d;
    m.at(12, 0) -= 0.8 * d;
    m.at(16, 0) += 0.8 * d;
  };
  auto upper_dy = [&](double d) {
    for (int j = 1; j <= 5; ++j) m.at(j, 1) += d;
    for (int j : {13, 14, 15}) m.at(j, 1) += 0.8 * d;
  };
  auto lower_dy = [&](double d) {
    for (int j = 7; j <= 11; ++j) m.at(j, 1) += d;
    for (int j : {17, 18, 19}) m.at(j, 1) += 0.8 * d;
  };
  auto brow_dy = [&](double d) {
    for (int j = 0; j < 10; ++j) b.at(j, 1) += d;
  };
  auto brow_inner_dy = [&](double d) {  // nose-side ends: 3,4 and 5,6
    for (int j : {3, 4, 5, 6}) b.at(j, 1) += d;
  };
  switch (e) {
    case 0:  // neutral
      break;
    case 1:  // angry: pressed, corners down, brows knit downward
      corner_dy(0.050);
      corner_dx(-0.020);
      upper_dy(0.016);
      lower_dy(-0.016);
      brow_dy(0.034);
      brow_inner_dy(0.020);
      break;
    case 2:  // contempt: tight slight raise
      corner_dy(-0.027);
      corner_dx(-0.027);
      upper_dy(-0.010);
      brow_dy(0.007);
      break;
    case 3:  // disgusted: raised upper lip
      upper_dy(-0.044);
      corner_dy(0.017);
      corner_dx(0.010);
      brow_dy(0.024);
      break;
    case 4:  // fear: horizontal stretch, raised brows
      corner_dx(0.037);
      corner_dy(0.020);
      upper_dy(0.017);
      lower_dy(0.024);
      brow_dy(-0.037);
      break;
    case 5:  // happy: corners up and wide
      corner_dy(-0.058);
      corner_dx(0.030);
      upper_dy(-0.010);
      lower_dy(-0.007);
      brow_dy(-0.010);
      break;
    case 6:  // sad: corners down, inner brows up
      corner_dy(0.050);
      corner_dx(-0.020);
      lower_dy(0.020);
      brow_dy(0.007);
      brow_inner_dy(-0.031);
      break;
    case 7:  // surprised: tall open mouth, high brows
      upper_dy(-0.024);
      lower_dy(0.041);
      corner_dx(-0.017);
      brow_dy(-0.051);
      break;
    default:
      throw ConfigError("emotion slot out of range");
  }
}

Generator::Generator(const FactorSpec &spec) : spec_(spec) {
  spec_.validate();
  ids_.resize(static_cast<size_t>(spec_.num_identities));
  for (int j = 0; j < spec_.num_identities; ++j) {
    Rng r = substream(spec_.seed, "identity", static_cast<uint64_t>(j));
    IdentityFactors &f = ids_[static_cast<size_t>(j)];
    f.face_w = r.uniform(0.92, 1.08);
    f.face_h = r.uniform(0.92, 1.08);
    f.mouth_w = r.uniform(0.90, 1.10);
    f.mouth_y = r.uniform(-0.015, 0.015);
    f.eye_dx = r.uniform(0.92, 1.08);
    f.brow_dy = r.uniform(-0.015, 0.015);
    f.emotion_scale = r.uniform(0.7, 1.3);
    for (auto &t : f.timbre) t = r.normal();
    normalize_to(f.timbre.data(), 6, 1.5);
    auto color = [&](double cr, double cg, double cb, double amp,
                     std::array<double, 3> *out) {
      (*out)[0] = std::clamp(cr + r.uniform(-amp, amp), 0.05, 0.95);
      (*out)[1] = std::clamp(cg + r.uniform(-amp, amp), 0.05, 0.95);
      (*out)[2] = std::clamp(cb + r.uniform(-amp, amp), 0.05, 0.95);
    };
    color(0.76, 0.62, 0.50, 0.15, &f.skin);
    color(0.55, 0.25, 0.25, 0.10, &f.lip);
    color(0.20, 0.30, 0.50, 0.20, &f.iris);
    color(0.12, 0.14, 0.18, 0.08, &f.bg);
  }

  contents_.resize(static_cast<size_t>(spec_.num_contents));
  for (int k = 0; k < spec_.num_contents; ++k) {
    Rng r = substream(spec_.seed, "content", static_cast<uint64_t>(k));
    ContentFactors &f = contents_[static_cast<size_t>(k)];
    for (int h = 0; h < 3; ++h) {
      f.o_amp[h] = r.uniform(0.07, 0.14);
      f.o_freq[h] = (h + 1) + r.uniform(-0.35, 0.35);
      f.o_ph[h] = r.uniform(0.0, kTwoPi);
      f.w_amp[h] = r.uniform(0.05, 0.10);
      f.w_freq[h] = (h + 1) + r.uniform(-0.35, 0.35);
      f.w_ph[h] = r.uniform(0.0, kTwoPi);
    }
    for (auto &s : f.signature) s = r.normal();
    normalize_to(f.signature.data(), 10, 1.0);
  }

  emotions_.resize(static_cast<size_t>(spec_.num_emotions()));
  for (int e = 0; e < spec_.num_emotions(); ++e) {
    Rng r = substream(spec_.seed, "emotion", static_cast<uint64_t>(e));
    EmotionFactors &f = emotions_[static_cast<size_t>(e)];
    emotion_templates(e, &f.mouth_field, &f.brow_field);
    for (auto &p : f.prosody) p = r.normal();
    if (e == 0)
      f.prosody = {0, 0, 0, 0, 0, 0};
    else
      normalize_to(f.prosody.data(), 6, 1.0);
    f.mod_freq = r.uniform(1.5, 4.5);
    f.mod_phase = r.uniform(0.0, kTwoPi);
  }
}

double Generator::opening(int content, double u) const {
  const ContentFactors &f = contents_[static_cast<size_t>(content)];
  double v = 0.40;
  for (int h = 0; h < 3; ++h)
    v += f.o_amp[h] * std::sin(kTwoPi * f.o_freq[h] * u + f.o_ph[h]);
  return std::clamp(v, 0.02, 0.98);
}

double Generator::widening(int content, double u) const {
  const ContentFactors &f = contents_[static_cast<size_t>(content)];
  double v = 0.0;
  for (int h = 0; h < 3; ++h)
    v += f.w_amp[h] * std::sin(kTwoPi * f.w_freq[h] * u + f.w_ph[h]);
  return std::clamp(v, -0.45, 0.45);
}

double Generator::opening_rate(int content, double u) const {
  const ContentFactors &f = contents_[static_cast<size_t>(content)];
  double v = 0.0;
  for (int h = 0; h < 3; ++h)
    v += f.o_amp[h] * kTwoPi * f.o_freq[h] *
         std::cos(kTwoPi * f.o_freq[h] * u + f.o_ph[h]);
  return v / 4.0;
}

double Generator::widening_rate(int content, double u) const {
  const ContentFactors &f = contents_[static_cast<size_t>(content)];
  double v = 0.0;
  for (int h = 0; h < 3; ++h)
    v += f.w_amp[h] * kTwoPi * f.w_freq[h] *
         std::cos(kTwoPi * f.w_freq[h] * u + f.w_ph[h]);
  return v / 4.0;
}

void Generator::base_face(int identity, double *pts) const {
  const IdentityFactors &f = ids_[static_cast<size_t>(identity)];
  const double cx = 0.5, cy = 0.50;
  const double W0 = 0.30 * f.face_w, Hj = 0.34 * f.face_h;
  auto set = [&](int i, double x, double y) {
    pts[2 * i] = x;
    pts[2 * i + 1] = y;
  };
  // Jaw 0..16: lower half-ellipse, ear to ear through the chin.
  for (int i = 0; i <= 16; ++i) {
    double t = i / 16.0;
    set(i, cx - W0 * std::cos(kPi * t), cy + Hj * std::sin(kPi * t));
  }
  // Brows 17..21 (left), 22..26 (right), mild arcs.
  const double brow_y = cy - 0.175 * f.face_h + f.brow_dy;
  for (int i = 0; i < 5; ++i) {
    double s = i / 4.0;
    double arc = 0.018 * std::sin(kPi * s);
    set(17 + i, cx - (0.21 - 0.15 * s) * f.face_w, brow_y - arc);
    set(22 + i, cx + (0.06 + 0.15 * s) * f.face_w, brow_y - arc);
  }
  // Nose bridge 27..30 and base 31..35.
  for (int i = 0; i < 4; ++i)
    set(27 + i, cx, cy - 0.10 * f.face_h + (i / 3.0) * 0.14 * f.face_h);
  for (int i = 0; i < 5; ++i) {
    double s = i / 4.0;
    set(31 + i, cx + (s - 0.5) * 0.09 * f.face_w,
        cy + 0.065 * f.face_h + 0.008 * std::sin(kPi * s));
  }
  // Eyes 36..41 (left), 42..47 (right): hexagons.
  const double ecy = cy - 0.095 * f.face_h;
  const double ex = 0.125 * f.face_w * f.eye_dx;
  const double erx = 0.048 * f.face_w, ery = 0.020 * f.face_h;
  const double eang[6] = {180, 120, 60, 0, 300, 240};
  for (int i = 0; i < 6; ++i) {
    double th = eang[i] * kPi / 180.0;
    set(36 + i, cx - ex + erx * std::cos(th), ecy - ery * std::sin(th));
    set(42 + i, cx + ex + erx * std::cos(th), ecy - ery * std::sin(th));
  }
  // Mouth: outer ring 48..59, inner ring 60..67.
  const double mcy = cy + 0.195 * f.face_h + f.mouth_y;
  const double rx = 0.085 * f.mouth_w * f.face_w, ry = 0.034;
  for (int j = 0; j < 12; ++j) {
    double th = kPi - j * (kTwoPi / 12.0);
    set(48 + j, cx + rx * std::cos(th), mcy - ry * std::sin(th));
  }
  const double rxi = 0.55 * rx, ryi = 0.006;
  for (int j = 0; j < 8; ++j) {
    double th = kPi - j * (kTwoPi / 8.0);
    set(60 + j, cx + rxi * std::cos(th), mcy - ryi * std::sin(th));
  }
}

void Generator::landmarks_at(int identity, int content, int emotion, double u,
                             double *pts) const {
  const IdentityFactors &f = ids_[static_cast<size_t>(identity)];
  base_face(identity, pts);
  const double o = opening(content, u);
  const double w = widening(content, u);
  const double cx = 0.5;
  const double mcy = 0.50 + 0.195 * f.face_h + f.mouth_y;
  const double ry = 0.034, ryi_base = 0.006;

  // Articulation: widen around the mouth center, open the lower lip and
  // the inner ring, drop the chin.
  for (int i = kMouthStart; i < kNumPoints; ++i)
    pts[2 * i] = cx + (pts[2 * i] - cx) * (1.0 + 0.35 * w);
  for (int j = 7; j <= 11; ++j) {  // lower outer lip
    double th = kPi - j * (kTwoPi / 12.0);
    double drop = ry * 1.3 * o * (-std::sin(th));
    pts[2 * (48 + j) + 1] += drop;
  }
  for (int j = 0; j < 8; ++j) {  // inner ring opens around its midline
    double th = kPi - j * (kTwoPi / 8.0);
    double ryi = ryi_base + 0.030 * o;
    pts[2 * (60 + j) + 1] = mcy - ryi * std::sin(th);
  }
  for (int i = 0; i <= 16; ++i) {  // chin drop with falloff from the center
    double fall = std::exp(-std::pow((i - 8) / 3.5, 2.0));
    pts[2 * i + 1] += 0.035 * o * fall;
  }

  // Static emotion displacement, identity-scaled.
  const EmotionFactors &em = emotions_[static_cast<size_t>(emotion)];
  const double s = f.emotion_scale;
  for (int j = 0; j < kMouthPoints; ++j) {
    pts[2 * (kMouthStart + j)] += s * em.mouth_field.at(j, 0);
    pts[2 * (kMouthStart + j) + 1] += s * em.mouth_field.at(j, 1);
  }
  for (int j = 0; j < 10; ++j) {
    pts[2 * (kBrowStart + j)] += s * em.brow_field.at(j, 0);
    pts[2 * (kBrowStart + j) + 1] += s * em.brow_field.at(j, 1);
  }

  // Rigid head wobble keyed to the (identity, content) timing stream so
  // emotion differences cancel it exactly.
  Rng tr = substream(spec_.seed, "timing",
                     static_cast<uint64_t>(identity) * spec_.num_contents +
                         content);
  (void)tr.uniform(0.8, 1.25);  // jitter draw, order fixed
  const double wf = tr.uniform(0.5, 1.5);
  const double wp = tr.uniform(0.0, kTwoPi);
  const double dx = 0.004 * std::sin(kTwoPi * wf * u + wp);
  const double dy = 0.003 * std::cos(kTwoPi * wf * u + 1.7 * wp);
  for (int i = 0; i < kNumPoints; ++i) {
    pts[2 * i] = std::clamp(pts[2 * i] + dx, 0.01, 0.99);
    pts[2 * i + 1] = std::clamp(pts[2 * i + 1] + dy, 0.01, 0.99);
  }
}

double Generator::length_jitter(int identity, int content) const {
  Rng tr = substream(spec_.seed, "timing",
                     static_cast<uint64_t>(identity) * spec_.num_contents +
                         content);
  return tr.uniform(0.8, 1.25);
}

int Generator::video_frames_of(int identity, int content) const {
  int t = static_cast<int>(
      std::llround(kBaseVideoFrames * length_jitter(identity, content)));
  return std::max(6, t);
}

Tensor Generator::emotion_displacement(int emotion, int identity) const {
  const double s = ids_[static_cast<size_t>(identity)].emotion_scale;
  Tensor out({kMouthPoints, 2});
  const Tensor &m = emotions_[static_cast<size_t>(emotion)].mouth_field;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = s * m[i];
  return out;
}

Tensor Generator::brow_displacement(int emotion, int identity) const {
  const double s = ids_[static_cast<size_t>(identity)].emotion_scale;
  Tensor out({10, 2});
  const Tensor &b = emotions_[static_cast<size_t>(emotion)].brow_field;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = s * b[i];
  return out;
}

Tensor Generator::clean_landmarks(int emotion, int identity, int content,
                                  int video_frames) const {
  Tensor lm({video_frames, kNumPoints * 2});
  for (int t = 0; t < video_frames; ++t) {
    double u = (t + 0.5) / video_frames;
    landmarks_at(identity, content, emotion, u, lm.data() + 2 * kNumPoints * t);
  }
  return lm;
}

Tensor Generator::clean_audio(int emotion, int identity, int content,
                              int audio_frames) const {
  const IdentityFactors &idf = ids_[static_cast<size_t>(identity)];
  const ContentFactors &cf = contents_[static_cast<size_t>(content)];
  const EmotionFactors &ef = emotions_[static_cast<size_t>(emotion)];
  Tensor a({audio_frames, spec_.feature_bins});
  for (int t = 0; t < audio_frames; ++t) {
    double u = (t + 0.5) / audio_frames;
    const double o = opening(content, u);
    a.at(t, 0) = o;
    a.at(t, 1) = widening(content, u);
    a.at(t, 2) = opening_rate(content, u);
    a.at(t, 3) = widening_rate(content, u);
    for (int b = 0; b < 10; ++b)
      a.at(t, 4 + b) = cf.signature[static_cast<size_t>(b)] * (0.9 + 0.1 * o);
    for (int b = 0; b < 6; ++b)
      a.at(t, 14 + b) = idf.timbre[static_cast<size_t>(b)];
    const double mod =
        1.0 + 0.3 * std::sin(kTwoPi * ef.mod_freq * u + ef.mod_phase);
    for (int b = 0; b < 6; ++b)
      a.at(t, 20 + b) = 0.9 * ef.prosody[static_cast<size_t>(b)] * mod;
  }
  return a;
}

SyntheticClip Generator::make_clip(int identity, int content, int emotion,
                                   bool with_frames) const {
  if (identity < 0 || identity >= spec_.num_identities ||
      content < 0 || content >= spec_.num_contents || emotion < 0 ||
      emotion >= spec_.num_emotions())
    throw InputError("make_clip: factor index out of range");
  SyntheticClip clip;
  clip.identity_id = identity;
  clip.content_id = content;
  clip.emotion_id = emotion;
  clip.clip_id = (identity * spec_.num_contents + content) *
                     spec_.num_emotions() + emotion;
  clip.length_jitter = length_jitter(identity, content);
  const int T = video_frames_of(identity, content);
  const int F = spec_.audio_per_video() * T;

  clip.landmarks = clean_landmarks(emotion, identity, content, T);
  clip.audio = clean_audio(emotion, identity, content, F);
  clip.emotion_displacement_gt = emotion_displacement(emotion, identity);

  Rng nr = substream(spec_.seed, "clipnoise",
                     static_cast<uint64_t>(clip.clip_id));
  for (int64_t i = 0; i < clip.landmarks.numel(); ++i)
    clip.landmarks[i] = std::clamp(
        clip.landmarks[i] + nr.normal() * kLandmarkNoise, 0.0, 1.0);
  for (int64_t i = 0; i < clip.audio.numel(); ++i)
    clip.audio[i] += nr.normal() * kAudioNoise;

  if (with_frames) {
    clip.frames = Tensor({T, kFrameValues});
    for (int t = 0; t < T; ++t) {
      Tensor frame =
          render_frame(clip.landmarks.data() + 2 * kNumPoints * t, identity);
      std::copy_n(frame.data(), kFrameValues,
                  clip.frames.data() + static_cast<int64_t>(t) * kFrameValues);
    }
  }
  return clip;
}

// ---- procedural rasterizer ----

namespace {

// Supersampled RGB canvas, HWC layout, values in [0,1].
struct Raster {
  int size;
  std::vector<double> px;  // size*size*3

  explicit Raster(int s) : size(s), px(static_cast<size_t>(s) * s * 3) {}

  void fill(double r, double g, double b) {
    for (size_t i = 0; i < px.size(); i += 3) {
      px[i] = r;
      px[i + 1] = g;
      px[i + 2] = b;
    }
  }
  void set(int x, int y, const double *c) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    double *p = &px[(static_cast<size_t>(y) * size + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  // Even-odd scanline polygon fill; xy is pixel-space vertex pairs.
  void fill_poly(const std::vector<double> &xy, const double *c) {
    const size_t n = xy.size() / 2;
    if (n < 3) return;
    double ymin = 1e9, ymax = -1e9;
    for (size_t i = 0; i < n; ++i) {
      ymin = std::min(ymin, xy[2 * i + 1]);
      ymax = std::max(ymax, xy[2 * i + 1]);
    }
    int y0 = std::max(0, static_cast<int>(std::floor(ymin)));
    int y1 = std::min(size - 1, static_cast<int>(std::ceil(ymax)));
    std::vector<double> xs;
    for (int y = y0; y <= y1; ++y) {
      const double yc = y + 0.5;
      xs.clear();
      for (size_t i = 0; i < n; ++i) {
        size_t j = (i + 1) % n;
        double ya = xy[2 * i + 1], yb = xy[2 * j + 1];
        if ((ya <= yc && yb > yc) || (yb <= yc && ya > yc)) {
          double t = (yc - ya) / (yb - ya);
          xs.push_back(xy[2 * i] + t * (xy[2 * j] - xy[2 * i]));
        }
      }
      std::sort(xs.begin(), xs.end());
      for (size_t i = 0; i + 1 < xs.size(); i += 2) {
        int xa = std::max(0, static_cast<int>(std::ceil(xs[i] - 0.5)));
        int xb = std::min(size - 1,
                          static_cast<int>(std::floor(xs[i + 1] - 0.5)));
        for (int x = xa; x <= xb; ++x) set(x, y, c);
      }
    }
  }
  void fill_ellipse(double cx, double cy, double rx, double ry,
                    const double *c) {
    std::vector<double> xy;
    for (int i = 0; i < 16; ++i) {
      double th = kTwoPi * i / 16.0;
      xy.push_back(cx + rx * std::cos(th));
      xy.push_back(cy + ry * std::sin(th));
    }
    fill_poly(xy, c);
  }
  void thick_polyline(const std::vector<double> &xy, double w,
                      const double *c) {
    for (size_t i = 0; i + 3 < xy.size(); i += 2) {
      double x0 = xy[i], y0 = xy[i + 1], x1 = xy[i + 2], y1 = xy[i + 3];
      double dx = x1 - x0, dy = y1 - y0;
      double len = std::sqrt(dx * dx + dy * dy);
      if (len < 1e-9) continue;
      double nx = -dy / len * w * 0.5, ny = dx / len * w * 0.5;
      fill_poly({x0 + nx, y0 + ny, x1 + nx, y1 + ny, x1 - nx, y1 - ny,
                 x0 - nx, y0 - ny},
                c);
    }
  }
};

}  // namespace

Tensor Generator::render_frame(const double *lm, int identity) const {
  const IdentityFactors &f = ids_[static_cast<size_t>(identity)];
  const int S = kImageSize * 2;  // 2x supersampling
  Raster r(S);
  r.fill(f.bg[0], f.bg[1], f.bg[2]);

  auto X = [&](int i) { return lm[2 * i] * (S - 1); };
  auto Y = [&](int i) { return lm[2 * i + 1] * (S - 1); };

  // Face region: jaw contour plus a forehead arc derived from landmarks.
  {
    std::vector<double> poly;
    for (int i = 0; i <= 16; ++i) {
      poly.push_back(X(i));
      poly.push_back(Y(i));
    }
    double lx = X(0), ly = Y(0), rx = X(16), ry_ = Y(16);
    double cx = 0.5 * (lx + rx), cy = 0.5 * (ly + ry_);
    double halfw = 0.5 * (rx - lx);
    double brow_y = 0.0;
    for (int i = 17; i <= 26; ++i) brow_y += Y(i);
    brow_y /= 10.0;
    double ht = 2.1 * (cy - brow_y);
    for (int s = 1; s < 8; ++s) {  // right ear over the top to left ear
      double t = s / 8.0;
      poly.push_back(cx + halfw * std::cos(kPi * t));
      poly.push_back(cy - ht * std::sin(kPi * t));
    }
    r.fill_poly(poly, f.skin.data());
  }

  // Nose.
  {
    const double dark[3] = {f.skin[0] * 0.82, f.skin[1] * 0.82,
                            f.skin[2] * 0.82};
    std::vector<double> bridge;
    for (int i = 27; i <= 30; ++i) {
      bridge.push_back(X(i));
      bridge.push_back(Y(i));
    }
    r.thick_polyline(bridge, 2.2, dark);
    std::vector<double> base;
    for (int i = 31; i <= 35; ++i) {
      base.push_back(X(i));
      base.push_back(Y(i));
    }
    r.thick_polyline(base, 2.0, dark);
  }

  // Brows.
  {
    const double dark[3] = {0.15, 0.10, 0.08};
    std::vector<double> l, rt;
    for (int i = 17; i <= 21; ++i) {
      l.push_back(X(i));
      l.push_back(Y(i));
    }
    for (int i = 22; i <= 26; ++i) {
      rt.push_back(X(i));
      rt.push_back(Y(i));
    }
    r.thick_polyline(l, 3.4, dark);
    r.thick_polyline(rt, 3.4, dark);
  }

  // Eyes: white hexagon plus iris at the centroid.
  {
    const double white[3] = {0.93, 0.93, 0.92};
    for (int eye = 0; eye < 2; ++eye) {
      const int base = 36 + 6 * eye;
      std::vector<double> poly;
      double cx = 0, cy = 0;
      for (int i = 0; i < 6; ++i) {
        poly.push_back(X(base + i));
        poly.push_back(Y(base + i));
        cx += X(base + i);
        cy += Y(base + i);
      }
      cx /= 6;
      cy /= 6;
      r.fill_poly(poly, white);
      double w = std::fabs(X(base + 3) - X(base)) * 0.30;
      r.fill_ellipse(cx, cy, w, w, f.iris.data());
    }
  }

  // Mouth: outer lips, then the inner opening.
  {
    std::vector<double> outer, inner;
    for (int j = 0; j < 12; ++j) {
      outer.push_back(X(48 + j));
      outer.push_back(Y(48 + j));
    }
    for (int j = 0; j < 8; ++j) {
      inner.push_back(X(60 + j));
      inner.push_back(Y(60 + j));
    }
    const double cavity[3] = {0.10, 0.04, 0.04};
    r.fill_poly(outer, f.lip.data());
    r.fill_poly(inner, cavity);
  }

  // Box-downsample to 64x64, HWC.
  Tensor out({1, kFrameValues});
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            s += r.px[(static_cast<size_t>(2 * y + dy) * S + 2 * x + dx) * 3 +
                      c];
        out[(static_cast<int64_t>(y) * kImageSize + x) * 3 + c] =
            std::clamp(s / 4.0, 0.0, 1.0);
      }
  return out;
}

}  // namespace datagen
}  // namespace cemnet
