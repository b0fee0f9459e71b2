// eval/metrics.cc

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
#include <string>
#include <vector>

#include "cemnet/core/error.h"
#include "cemnet/eval/metrics.h"

namespace cemnet {
namespace eval {

namespace {

constexpr double kPsnrCap = 99.0;
constexpr int kSsimWindow = 7;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

void check_pair(const Tensor &a, const Tensor &b, const char *op) {
  if (a.rank() != 2 || b.rank() != 2)
    throw InputError(std::string(op) + ": expected rank-2 inputs, got " +
                     a.shape_str() + " and " + b.shape_str());
  if (!a.same_shape(b))
    throw InputError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  if (a.numel() == 0)
    throw InputError(std::string(op) + ": empty input");
}

// 7x7 Gaussian window, normalized to sum 1.
std::vector<double> ssim_kernel() {
  std::vector<double> k(kSsimWindow * kSsimWindow);
  const int r = kSsimWindow / 2;
  double sum = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      double v = std::exp(-(dy * dy + dx * dx) / (2.0 * kSsimSigma * kSsimSigma));
      k[(dy + r) * kSsimWindow + (dx + r)] = v;
      sum += v;
    }
  for (double &v : k) v /= sum;
  return k;
}

// Mean SSIM of one channel plane over all fully-valid window positions.
double ssim_plane(const std::vector<double> &a, const std::vector<double> &b,
                  int h, int w, const std::vector<double> &kern) {
  const int r = kSsimWindow / 2;
  double total = 0.0;
  int count = 0;
  for (int y = r; y < h - r; ++y) {
    for (int x = r; x < w - r; ++x) {
      double ma = 0.0, mb = 0.0, maa = 0.0, mbb = 0.0, mab = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          double kw = kern[(dy + r) * kSsimWindow + (dx + r)];
          double va = a[(y + dy) * w + (x + dx)];
          double vb = b[(y + dy) * w + (x + dx)];
          ma += kw * va;
          mb += kw * vb;
          maa += kw * va * va;
          mbb += kw * vb * vb;
          mab += kw * va * vb;
        }
      }
      double var_a = maa - ma * ma;
      double var_b = mbb - mb * mb;
      double cov = mab - ma * mb;
      double num = (2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2);
      double den = (ma * ma + mb * mb + kSsimC1) * (var_a + var_b + kSsimC2);
      total += num / den;
      ++count;
    }
  }
  return total / count;
}

double cosine(const double *a, const double *b, int d) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < d; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double den = std::sqrt(na) * std::sqrt(nb);
  if (den < 1e-12) return 0.0;
  return dot / den;
}

// Range check runs against the probability tensor, after the encoder call:
// an untrained encoder must surface as UsageError, not as a label complaint.
void check_expected_emotion(int expected, int num_emotions) {
  if (expected < 0 || expected >= num_emotions)
    throw InputError("expected_emotion " + std::to_string(expected) +
                     " out of range [0, " + std::to_string(num_emotions) +
                     ")");
}

}  // namespace

double psnr(const Tensor &a, const Tensor &b) {
  check_pair(a, b, "psnr");
  double mse = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor &a, const Tensor &b, int h, int w, int c) {
  check_pair(a, b, "ssim");
  if (a.cols() != h * w * c)
    throw InputError("ssim: rows have " + std::to_string(a.cols()) +
                     " values, expected h*w*c = " + std::to_string(h * w * c));
  if (h < kSsimWindow || w < kSsimWindow)
    throw InputError("ssim: image smaller than the 7x7 window");
  static const std::vector<double> kern = ssim_kernel();
  std::vector<double> pa(h * w), pb(h * w);
  double total = 0.0;
  for (int n = 0; n < a.rows(); ++n) {
    const double *ra = a.data() + static_cast<int64_t>(n) * a.cols();
    const double *rb = b.data() + static_cast<int64_t>(n) * b.cols();
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < h * w; ++i) {
        pa[i] = ra[i * c + ch];
        pb[i] = rb[i * c + ch];
      }
      total += ssim_plane(pa, pb, h, w, kern);
    }
  }
  return total / (static_cast<double>(a.rows()) * c);
}

double m_lmd(const Tensor &pred, const Tensor &gt) {
  check_pair(pred, gt, "m_lmd");
  if (pred.cols() % 2 != 0)
    throw InputError("m_lmd: expected (x, y) pairs per row, got " +
                     std::to_string(pred.cols()) + " columns");
  const int points = pred.cols() / 2;
  double total = 0.0;
  for (int t = 0; t < pred.rows(); ++t) {
    for (int p = 0; p < points; ++p) {
      double dx = pred.at(t, 2 * p) - gt.at(t, 2 * p);
      double dy = pred.at(t, 2 * p + 1) - gt.at(t, 2 * p + 1);
      total += std::sqrt(dx * dx + dy * dy);
    }
  }
  return total / (static_cast<double>(pred.rows()) * points);
}

Tensor lower_half_rows(const Tensor &frames, int h, int w, int c) {
  if (frames.rank() != 2 || frames.cols() != h * w * c)
    throw InputError("lower_half_rows: expected [N, " +
                     std::to_string(h * w * c) + "], got " +
                     frames.shape_str());
  const int y0 = h / 2;
  Tensor out({frames.rows(), (h - y0) * w * c});
  for (int n = 0; n < frames.rows(); ++n) {
    const double *src =
        frames.data() + static_cast<int64_t>(n) * frames.cols() + static_cast<int64_t>(y0) * w * c;
    std::copy(src, src + static_cast<int64_t>(h - y0) * w * c,
              out.data() + static_cast<int64_t>(n) * out.cols());
  }
  return out;
}

double emotion_accuracy(const Tensor &frames, int expected_emotion,
                        const visenc::VisualEncoders &enc) {
  if (frames.rows() == 0) throw InputError("emotion_accuracy: empty slice");
  Tensor probs = enc.emotion_probs(frames);
  check_expected_emotion(expected_emotion, probs.cols());
  double total = 0.0;
  for (int n = 0; n < probs.rows(); ++n) total += probs.at(n, expected_emotion);
  return 100.0 * total / probs.rows();
}

double emotion_top1(const Tensor &frames, int expected_emotion,
                    const visenc::VisualEncoders &enc) {
  if (frames.rows() == 0) throw InputError("emotion_top1: empty slice");
  Tensor probs = enc.emotion_probs(frames);
  check_expected_emotion(expected_emotion, probs.cols());
  int hits = 0;
  for (int n = 0; n < probs.rows(); ++n) {
    int best = 0;
    for (int e = 1; e < probs.cols(); ++e)
      if (probs.at(n, e) > probs.at(n, best)) best = e;
    if (best == expected_emotion) ++hits;
  }
  return 100.0 * hits / probs.rows();
}

double csim(const Tensor &frames, const Tensor &reference_frames,
            const visenc::VisualEncoders &enc) {
  if (frames.rows() == 0 || reference_frames.rows() == 0)
    throw InputError("csim: empty input");
  Tensor e = enc.identity_embed(frames);
  Tensor r = enc.identity_embed(reference_frames);
  double total = 0.0;
  if (e.rows() == r.rows()) {
    for (int n = 0; n < e.rows(); ++n)
      total += cosine(e.data() + static_cast<int64_t>(n) * e.cols(),
                      r.data() + static_cast<int64_t>(n) * r.cols(), e.cols());
  } else {
    std::vector<double> mean(r.cols(), 0.0);
    for (int n = 0; n < r.rows(); ++n)
      for (int d = 0; d < r.cols(); ++d) mean[d] += r.at(n, d) / r.rows();
    for (int n = 0; n < e.rows(); ++n)
      total += cosine(e.data() + static_cast<int64_t>(n) * e.cols(),
                      mean.data(), e.cols());
  }
  return total / e.rows();
}

Tensor emotion_proportion(const Tensor &frames,
                          const visenc::VisualEncoders &enc) {
  if (frames.rows() == 0) throw InputError("emotion_proportion: empty slice");
  Tensor probs = enc.emotion_probs(frames);
  Tensor out({1, probs.cols()});
  for (int n = 0; n < probs.rows(); ++n)
    for (int e = 0; e < probs.cols(); ++e)
      out.at(0, e) += probs.at(n, e) / probs.rows();
  return out;
}

double identity_deterioration(const Tensor &edited, const Tensor &original,
                              const visenc::VisualEncoders &enc) {
  if (edited.rows() == 0) throw InputError("identity_deterioration: empty input");
  if (edited.rows() != original.rows())
    throw InputError("identity_deterioration: frame counts differ (" +
                     std::to_string(edited.rows()) + " vs " +
                     std::to_string(original.rows()) + ")");
  Tensor e = enc.identity_embed(edited);
  Tensor o = enc.identity_embed(original);
  double total = 0.0;
  for (int n = 0; n < e.rows(); ++n)
    total += cosine(e.data() + static_cast<int64_t>(n) * e.cols(),
                    o.data() + static_cast<int64_t>(n) * o.cols(), e.cols());
  return 1.0 - total / e.rows();
}

nlohmann::json MetricReport::to_json() const {
  return nlohmann::json{{"psnr", psnr},
                        {"ssim", ssim},
                        {"m_lmd", m_lmd},
                        {"ea", ea},
                        {"ea_top1", ea_top1},
                        {"csim", csim},
                        {"identity_deterioration", identity_deterioration},
                        {"num_clips", num_clips},
                        {"per_clip", per_clip}};
}

MetricReport MetricReport::from_json(const nlohmann::json &j) {
  MetricReport r;
  r.psnr = j.value("psnr", 0.0);
  r.ssim = j.value("ssim", 0.0);
  r.m_lmd = j.value("m_lmd", 0.0);
  r.ea = j.value("ea", 0.0);
  r.ea_top1 = j.value("ea_top1", 0.0);
  r.csim = j.value("csim", 0.0);
  r.identity_deterioration = j.value("identity_deterioration", 0.0);
  r.num_clips = j.value("num_clips", 0);
  r.per_clip = j.value("per_clip", nlohmann::json::array());
  return r;
}

}  // namespace eval
}  // namespace cemnet
