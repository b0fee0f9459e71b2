// src/ebm/ebm.cc

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

#include "cemnet/ebm/ebm.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <utility>

#include "cemnet/core/error.h"
#include "cemnet/core/io.h"

namespace cemnet {
namespace ebm {

namespace {

// Mouth coordinates live in a narrow band around the face center and
// displacements are a few percent of the unit square; both get pulled to
// O(1) before entering an encoder.
constexpr double kMouthShift = 0.5, kMouthScale = 4.0;
constexpr double kDispScale = 20.0;

Tensor flatten_window(const Tensor &w) {
  Tensor out = w;
  return out.reshaped({1, static_cast<int>(w.numel())});
}

}  // namespace

void EBMConfig::validate() const {
  if (slots < 2) throw ConfigError("ebm: slots must be >= 2");
  if (dim < 4) throw ConfigError("ebm: dim must be >= 4");
  if (part_dim < 1) throw ConfigError("ebm: part_dim must be >= 1");
  if (window < 2) throw ConfigError("ebm: window must be >= 2");
  if (mouth_cols < 2 || mouth_cols % 2 != 0)
    throw ConfigError("ebm: mouth_cols must be a positive even count");
  if (emotion_source != "aee" && emotion_source != "plain")
    throw ConfigError("ebm: emotion_source must be 'aee' or 'plain'");
  if (w_rec < 0 || w_align < 0 || w_a2m < 0 || lambda_v < 0)
    throw ConfigError("ebm: loss weights must be nonnegative");
  if (kl_eps <= 0) throw ConfigError("ebm: kl_eps must be positive");
  if (epochs < 1 || batch < 1 || tuples < batch)
    throw ConfigError("ebm: need epochs >= 1 and tuples >= batch >= 1");
  if (heldout_tuples < 0 || heldout_contents < 0)
    throw ConfigError("ebm: counts must be nonnegative");
  if (lr <= 0) throw ConfigError("ebm: lr must be positive");
}

nlohmann::json EBMConfig::to_json() const {
  return nlohmann::json{{"slots", slots},
                        {"dim", dim},
                        {"part_dim", part_dim},
                        {"window", window},
                        {"mouth_cols", mouth_cols},
                        {"cosine", cosine},
                        {"use_memory", use_memory},
                        {"emotion_source", emotion_source},
                        {"w_rec", w_rec},
                        {"w_align", w_align},
                        {"w_a2m", w_a2m},
                        {"lambda_v", lambda_v},
                        {"kl_eps", kl_eps},
                        {"epochs", epochs},
                        {"batch", batch},
                        {"lr", lr},
                        {"tuples", tuples},
                        {"heldout_tuples", heldout_tuples},
                        {"heldout_contents", heldout_contents},
                        {"clip_norm", clip_norm},
                        {"seed", seed}};
}

EBMConfig EBMConfig::from_json(const nlohmann::json &j) {
  EBMConfig c;
  c.slots = j.value("slots", c.slots);
  c.dim = j.value("dim", c.dim);
  c.part_dim = j.value("part_dim", c.part_dim);
  c.window = j.value("window", c.window);
  c.mouth_cols = j.value("mouth_cols", c.mouth_cols);
  c.cosine = j.value("cosine", c.cosine);
  c.use_memory = j.value("use_memory", c.use_memory);
  c.emotion_source = j.value("emotion_source", c.emotion_source);
  c.w_rec = j.value("w_rec", c.w_rec);
  c.w_align = j.value("w_align", c.w_align);
  c.w_a2m = j.value("w_a2m", c.w_a2m);
  c.lambda_v = j.value("lambda_v", c.lambda_v);
  c.kl_eps = j.value("kl_eps", c.kl_eps);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.tuples = j.value("tuples", c.tuples);
  c.heldout_tuples = j.value("heldout_tuples", c.heldout_tuples);
  c.heldout_contents = j.value("heldout_contents", c.heldout_contents);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

EmotionBridgingMemory::EmotionBridgingMemory(const EBMConfig &config)
    : config_(config) {
  config_.validate();
  Rng rng = substream(config_.seed, "ebm_init");
  const int d = config_.dim, p = config_.part_dim;
  const int win = config_.window * config_.mouth_cols;

  Tensor mk({config_.slots, d}), mv({config_.slots, d});
  for (int64_t i = 0; i < mk.numel(); ++i) mk[i] = rng.normal() * 0.1;
  for (int64_t i = 0; i < mv.numel(); ++i) mv[i] = rng.normal() * 0.1;
  m_k_ = params_.add("Mk", mk);
  m_v_ = params_.add("Mv", mv);

  lip1_ = nn::Linear(params_, "lip1", win, d, rng);
  lip2_ = nn::Linear(params_, "lip2", d, p, rng);
  disp1_ = nn::Linear(params_, "disp1", win, d, rng);
  disp2_ = nn::Linear(params_, "disp2", d, d, rng);
  proj_ = nn::Linear(params_, "proj", 4 * p, d, rng);
  dec1_ = nn::Linear(params_, "dec1", d + config_.mouth_cols, 64, rng);
  dec2_ = nn::Linear::zeros(params_, "dec2", 64, config_.mouth_cols);
}

ad::Var EmotionBridgingMemory::attention(const ad::Var &queries,
                                         const ad::Var &bank) const {
  const Tensor &q = queries->value;
  if (q.rank() != 2 || q.cols() != bank->value.cols())
    throw InputError("ebm: query is " + q.shape_str() + ", bank wants [B," +
                     std::to_string(bank->value.cols()) + "]");
  for (int r = 0; r < q.rows(); ++r) {
    double n2 = 0.0;
    for (int c = 0; c < q.cols(); ++c) n2 += q.at(r, c) * q.at(r, c);
    if (n2 < 1e-24)
      throw InputError("ebm: zero-norm query row " + std::to_string(r));
  }
  ad::Var scores;
  if (config_.cosine) {
    // eps 0 on the query side: zero norms were rejected above, and an
    // un-fudged norm makes attention bitwise invariant to power-of-two
    // query rescaling. Bank rows keep a guard against all-zero slots.
    scores = ad::matmul(ad::l2_normalize_rows(queries, 0.0),
                        ad::transpose(ad::l2_normalize_rows(bank)));
  } else {
    scores = ad::matmul(queries, ad::transpose(bank));
  }
  return ad::softmax_rows(scores);
}

std::pair<ad::Var, ad::Var> EmotionBridgingMemory::value_attend(
    const ad::Var &f_dlip) const {
  ad::Var alpha = attention(f_dlip, m_v_);
  // Eq. 9 reads the raw slots; only the scores see normalized copies.
  return {alpha, ad::matmul(alpha, m_v_)};
}

ad::Var EmotionBridgingMemory::key_attend(const ad::Var &f_e) const {
  return attention(f_e, m_k_);
}

ad::Var EmotionBridgingMemory::bridge(const ad::Var &alpha_k) const {
  if (alpha_k->value.cols() != config_.slots)
    throw InputError("ebm: alpha is " + alpha_k->value.shape_str() +
                     ", want [B," + std::to_string(config_.slots) + "]");
  return ad::matmul(alpha_k, m_v_);
}

ad::Var EmotionBridgingMemory::encode_lip_motion(
    const ad::Var &flat_windows) const {
  ad::Var x = ad::scale(ad::add_scalar(flat_windows, -kMouthShift),
                        kMouthScale);
  return lip2_(ad::leaky_relu(lip1_(x), 0.01));
}

ad::Var EmotionBridgingMemory::encode_displacement(
    const ad::Var &flat_disp) const {
  ad::Var x = ad::scale(flat_disp, kDispScale);
  return disp2_(ad::leaky_relu(disp1_(x), 0.01));
}

ad::Var EmotionBridgingMemory::make_query(
    const std::vector<const EBMTuple *> &batch) const {
  if (batch.empty()) throw InputError("ebm: empty tuple batch");
  const int b = static_cast<int>(batch.size());
  const int win = config_.window * config_.mouth_cols;
  Tensor agn({b, win}), te({b, config_.part_dim}), se({b, config_.part_dim}),
      id({b, config_.part_dim});
  for (int i = 0; i < b; ++i) {
    const EBMTuple &t = *batch[i];
    if (t.agnostic.rows() != config_.window ||
        t.agnostic.cols() != config_.mouth_cols)
      throw InputError("ebm: agnostic window is " + t.agnostic.shape_str() +
                       ", want [" + std::to_string(config_.window) + "," +
                       std::to_string(config_.mouth_cols) + "]");
    if (t.target_emotion.numel() != config_.part_dim ||
        t.source_emotion.numel() != config_.part_dim ||
        t.identity.numel() != config_.part_dim)
      throw InputError("ebm: tuple embeddings must be part_dim wide");
    for (int k = 0; k < win; ++k) agn.at(i, k) = t.agnostic[k];
    for (int k = 0; k < config_.part_dim; ++k) {
      te.at(i, k) = t.target_emotion[k];
      se.at(i, k) = t.source_emotion[k];
      id.at(i, k) = t.identity[k];
    }
  }
  ad::Var lip = encode_lip_motion(ad::constant(agn));
  ad::Var cat = ad::concat_cols(
      {ad::constant(te), ad::constant(se), ad::constant(id), lip});
  return proj_(cat);
}

ad::Var EmotionBridgingMemory::decode_emotional_mouth(
    const ad::Var &f, const Tensor &agnostic_rows) const {
  const int bt = agnostic_rows.rows();
  const int b = f->value.rows();
  if (b < 1 || bt % b != 0 || bt / b != config_.window)
    throw InputError("ebm: decoder got " + std::to_string(bt) +
                     " mouth rows for " + std::to_string(b) + " features");
  // Repeat feature row i once per window frame via a constant selector.
  Tensor sel({bt, b});
  for (int r = 0; r < bt; ++r) sel.at(r, r / config_.window) = 1.0;
  ad::Var tiled = ad::matmul(ad::constant(sel), f);
  ad::Var agn = ad::constant(agnostic_rows);
  ad::Var h = ad::leaky_relu(dec1_(ad::concat_cols({tiled, agn})), 0.01);
  ad::Var out = ad::add(agn, dec2_(h));
  // Exact clamp to [0,1]: relu(x) - relu(x - 1).
  return ad::sub(ad::relu(out), ad::relu(ad::add_scalar(out, -1.0)));
}

ad::Var EmotionBridgingMemory::a2m_form_loss(const ad::Var &decoded,
                                             const Tensor &target,
                                             int batch) const {
  const int t = config_.window;
  ad::Var tgt = ad::constant(target);
  ad::Var l1 = ad::l1_loss(decoded, tgt);
  std::vector<ad::Var> vnorms;
  for (int bi = 0; bi < batch; ++bi) {
    ad::Var dp = ad::sub(ad::slice_rows(decoded, bi * t + 1, bi * t + t),
                         ad::slice_rows(decoded, bi * t, bi * t + t - 1));
    ad::Var dg = ad::sub(ad::slice_rows(tgt, bi * t + 1, bi * t + t),
                         ad::slice_rows(tgt, bi * t, bi * t + t - 1));
    ad::Var n = ad::sqrt_op(
        ad::add_scalar(ad::sum_cols(ad::square(ad::sub(dp, dg))), 1e-12));
    vnorms.push_back(n);
  }
  ad::Var vel = ad::mean(ad::concat_rows(vnorms));
  return ad::add(l1, ad::scale(vel, config_.lambda_v));
}

ad::Var EmotionBridgingMemory::ebm_losses(
    const ad::Var &alpha_k, const ad::Var &alpha_v, const ad::Var &f_dlip,
    const ad::Var &f_hat, const ad::Var &decoded, const Tensor &target,
    EBMLossParts *parts) const {
  const int b = alpha_k->value.rows();
  if (alpha_v->value.rows() != b || f_dlip->value.rows() != b ||
      f_hat->value.rows() != b || decoded->value.rows() != b * config_.window)
    throw InputError("ebm: loss inputs disagree on the batch size");

  // Per-sample squared L2 over the feature, then batch mean: the
  // elementwise MSE times the feature width.
  ad::Var l_rec = ad::scale(ad::mse_loss(f_hat, f_dlip),
                            static_cast<double>(config_.dim));

  ad::Var av = ad::stop_gradient(alpha_v);
  ad::Var logs = ad::sub(ad::log_op(ad::add_scalar(alpha_k, config_.kl_eps)),
                         ad::log_op(ad::add_scalar(av, config_.kl_eps)));
  ad::Var l_align = ad::scale(ad::sum(ad::mul(alpha_k, logs)), 1.0 / b);

  ad::Var l_a2m = a2m_form_loss(decoded, target, b);

  ad::Var total = ad::add(
      ad::add(ad::scale(l_rec, config_.w_rec),
              ad::scale(l_align, config_.w_align)),
      ad::scale(l_a2m, config_.w_a2m));
  if (parts) {
    parts->l_rec = l_rec->value[0];
    parts->l_align = l_align->value[0];
    parts->l_a2m = l_a2m->value[0];
    parts->total = total->value[0];
  }
  return total;
}

ad::Var EmotionBridgingMemory::batch_losses(
    const std::vector<const EBMTuple *> &batch, EBMLossParts *parts) const {
  const int b = static_cast<int>(batch.size());
  const int t = config_.window;
  Tensor agn({b * t, config_.mouth_cols}), gt({b * t, config_.mouth_cols});
  Tensor disp({b, t * config_.mouth_cols});
  for (int i = 0; i < b; ++i) {
    const EBMTuple &tp = *batch[i];
    if (tp.gt.rows() != t || tp.gt.cols() != config_.mouth_cols)
      throw InputError("ebm: gt window is " + tp.gt.shape_str());
    for (int r = 0; r < t; ++r)
      for (int c = 0; c < config_.mouth_cols; ++c) {
        agn.at(i * t + r, c) = tp.agnostic.at(r, c);
        gt.at(i * t + r, c) = tp.gt.at(r, c);
        disp.at(i, r * config_.mouth_cols + c) =
            tp.gt.at(r, c) - tp.agnostic.at(r, c);
      }
  }

  ad::Var f_e = make_query(batch);
  if (!config_.use_memory) {
    // Ablation: no banks, the projected query goes straight to the decoder.
    ad::Var decoded = decode_emotional_mouth(f_e, agn);
    ad::Var raw = a2m_form_loss(decoded, gt, b);
    ad::Var total = ad::scale(raw, config_.w_a2m);
    if (parts) {
      parts->l_rec = 0.0;
      parts->l_align = 0.0;
      parts->l_a2m = raw->value[0];
      parts->total = total->value[0];
    }
    return total;
  }

  ad::Var f_dlip = encode_displacement(ad::constant(disp));
  auto [alpha_v, f_hat] = value_attend(f_dlip);
  ad::Var alpha_k = key_attend(f_e);
  // The decoder trains on the value-path readout; inference swaps in the
  // bridge, which L_align pulls toward the same weights.
  ad::Var decoded = decode_emotional_mouth(f_hat, agn);
  return ebm_losses(alpha_k, alpha_v, f_dlip, f_hat, decoded, gt, parts);
}

Tensor EmotionBridgingMemory::refine(const EBMTuple &tuple) const {
  std::vector<const EBMTuple *> one{&tuple};
  ad::Var f_e = make_query(one);
  ad::Var f = config_.use_memory ? bridge(key_attend(f_e)) : f_e;
  Tensor agn = tuple.agnostic;
  return decode_emotional_mouth(f, agn)->value;
}

EBMEval EmotionBridgingMemory::evaluate(
    const std::vector<EBMTuple> &tuples) const {
  EBMEval ev;
  if (tuples.empty()) return ev;
  int n = 0;
  for (size_t i = 0; i < tuples.size(); i += 32) {
    std::vector<const EBMTuple *> chunk;
    for (size_t j = i; j < tuples.size() && j < i + 32; ++j)
      chunk.push_back(&tuples[j]);
    const int b = static_cast<int>(chunk.size());
    EBMLossParts p;
    batch_losses(chunk, &p);
    ev.parts.l_rec += p.l_rec * b;
    ev.parts.l_align += p.l_align * b;
    ev.parts.l_a2m += p.l_a2m * b;
    ev.parts.total += p.total * b;
    if (config_.use_memory) {
      Tensor disp({b, config_.window * config_.mouth_cols});
      for (int k = 0; k < b; ++k)
        for (int r = 0; r < config_.window; ++r)
          for (int c = 0; c < config_.mouth_cols; ++c)
            disp.at(k, r * config_.mouth_cols + c) =
                chunk[k]->gt.at(r, c) - chunk[k]->agnostic.at(r, c);
      Tensor f_hat = value_attend(encode_displacement(ad::constant(disp)))
                         .second->value;
      Tensor bridged = bridge(key_attend(make_query(chunk)))->value;
      for (int k = 0; k < b; ++k) {
        double d2 = 0.0;
        for (int c = 0; c < config_.dim; ++c) {
          double d = bridged.at(k, c) - f_hat.at(k, c);
          d2 += d * d;
        }
        ev.key_value_gap += std::sqrt(d2);
      }
    }
    n += b;
  }
  ev.parts.l_rec /= n;
  ev.parts.l_align /= n;
  ev.parts.l_a2m /= n;
  ev.parts.total /= n;
  ev.key_value_gap /= n;
  return ev;
}

void EmotionBridgingMemory::train_on_tuples(
    const std::vector<EBMTuple> &train, const std::vector<EBMTuple> &heldout) {
  if (train.size() < static_cast<size_t>(config_.batch))
    throw InputError("ebm: need at least one full batch of tuples");
  nn::Adam opt(params_, config_.lr);
  history_ = EBMHistory{};
  history_.kl_initial = evaluate(train).parts.l_align;

  const int n = static_cast<int>(train.size());
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    Rng order_rng = substream(config_.seed, "ebm_order", epoch);
    std::vector<int> order = order_rng.permutation(n);
    double et = 0, er = 0, ea = 0, em = 0;
    int steps = 0;
    for (int i = 0; i + config_.batch <= n; i += config_.batch) {
      std::vector<const EBMTuple *> batch;
      for (int j = 0; j < config_.batch; ++j)
        batch.push_back(&train[order[i + j]]);
      EBMLossParts p;
      ad::Var total = batch_losses(batch, &p);
      if (!std::isfinite(p.total))
        throw StageError("ebm: non-finite loss at epoch " +
                         std::to_string(epoch));
      params_.zero_grad();
      ad::backward(total);
      nn::clip_global_norm(params_, config_.clip_norm);
      opt.step();
      et += p.total;
      er += p.l_rec;
      ea += p.l_align;
      em += p.l_a2m;
      ++steps;
    }
    history_.total.push_back(et / steps);
    history_.rec.push_back(er / steps);
    history_.align.push_back(ea / steps);
    history_.a2m.push_back(em / steps);
    if (epoch == 0 || (epoch + 1) % 10 == 0 || epoch == config_.epochs - 1)
      std::printf("[ebm] epoch %d/%d total %.4f rec %.4f kl %.5f a2m %.4f\n",
                  epoch + 1, config_.epochs, history_.total.back(),
                  history_.rec.back(), history_.align.back(),
                  history_.a2m.back());
  }
  history_.kl_final = evaluate(train).parts.l_align;
  trained_ = true;

  report_ = memory_report(train);
  EBMEval hv = evaluate(heldout);
  report_["heldout"] = {{"l_rec", hv.parts.l_rec},
                        {"l_align", hv.parts.l_align},
                        {"l_a2m", hv.parts.l_a2m},
                        {"key_value_gap", hv.key_value_gap}};
  report_["kl_initial"] = history_.kl_initial;
  report_["kl_final"] = history_.kl_final;
}

nlohmann::json EmotionBridgingMemory::memory_report(
    const std::vector<EBMTuple> &tuples) const {
  const int k = config_.slots;
  std::vector<int> hits_v(k, 0), hits_k(k, 0);
  std::vector<double> max_av(k, 0.0);
  if (config_.use_memory) {
    for (size_t i = 0; i < tuples.size(); i += 32) {
      std::vector<const EBMTuple *> chunk;
      for (size_t j = i; j < tuples.size() && j < i + 32; ++j)
        chunk.push_back(&tuples[j]);
      const int b = static_cast<int>(chunk.size());
      Tensor disp({b, config_.window * config_.mouth_cols});
      for (int q = 0; q < b; ++q)
        for (int r = 0; r < config_.window; ++r)
          for (int c = 0; c < config_.mouth_cols; ++c)
            disp.at(q, r * config_.mouth_cols + c) =
                chunk[q]->gt.at(r, c) - chunk[q]->agnostic.at(r, c);
      Tensor av = value_attend(encode_displacement(ad::constant(disp)))
                      .first->value;
      Tensor ak = key_attend(make_query(chunk))->value;
      for (int q = 0; q < b; ++q) {
        int bv = 0, bk = 0;
        for (int s = 0; s < k; ++s) {
          if (av.at(q, s) > av.at(q, bv)) bv = s;
          if (ak.at(q, s) > ak.at(q, bk)) bk = s;
          max_av[s] = std::max(max_av[s], av.at(q, s));
        }
        ++hits_v[bv];
        ++hits_k[bk];
      }
    }
  }
  std::vector<int> dead;
  for (int s = 0; s < k; ++s)
    if (max_av[s] <= 1.0 / k) dead.push_back(s);
  if (!dead.empty() && config_.use_memory)
    std::printf("[ebm] %d dead value slot(s)\n", static_cast<int>(dead.size()));
  return nlohmann::json{{"slots", k},
                        {"dim", config_.dim},
                        {"tuples", tuples.size()},
                        {"argmax_hits_value", hits_v},
                        {"argmax_hits_key", hits_k},
                        {"max_alpha_v", max_av},
                        {"dead_slots", dead}};
}

void EmotionBridgingMemory::require_trained() const {
  if (!trained_) throw UsageError("ebm: model is not trained");
}

void EmotionBridgingMemory::save(const std::string &dir) const {
  CheckpointArchive a;
  a.set_module("ebm");
  a.set_seed(config_.seed);
  a.meta()["config"] = config_.to_json();
  a.meta()["trained"] = trained_;
  a.meta()["report"] = report_;
  a.meta()["history"] = {{"total", history_.total},
                         {"rec", history_.rec},
                         {"align", history_.align},
                         {"a2m", history_.a2m},
                         {"kl_initial", history_.kl_initial},
                         {"kl_final", history_.kl_final}};
  for (const auto &kv : params_.state_dict()) a.put(kv.first, kv.second);
  a.save(dir);
}

EmotionBridgingMemory EmotionBridgingMemory::load(const std::string &dir) {
  CheckpointArchive a = CheckpointArchive::load(dir);
  if (a.module() != "ebm")
    throw FormatError(dir + ": checkpoint module '" + a.module() +
                      "' is not 'ebm'");
  EmotionBridgingMemory m(EBMConfig::from_json(a.meta().at("config")));
  m.params_.load_state_dict(a.tensors());
  m.trained_ = a.meta().value("trained", false);
  if (a.meta().contains("report")) m.report_ = a.meta()["report"];
  if (a.meta().contains("history")) {
    const auto &h = a.meta()["history"];
    m.history_.total = h.value("total", std::vector<double>{});
    m.history_.rec = h.value("rec", std::vector<double>{});
    m.history_.align = h.value("align", std::vector<double>{});
    m.history_.a2m = h.value("a2m", std::vector<double>{});
    m.history_.kl_initial = h.value("kl_initial", 0.0);
    m.history_.kl_final = h.value("kl_final", 0.0);
  }
  return m;
}

std::vector<EBMTuple> build_tuples(const datagen::Corpus &corpus,
                                   a2m::Audio2Mouth &a2m,
                                   const visenc::VisualEncoders &visenc,
                                   const aee::AudioEmotionEnhancer &aee,
                                   const EBMConfig &config, int count,
                                   int content_lo, int content_hi,
                                   const std::string &tag) {
  const datagen::FactorSpec &spec = corpus.spec;
  if (content_lo < 0 || content_hi > spec.num_contents ||
      content_lo >= content_hi)
    throw InputError("ebm: bad content range [" + std::to_string(content_lo) +
                     ", " + std::to_string(content_hi) + ")");
  if (spec.num_emotions() < 2)
    throw InputError("ebm: need at least two emotions for cross tuples");

  const int t_win = config.window;
  const int apv = spec.audio_per_video();
  const int n_ref = a2m.config().n_refs;
  Rng rng = substream(config.seed, tag);

  // Frozen per-source-clip visual embeddings, mean over two frames.
  std::map<int, std::pair<Tensor, Tensor>> vis_cache;
  auto vis_embed = [&](int clip_idx, Rng &frame_rng) {
    auto it = vis_cache.find(clip_idx);
    if (it != vis_cache.end()) return it->second;
    Tensor frames = corpus.clip_frames(clip_idx);
    Tensor pick({2, frames.cols()});
    for (int f = 0; f < 2; ++f) {
      int row = frame_rng.uniform_int(frames.rows());
      for (int c = 0; c < frames.cols(); ++c) pick.at(f, c) = frames.at(row, c);
    }
    Tensor se = visenc.source_emotion(pick), id = visenc.identity_embed(pick);
    Tensor se1({1, se.cols()}), id1({1, id.cols()});
    for (int c = 0; c < se.cols(); ++c) {
      se1[c] = 0.5 * (se.at(0, c) + se.at(1, c));
      id1[c] = 0.5 * (id.at(0, c) + id.at(1, c));
    }
    auto ins = vis_cache.emplace(clip_idx, std::make_pair(se1, id1));
    return ins.first->second;
  };

  std::vector<EBMTuple> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    const int i = rng.uniform_int(spec.num_identities);
    const int c = content_lo + rng.uniform_int(content_hi - content_lo);
    const int e = rng.uniform_int(spec.num_emotions());
    int s = rng.uniform_int(spec.num_emotions() - 1);
    if (s >= e) ++s;
    const datagen::SyntheticClip &tgt =
        corpus.clips[corpus.index_of(i, c, e)];
    const datagen::SyntheticClip &src =
        corpus.clips[corpus.index_of(i, c, s)];
    const int t_clip = tgt.video_frames();
    if (t_clip < t_win) continue;
    const int start = rng.uniform_int(t_clip - t_win + 1);

    // Same-length clips differ only in emotion, so the source clip's rows
    // can serve as reference landmarks directly.
    Tensor refs({n_ref, src.landmarks.cols()});
    for (int r = 0; r < n_ref; ++r) {
      int row = rng.uniform_int(src.video_frames());
      for (int col = 0; col < src.landmarks.cols(); ++col)
        refs.at(r, col) = src.landmarks.at(row, col);
    }

    a2m::A2MBatch win;
    win.refs = refs;
    win.audio = Tensor({t_win, apv * spec.feature_bins});
    win.pose = Tensor({t_win, 2 * datagen::kPosePoints});
    Tensor wa({t_win * apv, spec.feature_bins});
    Tensor gt({t_win, config.mouth_cols});
    for (int r = 0; r < t_win; ++r) {
      for (int a = 0; a < apv; ++a)
        for (int col = 0; col < spec.feature_bins; ++col) {
          double v = tgt.audio.at((start + r) * apv + a, col);
          win.audio.at(r, a * spec.feature_bins + col) = v;
          wa.at(r * apv + a, col) = v;
        }
      for (int col = 0; col < 2 * datagen::kPosePoints; ++col)
        win.pose.at(r, col) = tgt.landmarks.at(start + r, col);
      for (int col = 0; col < config.mouth_cols; ++col)
        gt.at(r, col) =
            tgt.landmarks.at(start + r, 2 * datagen::kMouthStart + col);
    }

    EBMTuple tp;
    tp.agnostic = a2m.predict_window(win);
    tp.gt = gt;
    tp.target_emotion = config.emotion_source == "plain"
                            ? aee.extract_plain_emotion(wa)
                            : aee.extract_target_emotion(wa);
    auto vis = vis_embed(corpus.index_of(i, c, s), rng);
    tp.source_emotion = vis.first;
    tp.identity = vis.second;
    tp.emotion = e;
    tp.source = s;
    tp.clip = corpus.index_of(i, c, e);
    out.push_back(std::move(tp));
  }
  return out;
}

EmotionBridgingMemory train_ebm(const datagen::Corpus &corpus,
                                const std::string &a2m_dir,
                                const std::string &visenc_dir,
                                const std::string &aee_dir,
                                const EBMConfig &config) {
  for (const std::string &d : {a2m_dir, visenc_dir, aee_dir})
    if (!std::filesystem::exists(d + "/manifest.json"))
      throw ConfigError("ebm: missing upstream checkpoint " + d);
  a2m::Audio2Mouth a2m = a2m::Audio2Mouth::load(a2m_dir);
  visenc::VisualEncoders visenc = visenc::VisualEncoders::load(visenc_dir);
  aee::AudioEmotionEnhancer aee = aee::AudioEmotionEnhancer::load(aee_dir);
  if (!a2m.trained() || !visenc.trained())
    throw ConfigError("ebm: upstream checkpoint is not trained");
  if (config.emotion_source == "plain" ? !aee.pretrained() : !aee.trained())
    throw ConfigError("ebm: aee checkpoint is not trained");

  EBMConfig cfg = config;
  cfg.part_dim = aee.config().embed_dim;
  cfg.window = a2m.config().window;
  cfg.validate();
  const int hi = std::max(1, corpus.spec.num_contents - cfg.heldout_contents);
  std::vector<EBMTuple> train = build_tuples(corpus, a2m, visenc, aee, cfg,
                                             cfg.tuples, 0, hi, "ebm_tuples");
  std::vector<EBMTuple> held =
      build_tuples(corpus, a2m, visenc, aee, cfg, cfg.heldout_tuples, 0, hi,
                   "ebm_tuples_heldout");
  EmotionBridgingMemory model(cfg);
  model.train_on_tuples(train, held);
  return model;
}

}  // namespace ebm
}  // namespace cemnet
