// datagen/corpus.cc

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

#include <cinttypes>
#include <cstdio>
#include <filesystem>

#include "cemnet/core/error.h"
#include "cemnet/core/io.h"
#include "cemnet/datagen/datagen.h"
#include "cemnet/datagen/dtw.h"

namespace cemnet {
namespace datagen {

namespace fs = std::filesystem;
using nlohmann::json;

static constexpr int kClipFormatVersion = 1;

nlohmann::json spec_to_json(const FactorSpec &spec) {
  return json{{"num_identities", spec.num_identities},
              {"num_contents", spec.num_contents},
              {"emotions", spec.emotions},
              {"video_fps", spec.video_fps},
              {"audio_feature_fps", spec.audio_feature_fps},
              {"feature_bins", spec.feature_bins},
              {"seed", std::to_string(spec.seed)}};
}

FactorSpec spec_from_json(const nlohmann::json &j) {
  FactorSpec s;
  s.num_identities = j.value("num_identities", s.num_identities);
  s.num_contents = j.value("num_contents", s.num_contents);
  if (j.contains("emotions"))
    s.emotions = j.at("emotions").get<std::vector<std::string>>();
  s.video_fps = j.value("video_fps", s.video_fps);
  s.audio_feature_fps = j.value("audio_feature_fps", s.audio_feature_fps);
  s.feature_bins = j.value("feature_bins", s.feature_bins);
  if (j.contains("seed")) {
    // Seeds are stored as strings: they are u64 and JSON numbers are not.
    if (j.at("seed").is_string())
      s.seed = std::strtoull(j.at("seed").get<std::string>().c_str(),
                             nullptr, 10);
    else
      s.seed = j.at("seed").get<uint64_t>();
  }
  s.validate();
  return s;
}

static std::string clip_dirname(int clip_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%06d", clip_id);
  return buf;
}

void write_clip(const SyntheticClip &clip, const std::string &clip_dir) {
  fs::create_directories(clip_dir);
  json meta{{"format_version", kClipFormatVersion},
            {"clip_id", clip.clip_id},
            {"identity", clip.identity_id},
            {"content", clip.content_id},
            {"emotion", clip.emotion_id},
            {"length_jitter", clip.length_jitter},
            {"video_frames", clip.landmarks.rows()},
            {"audio_frames", clip.audio.rows()},
            {"has_frames", clip.frames.numel() > 0},
            {"image_size", kImageSize}};
  std::vector<double> disp(clip.emotion_displacement_gt.vec());
  meta["emotion_displacement"] = disp;
  save_json(clip_dir + "/meta.json", meta);
  write_blob(clip_dir + "/landmarks.f32", clip.landmarks);
  write_blob(clip_dir + "/audio.f32", clip.audio);
  if (clip.frames.numel() > 0)
    write_blob(clip_dir + "/frames.f32", clip.frames);
}

SyntheticClip read_clip(const std::string &clip_dir, bool with_frames) {
  json meta = load_json(clip_dir + "/meta.json");
  const int v = meta.value("format_version", -1);
  if (v != kClipFormatVersion)
    throw FormatError(clip_dir + "/meta.json: unsupported format_version " +
                      std::to_string(v) + " (expected " +
                      std::to_string(kClipFormatVersion) + ")");
  SyntheticClip clip;
  clip.clip_id = meta.value("clip_id", -1);
  clip.identity_id = meta.value("identity", 0);
  clip.content_id = meta.value("content", 0);
  clip.emotion_id = meta.value("emotion", 0);
  clip.length_jitter = meta.value("length_jitter", 1.0);
  clip.landmarks = read_blob(clip_dir + "/landmarks.f32");
  clip.audio = read_blob(clip_dir + "/audio.f32");
  const int t = meta.value("video_frames", -1);
  const int f = meta.value("audio_frames", -1);
  if (clip.landmarks.rows() != t || clip.landmarks.cols() != 2 * kNumPoints)
    throw FormatError(clip_dir + "/landmarks.f32: shape " +
                      clip.landmarks.shape_str() + " does not match meta");
  if (clip.audio.rows() != f)
    throw FormatError(clip_dir + "/audio.f32: shape " +
                      clip.audio.shape_str() + " does not match meta");
  if (meta.contains("emotion_displacement")) {
    std::vector<double> disp =
        meta.at("emotion_displacement").get<std::vector<double>>();
    if (disp.size() != 2 * kMouthPoints)
      throw FormatError(clip_dir + "/meta.json: bad emotion_displacement");
    clip.emotion_displacement_gt = Tensor({kMouthPoints, 2}, disp);
  }
  if (with_frames && meta.value("has_frames", false)) {
    clip.frames = read_blob(clip_dir + "/frames.f32");
    if (clip.frames.rows() != t || clip.frames.cols() != kFrameValues)
      throw FormatError(clip_dir + "/frames.f32: shape " +
                        clip.frames.shape_str() + " does not match meta");
  }
  return clip;
}

static json corpus_manifest(const FactorSpec &spec, int num_clips) {
  return json{{"kind", "cemnet-corpus"},
              {"format_version", kClipFormatVersion},
              {"spec", spec_to_json(spec)},
              {"num_clips", num_clips}};
}

Corpus generate_corpus(const FactorSpec &spec, bool with_frames) {
  Generator gen(spec);
  Corpus corpus;
  corpus.spec = gen.spec();
  corpus.clips.reserve(static_cast<size_t>(spec.num_identities) *
                       spec.num_contents * spec.num_emotions());
  for (int j = 0; j < spec.num_identities; ++j)
    for (int k = 0; k < spec.num_contents; ++k)
      for (int e = 0; e < spec.num_emotions(); ++e)
        corpus.clips.push_back(gen.make_clip(j, k, e, with_frames));
  return corpus;
}

void generate_corpus_to_dir(const FactorSpec &spec, const std::string &dir) {
  Generator gen(spec);
  fs::create_directories(dir);
  int n = 0;
  for (int j = 0; j < spec.num_identities; ++j)
    for (int k = 0; k < spec.num_contents; ++k)
      for (int e = 0; e < spec.num_emotions(); ++e) {
        SyntheticClip clip = gen.make_clip(j, k, e, /*with_frames=*/true);
        write_clip(clip, dir + "/" + clip_dirname(clip.clip_id));
        ++n;
      }
  save_json(dir + "/corpus.json", corpus_manifest(spec, n));
}

void write_corpus(const Corpus &corpus, const std::string &dir) {
  fs::create_directories(dir);
  for (const SyntheticClip &clip : corpus.clips)
    write_clip(clip, dir + "/" + clip_dirname(clip.clip_id));
  save_json(dir + "/corpus.json",
            corpus_manifest(corpus.spec,
                            static_cast<int>(corpus.clips.size())));
}

Corpus read_corpus(const std::string &dir, bool with_frames) {
  json manifest = load_json(dir + "/corpus.json");
  if (manifest.value("kind", "") != "cemnet-corpus")
    throw FormatError(dir + "/corpus.json: not a corpus manifest");
  const int v = manifest.value("format_version", -1);
  if (v != kClipFormatVersion)
    throw FormatError(dir + "/corpus.json: unsupported format_version " +
                      std::to_string(v));
  Corpus corpus;
  corpus.spec = spec_from_json(manifest.at("spec"));
  corpus.dir = dir;
  const int n = manifest.value("num_clips", 0);
  corpus.clips.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    corpus.clips.push_back(read_clip(dir + "/" + clip_dirname(i),
                                     with_frames));
  return corpus;
}

int Corpus::index_of(int identity, int content, int emotion) const {
  for (size_t i = 0; i < clips.size(); ++i)
    if (clips[i].identity_id == identity && clips[i].content_id == content &&
        clips[i].emotion_id == emotion)
      return static_cast<int>(i);
  throw InputError("Corpus::index_of: no clip with the requested factors");
}

Tensor Corpus::clip_frames(int i) const {
  const SyntheticClip &clip = clips.at(static_cast<size_t>(i));
  if (clip.frames.numel() > 0) return clip.frames;
  if (dir.empty())
    throw InputError("Corpus::clip_frames: frames were not generated and "
                     "the corpus has no backing directory");
  return read_blob(dir + "/" + clip_dirname(clip.clip_id) + "/frames.f32");
}

std::vector<CrossReconPair> make_crossrecon_pairs(const Corpus &corpus,
                                                  const Generator &gen,
                                                  int count) {
  if (corpus.clips.empty())
    throw InputError("make_crossrecon_pairs: empty corpus");
  Rng rng = substream(corpus.spec.seed, "pairs");
  const int n = static_cast<int>(corpus.clips.size());
  std::vector<CrossReconPair> out;
  out.reserve(static_cast<size_t>(count));
  int attempts = 0;
  const int max_attempts = 1000 * count + 1000;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > max_attempts)
      throw InputError(
          "make_crossrecon_pairs: cannot sample pairs with all factors "
          "distinct; spec too small");
    const int ia = rng.uniform_int(n);
    const int ib = rng.uniform_int(n);
    const SyntheticClip &a = corpus.clips[static_cast<size_t>(ia)];
    const SyntheticClip &b = corpus.clips[static_cast<size_t>(ib)];
    // Cross-reconstruction needs the two clips to disagree in every factor,
    // otherwise some of the eight swap targets coincide.
    if (a.identity_id == b.identity_id || a.content_id == b.content_id ||
        a.emotion_id == b.emotion_id)
      continue;
    CrossReconPair pair;
    pair.clip_a = ia;
    pair.clip_b = ib;
    pair.aligned_b = dtw_align(a.audio, b.audio).warped_b;
    const int fa = a.audio_frames();
    pair.target_swaps.resize(8);
    for (int s = 0; s < 8; ++s) {
      const int e = (s & 4) ? b.emotion_id : a.emotion_id;
      const int j = (s & 2) ? b.identity_id : a.identity_id;
      const int k = (s & 1) ? b.content_id : a.content_id;
      pair.target_swaps[static_cast<size_t>(s)] =
          gen.clean_audio(e, j, k, fa);
    }
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace datagen
}  // namespace cemnet
