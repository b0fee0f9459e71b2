// cemnet/datagen/datagen.h

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

// Synthetic factorized corpus: every clip is generated from known identity,
// content, and emotion factors, so every downstream module has an exact
// oracle. Landmarks use a 68-point layout (20 mouth points, 27 pose points:
// jaw 0..16 plus brows 17..26); audio is a 26-bin feature matrix at 4x the
// video rate; frames are 64x64 RGB renders drawn procedurally from the
// landmarks and an identity-keyed palette.

#ifndef CEMNET_DATAGEN_DATAGEN_H_
#define CEMNET_DATAGEN_DATAGEN_H_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cemnet/core/rng.h"
#include "cemnet/core/tensor.h"

namespace cemnet {
namespace datagen {

constexpr int kNumPoints = 68;
constexpr int kMouthStart = 48;   // mouth points 48..67
constexpr int kMouthPoints = 20;
constexpr int kPosePoints = 27;   // pose points 0..26 (jaw + brows)
constexpr int kBrowStart = 17;    // brows 17..26 within the pose set
constexpr int kImageSize = 64;
constexpr int kFrameValues = kImageSize * kImageSize * 3;

struct FactorSpec {
  int num_identities = 12;
  int num_contents = 20;
  std::vector<std::string> emotions = {"neutral",   "angry", "contempt",
                                       "disgusted", "fear",  "happy",
                                       "sad",       "surprised"};
  int video_fps = 25;
  int audio_feature_fps = 100;
  int feature_bins = 26;
  uint64_t seed = 1;

  int num_emotions() const { return static_cast<int>(emotions.size()); }
  int audio_per_video() const { return audio_feature_fps / video_fps; }
  void validate() const;  // throws ConfigError
};

nlohmann::json spec_to_json(const FactorSpec &spec);
FactorSpec spec_from_json(const nlohmann::json &j);

struct SyntheticClip {
  int clip_id = -1;
  int identity_id = 0, content_id = 0, emotion_id = 0;
  double length_jitter = 1.0;
  Tensor landmarks;  // [T, 136]
  Tensor audio;      // [4T, 26]
  Tensor frames;     // [T, 12288]; empty when loaded lazily
  Tensor emotion_displacement_gt;  // [20, 2], identity-scaled

  int video_frames() const { return landmarks.rows(); }
  int audio_frames() const { return audio.rows(); }
};

// Pure factor-to-signal generator. All factor tables are derived from the
// spec seed through named substreams, so two Generators with equal specs
// agree bit-for-bit.
class Generator {
 public:
  explicit Generator(const FactorSpec &spec);

  const FactorSpec &spec() const { return spec_; }

  // Includes per-clip noise and the (identity, content)-keyed tempo jitter.
  // with_frames=false skips rendering.
  SyntheticClip make_clip(int identity, int content, int emotion,
                          bool with_frames = true) const;

  // Noiseless signals on an arbitrary frame grid (phase-mapped; used for
  // cross-reconstruction targets and test oracles).
  Tensor clean_audio(int emotion, int identity, int content,
                     int audio_frames) const;
  Tensor clean_landmarks(int emotion, int identity, int content,
                         int video_frames) const;

  // Identity-scaled static displacement field: mouth rows [20,2]; the brow
  // part lives in pose and is returned separately.
  Tensor emotion_displacement(int emotion, int identity) const;  // [20,2]
  Tensor brow_displacement(int emotion, int identity) const;     // [10,2]

  double length_jitter(int identity, int content) const;
  int video_frames_of(int identity, int content) const;

  // Renders one frame (row-major RGB in [0,1], flattened to [1, 12288])
  // from a 136-value landmark row.
  Tensor render_frame(const double *lm, int identity) const;

  static constexpr int kBaseVideoFrames = 12;
  static constexpr double kAudioNoise = 0.05;
  static constexpr double kLandmarkNoise = 0.002;

 private:
  struct IdentityFactors {
    double face_w, face_h, mouth_w, mouth_y, eye_dx, brow_dy;
    double emotion_scale;           // s_j in [0.7, 1.3]
    std::array<double, 6> timbre;   // bins 14..19
    std::array<double, 3> skin, lip, iris, bg;
  };
  struct ContentFactors {
    std::array<double, 3> o_amp, o_freq, o_ph;
    std::array<double, 3> w_amp, w_freq, w_ph;
    std::array<double, 10> signature;  // bins 4..13
  };
  struct EmotionFactors {
    Tensor mouth_field;  // [20,2] base template
    Tensor brow_field;   // [10,2]
    std::array<double, 6> prosody;  // bins 20..25
    double mod_freq, mod_phase;
  };

  double opening(int content, double u) const;
  double widening(int content, double u) const;
  double opening_rate(int content, double u) const;
  double widening_rate(int content, double u) const;
  void base_face(int identity, double *pts) const;  // 68x2 neutral layout
  void landmarks_at(int identity, int content, int emotion, double u,
                    double *pts) const;

  FactorSpec spec_;
  std::vector<IdentityFactors> ids_;
  std::vector<ContentFactors> contents_;
  std::vector<EmotionFactors> emotions_;
};

struct Corpus {
  FactorSpec spec;
  std::vector<SyntheticClip> clips;
  std::string dir;  // set when the corpus lives on disk (lazy frames)

  int index_of(int identity, int content, int emotion) const;
  // Frames of clip i, from memory if present, else from dir.
  Tensor clip_frames(int i) const;
};

// In-memory generation (tests, small specs). Clip order is identity-major,
// then content, then emotion.
Corpus generate_corpus(const FactorSpec &spec, bool with_frames = true);

// Streaming generation for the full-size corpus: clips are written as they
// are produced and never held in memory together.
void generate_corpus_to_dir(const FactorSpec &spec, const std::string &dir);

void write_clip(const SyntheticClip &clip, const std::string &clip_dir);
SyntheticClip read_clip(const std::string &clip_dir, bool with_frames = true);
void write_corpus(const Corpus &corpus, const std::string &dir);
Corpus read_corpus(const std::string &dir, bool with_frames = false);

struct CrossReconPair {
  int clip_a = -1, clip_b = -1;
  Tensor aligned_b;  // clip_b audio DTW-warped onto clip_a's time axis
  // target_swaps[(i<<2)|(j<<1)|k]: clean features with emotion of clip_i,
  // timbre of clip_j, content of clip_k (0 = a, 1 = b), on clip_a's grid.
  std::vector<Tensor> target_swaps;  // 8 of [Fa, 26]
};

// Seeded sampling of pairs whose two clips differ in emotion, identity, and
// content; targets come straight from the generator.
std::vector<CrossReconPair> make_crossrecon_pairs(const Corpus &corpus,
                                                  const Generator &gen,
                                                  int count);

}  // namespace datagen
}  // namespace cemnet

#endif  // CEMNET_DATAGEN_DATAGEN_H_
