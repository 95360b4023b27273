// Copyright 2026 The Inferix Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "inferix/common/frame.hpp"

namespace inferix::metrics {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kReferenceEpsilon = 1e-9;

enum class Weighting {
  Uniform,
  // w_t = |q_t| / |q_1|: later chunks count in proportion to their own
  // magnitude, as in weighted MAPE.
  ReferenceNormalized,
};

struct ScoreSeries {
  std::string metric_name;
  std::vector<double> values;   // q_1..q_T
  std::vector<double> weights;  // w_1..w_T; empty means uniform

  void validate() const;
  static ScoreSeries with_weighting(std::string name, std::vector<double> values, Weighting w);
};

// Video Drift Error, a percentage:
//   100 * sum_{t>=2} w_t |q_t - q_1| / (sum_{t>=2} w_t |q_1|)
// rounded to 12 significant digits.
// Throws MetricError when T < 2, |q_1| < 1e-9, or the weights for t >= 2 sum
// to zero.
double vde(const ScoreSeries& series);
double vde(std::span<const double> values, std::span<const double> weights = {});

// --- per-chunk scorers ------------------------------------------------------
// All take the frames of one chunk; every frame must have the same shape.

// Mean over frames of the variance of the 3x3 Laplacian (valid region only).
// Needs frames of at least 3x3.
double score_clarity(std::span<const GrayFrame> chunk);
// Mean absolute pixel difference between consecutive frames, averaged over
// pairs. Needs at least two frames.
double score_motion(std::span<const GrayFrame> chunk);
// Mean per-frame standard deviation of intensity.
double score_aesthetic(std::span<const GrayFrame> chunk);

struct RegionOptions {
  double margin = 0.25;  // border = outer fraction of each dimension
  std::size_t bins = 16;
};

// Cosine similarity of intensity histograms (pooled over the chunk) restricted
// to the border region / the center region, against a reference chunk.
double score_background(std::span<const GrayFrame> chunk, std::span<const GrayFrame> reference,
                        const RegionOptions& options = {});
double score_subject(std::span<const GrayFrame> chunk, std::span<const GrayFrame> reference,
                     const RegionOptions& options = {});

// --- whole-video evaluation -------------------------------------------------

struct ChunkedVideo {
  std::vector<GrayFrame> frames;
  std::size_t chunk_len = 1;

  // floor(frames / chunk_len); trailing frames are ignored.
  std::size_t chunk_count() const noexcept { return chunk_len ? frames.size() / chunk_len : 0; }
  std::span<const GrayFrame> chunk(std::size_t i) const;
  void validate() const;
};

struct EvaluateOptions {
  Weighting weighting = Weighting::Uniform;
  RegionOptions regions;
};

struct VdeReport {
  std::size_t chunks = 0;
  std::size_t chunk_len = 0;
  double vde_clarity = 0.0;
  double vde_motion = 0.0;
  double vde_aesthetic = 0.0;
  double vde_background = 0.0;
  double vde_subject = 0.0;
  // Absolute proxies, averaged over chunks.
  double subject_consistency = 0.0;     // mean subject similarity to chunk 1
  double background_consistency = 0.0;  // mean background similarity to chunk 1
  double motion_smoothness = 0.0;       // 1 - mean motion / 255
  double aesthetic_quality = 0.0;       // mean aesthetic score
  double imaging_quality = 0.0;         // mean clarity score
  std::vector<ScoreSeries> series;      // clarity, motion, aesthetic, background, subject
  // Metrics whose first-chunk score is ~0 while later chunks differ; their
  // VDE is undefined and reported as NaN.
  std::vector<std::string> degenerate;

  // "name\tvalue" per line.
  std::string to_text() const;
  nlohmann::json to_json() const;
};

// A series whose reference is ~0 scores 0 if every chunk is ~0 too (nothing
// drifted), otherwise NaN and the metric is listed in `degenerate`.
VdeReport evaluate(const ChunkedVideo& video, const EvaluateOptions& options = {});

}  // namespace inferix::metrics
