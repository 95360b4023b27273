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

#include "inferix/metrics/vde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace inferix::metrics {

namespace {

void check_shapes(std::span<const GrayFrame> frames, const char* what) {
  if (frames.empty()) throw MetricError(std::string(what) + ": empty chunk");
  for (const auto& f : frames) {
    if (f.width != frames[0].width || f.height != frames[0].height) {
      throw MetricError(std::string(what) + ": frames differ in shape");
    }
    if (f.pixels.size() != std::size_t{f.width} * f.height) {
      throw MetricError(std::string(what) + ": pixel count does not match shape");
    }
  }
}

enum class Region { Border, Center };

std::vector<double> histogram(std::span<const GrayFrame> frames, Region region, const RegionOptions& o) {
  if (o.bins == 0 || o.bins > 256) throw MetricError("histogram: bins must be in [1, 256]");
  if (!(o.margin >= 0.0 && o.margin < 0.5)) throw MetricError("histogram: margin must be in [0, 0.5)");
  std::vector<double> h(o.bins, 0.0);
  for (const auto& f : frames) {
    const auto mx = static_cast<std::size_t>(std::floor(o.margin * f.width));
    const auto my = static_cast<std::size_t>(std::floor(o.margin * f.height));
    for (std::size_t y = 0; y < f.height; ++y) {
      for (std::size_t x = 0; x < f.width; ++x) {
        const bool border = x < mx || x >= f.width - mx || y < my || y >= f.height - my;
        if (border != (region == Region::Border)) continue;
        h[f.at(x, y) * o.bins / 256] += 1.0;
      }
    }
  }
  return h;
}

double region_similarity(std::span<const GrayFrame> chunk, std::span<const GrayFrame> reference, Region region,
                         const RegionOptions& o, const char* what) {
  check_shapes(chunk, what);
  check_shapes(reference, what);
  if (chunk[0].width != reference[0].width || chunk[0].height != reference[0].height) {
    throw MetricError(std::string(what) + ": chunk and reference differ in shape");
  }
  const auto a = histogram(chunk, region, o);
  const auto b = histogram(reference, region, o);
  const double aa = std::inner_product(a.begin(), a.end(), a.begin(), 0.0);
  const double bb = std::inner_product(b.begin(), b.end(), b.begin(), 0.0);
  if (aa == 0.0 || bb == 0.0) throw MetricError(std::string(what) + ": region is empty (frames too small)");
  // sqrt(x * x) == x in IEEE arithmetic, so identical histograms give exactly 1.
  const double dot = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  return std::min(1.0, dot / std::sqrt(aa * bb));
}

// Percentages carry 12 significant digits; the remaining bits only reflect how
// decimal scores were represented in binary (1.1 - 1.0 != 0.1 exactly).
double round_significant(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return std::strtod(buf, nullptr);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

}  // namespace

void ScoreSeries::validate() const {
  if (values.size() < 2) throw MetricError("vde: need at least 2 chunks, got " + std::to_string(values.size()));
  if (!weights.empty() && weights.size() != values.size()) {
    throw MetricError("vde: weights and values differ in length");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw MetricError("vde: non-finite score");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw MetricError("vde: weights must be finite and non-negative");
  }
}

ScoreSeries ScoreSeries::with_weighting(std::string name, std::vector<double> values, Weighting w) {
  ScoreSeries s{std::move(name), std::move(values), {}};
  if (w == Weighting::ReferenceNormalized && !s.values.empty()) {
    const double ref = std::abs(s.values[0]);
    if (ref < kReferenceEpsilon) throw MetricError("vde: reference score is degenerate (|q_1| < 1e-9)");
    s.weights.reserve(s.values.size());
    for (double v : s.values) s.weights.push_back(std::abs(v) / ref);
  }
  return s;
}

double vde(std::span<const double> values, std::span<const double> weights) {
  return vde(ScoreSeries{"", {values.begin(), values.end()}, {weights.begin(), weights.end()}});
}

double vde(const ScoreSeries& s) {
  s.validate();
  const double ref = s.values[0];
  if (std::abs(ref) < kReferenceEpsilon) throw MetricError("vde: reference score is degenerate (|q_1| < 1e-9)");
  double num = 0.0, den = 0.0;
  for (std::size_t t = 1; t < s.values.size(); ++t) {
    const double w = s.weights.empty() ? 1.0 : s.weights[t];
    num += w * std::abs(s.values[t] - ref);
    den += w * std::abs(ref);
  }
  if (den == 0.0) throw MetricError("vde: weights after the first chunk sum to zero");
  return round_significant(100.0 * num / den);
}

double score_clarity(std::span<const GrayFrame> chunk) {
  check_shapes(chunk, "clarity");
  const std::size_t w = chunk[0].width, h = chunk[0].height;
  if (w < 3 || h < 3) throw MetricError("clarity: frames must be at least 3x3");
  double total = 0.0;
  for (const auto& f : chunk) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t y = 1; y + 1 < h; ++y) {
      for (std::size_t x = 1; x + 1 < w; ++x) {
        const double l = double(f.at(x - 1, y)) + f.at(x + 1, y) + f.at(x, y - 1) + f.at(x, y + 1) - 4.0 * f.at(x, y);
        sum += l;
        sq += l * l;
      }
    }
    const double n = double((w - 2) * (h - 2));
    const double m = sum / n;
    total += std::max(0.0, sq / n - m * m);
  }
  return total / double(chunk.size());
}

double score_motion(std::span<const GrayFrame> chunk) {
  check_shapes(chunk, "motion");
  if (chunk.size() < 2) throw MetricError("motion: need at least 2 frames");
  double total = 0.0;
  for (std::size_t i = 1; i < chunk.size(); ++i) {
    std::uint64_t diff = 0;
    const auto& a = chunk[i - 1].pixels;
    const auto& b = chunk[i].pixels;
    for (std::size_t p = 0; p < a.size(); ++p) diff += a[p] > b[p] ? a[p] - b[p] : b[p] - a[p];
    total += double(diff) / double(a.size());
  }
  return total / double(chunk.size() - 1);
}

double score_aesthetic(std::span<const GrayFrame> chunk) {
  check_shapes(chunk, "aesthetic");
  double total = 0.0;
  for (const auto& f : chunk) {
    double sum = 0.0, sq = 0.0;
    for (std::uint8_t p : f.pixels) {
      sum += p;
      sq += double(p) * p;
    }
    const double n = double(f.pixels.size());
    const double m = sum / n;
    total += std::sqrt(std::max(0.0, sq / n - m * m));
  }
  return total / double(chunk.size());
}

double score_background(std::span<const GrayFrame> chunk, std::span<const GrayFrame> reference,
                        const RegionOptions& options) {
  return region_similarity(chunk, reference, Region::Border, options, "background");
}

double score_subject(std::span<const GrayFrame> chunk, std::span<const GrayFrame> reference,
                     const RegionOptions& options) {
  return region_similarity(chunk, reference, Region::Center, options, "subject");
}

std::span<const GrayFrame> ChunkedVideo::chunk(std::size_t i) const {
  if (i >= chunk_count()) throw std::out_of_range("chunk index out of range");
  return std::span<const GrayFrame>(frames).subspan(i * chunk_len, chunk_len);
}

void ChunkedVideo::validate() const {
  if (chunk_len == 0) throw MetricError("video: chunk_len must be positive");
  if (chunk_count() < 2) {
    throw MetricError("video: need at least 2 chunks, got " + std::to_string(chunk_count()) + " (" +
                      std::to_string(frames.size()) + " frames, chunk_len " + std::to_string(chunk_len) + ")");
  }
  check_shapes(frames, "video");
}

VdeReport evaluate(const ChunkedVideo& video, const EvaluateOptions& options) {
  video.validate();
  if (video.chunk_len < 2) throw MetricError("video: motion needs chunk_len >= 2");
  const std::size_t T = video.chunk_count();
  std::vector<double> clarity(T), motion(T), aesthetic(T), background(T), subject(T);
  const auto ref = video.chunk(0);
  for (std::size_t t = 0; t < T; ++t) {
    const auto c = video.chunk(t);
    clarity[t] = score_clarity(c);
    motion[t] = score_motion(c);
    aesthetic[t] = score_aesthetic(c);
    background[t] = score_background(c, ref, options.regions);
    subject[t] = score_subject(c, ref, options.regions);
  }

  VdeReport r;
  r.chunks = T;
  r.chunk_len = video.chunk_len;
  r.imaging_quality = mean(clarity);
  r.motion_smoothness = 1.0 - mean(motion) / 255.0;
  r.aesthetic_quality = mean(aesthetic);
  r.background_consistency = mean(background);
  r.subject_consistency = mean(subject);

  auto drift = [&](const char* name, std::vector<double> values) {
    const bool flat_zero = std::all_of(values.begin(), values.end(),
                                       [](double v) { return std::abs(v) < kReferenceEpsilon; });
    double out;
    if (std::abs(values[0]) < kReferenceEpsilon) {
      if (flat_zero) {
        out = 0.0;
      } else {
        out = std::numeric_limits<double>::quiet_NaN();
        r.degenerate.emplace_back(name);
      }
      r.series.push_back({name, std::move(values), {}});
    } else {
      r.series.push_back(ScoreSeries::with_weighting(name, std::move(values), options.weighting));
      out = vde(r.series.back());
    }
    return out;
  };
  r.vde_clarity = drift("clarity", std::move(clarity));
  r.vde_motion = drift("motion", std::move(motion));
  r.vde_aesthetic = drift("aesthetic", std::move(aesthetic));
  r.vde_background = drift("background", std::move(background));
  r.vde_subject = drift("subject", std::move(subject));
  return r;
}

std::string VdeReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "chunks\t" << chunks << "\n"
      << "chunk_len\t" << chunk_len << "\n"
      << "vde_clarity\t" << vde_clarity << "\n"
      << "vde_motion\t" << vde_motion << "\n"
      << "vde_aesthetic\t" << vde_aesthetic << "\n"
      << "vde_background\t" << vde_background << "\n"
      << "vde_subject\t" << vde_subject << "\n"
      << "subject_consistency\t" << subject_consistency << "\n"
      << "background_consistency\t" << background_consistency << "\n"
      << "motion_smoothness\t" << motion_smoothness << "\n"
      << "aesthetic_quality\t" << aesthetic_quality << "\n"
      << "imaging_quality\t" << imaging_quality << "\n";
  return out.str();
}

nlohmann::json VdeReport::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json series_json = nlohmann::json::object();
  for (const auto& s : series) series_json[s.metric_name] = {{"values", s.values}, {"weights", s.weights}};
  return {
      {"chunks", chunks},
      {"chunk_len", chunk_len},
      {"vde",
       {{"clarity", num(vde_clarity)},
        {"motion", num(vde_motion)},
        {"aesthetic", num(vde_aesthetic)},
        {"background", num(vde_background)},
        {"subject", num(vde_subject)}}},
      {"proxies",
       {{"subject_consistency", subject_consistency},
        {"background_consistency", background_consistency},
        {"motion_smoothness", motion_smoothness},
        {"aesthetic_quality", aesthetic_quality},
        {"imaging_quality", imaging_quality}}},
      {"series", series_json},
      {"degenerate", degenerate},
  };
}

}  // namespace inferix::metrics
