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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "inferix/common/rng.hpp"
#include "inferix/engine/generator.hpp"
#include "inferix/metrics/frame_io.hpp"
#include "inferix/metrics/manifest.hpp"
#include "inferix/metrics/vde.hpp"
#include "inferix/stream/codec.hpp"

namespace inferix::metrics {
namespace {

namespace fs = std::filesystem;

GrayFrame constant(std::uint16_t w, std::uint16_t h, std::uint8_t v) {
  return {w, h, std::vector<std::uint8_t>(std::size_t{w} * h, v)};
}

GrayFrame checkerboard(std::uint16_t w, std::uint16_t h, std::uint8_t lo = 0, std::uint8_t hi = 255) {
  GrayFrame f = constant(w, h, lo);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if ((x + y) % 2) f.pixels[y * w + x] = hi;
    }
  }
  return f;
}

GrayFrame noise(std::uint16_t w, std::uint16_t h, std::uint64_t seed) {
  SplitMix64 rng(seed);
  GrayFrame f = constant(w, h, 0);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng.next());
  return f;
}

// 3x3 box blur with clamped edges, applied `passes` times.
GrayFrame blur(GrayFrame f, int passes) {
  for (int p = 0; p < passes; ++p) {
    GrayFrame out = f;
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) {
        int sum = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = std::clamp(x + dx, 0, f.width - 1);
            const int yy = std::clamp(y + dy, 0, f.height - 1);
            sum += f.at(xx, yy);
          }
        }
        out.pixels[y * f.width + x] = static_cast<std::uint8_t>((sum + 4) / 9);
      }
    }
    f = std::move(out);
  }
  return f;
}

// Laplacian variance written out directly for one frame.
double laplacian_variance_oracle(const GrayFrame& f) {
  std::vector<double> r;
  for (int y = 1; y + 1 < f.height; ++y) {
    for (int x = 1; x + 1 < f.width; ++x) {
      r.push_back(double(f.at(x + 1, y)) + f.at(x - 1, y) + f.at(x, y + 1) + f.at(x, y - 1) - 4.0 * f.at(x, y));
    }
  }
  double m = 0;
  for (double v : r) m += v;
  m /= double(r.size());
  double var = 0;
  for (double v : r) var += (v - m) * (v - m);
  return var / double(r.size());
}

// --- vde ----------------------------------------------------------------------

TEST(Vde, ConstantSeriesIsZero) { EXPECT_EQ(vde(std::vector<double>{5, 5, 5, 5}), 0.0); }

TEST(Vde, HandWorkedExample) {
  // 100 * (0.1 + 0.1) / (2 * 1.0)
  EXPECT_EQ(vde(std::vector<double>{1.0, 1.1, 0.9}), 10.0);
  // 100 * (1*|3-2| + 3*|0-2|) / ((1 + 3) * 2) = 100 * 7 / 8
  EXPECT_EQ(vde(std::vector<double>{2, 3, 0}, std::vector<double>{9, 1, 3}), 87.5);
}

TEST(Vde, ScaleInvariance) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(2 + rng.next() % 10), scaled;
    for (auto& v : q) v = 0.5 + rng.uniform() * 10;
    for (double v : q) scaled.push_back(3.7 * v);
    const double a = vde(q), b = vde(scaled);
    EXPECT_NEAR(a, b, 1e-9 * std::max(1.0, std::abs(a)));
  }
}

TEST(Vde, WeightRescalingCancels) {
  const std::vector<double> q = {2.0, 2.5, 1.0, 3.0};
  const std::vector<double> w = {1.0, 0.5, 2.0, 1.5};
  std::vector<double> w10;
  for (double x : w) w10.push_back(10 * x);
  EXPECT_NEAR(vde(q, w), vde(q, w10), 1e-9);
  // The first weight never matters.
  EXPECT_EQ(vde(q, std::vector<double>{0.0, 0.5, 2.0, 1.5}), vde(q, w));
}

TEST(Vde, ZeroOnlyWithoutDrift) {
  EXPECT_GT(vde(std::vector<double>{1.0, 1.0, 1.0 + 1e-12}), 0.0);
  EXPECT_GE(vde(std::vector<double>{-3.0, 4.0}), 0.0);
  EXPECT_EQ(vde(std::vector<double>{-3.0, -3.0}), 0.0);
}

TEST(Vde, Errors) {
  EXPECT_THROW(vde(std::vector<double>{1.0}), MetricError);
  EXPECT_THROW(vde(std::vector<double>{0.0, 1.0}), MetricError);
  EXPECT_THROW(vde(std::vector<double>{1e-10, 1.0}), MetricError);
  EXPECT_THROW(vde(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), MetricError);
  EXPECT_THROW(vde(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, -1.0}), MetricError);
  EXPECT_THROW(vde(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 0.0}), MetricError);
  EXPECT_THROW(vde(std::vector<double>{1.0, NAN}), MetricError);
}

TEST(Vde, ReferenceNormalizedWeighting) {
  const auto s = ScoreSeries::with_weighting("m", {2.0, 4.0, 1.0}, Weighting::ReferenceNormalized);
  ASSERT_EQ(s.weights, (std::vector<double>{1.0, 2.0, 0.5}));
  // 100 * (2*2 + 0.5*1) / ((2 + 0.5) * 2)
  EXPECT_EQ(vde(s), 90.0);
}

// --- scorers --------------------------------------------------------------------

TEST(Clarity, MatchesOracleAndIsZeroForFlatFrames) {
  const GrayFrame f = noise(11, 7, 4);
  const std::vector<GrayFrame> c = {f};
  EXPECT_NEAR(score_clarity(c), laplacian_variance_oracle(f), 1e-9);
  const std::vector<GrayFrame> flat = {constant(8, 8, 77)};
  EXPECT_EQ(score_clarity(flat), 0.0);
}

TEST(Clarity, CheckerboardBeatsBlurredCopy) {
  const GrayFrame sharp = checkerboard(16, 16);
  const std::vector<GrayFrame> a = {sharp}, b = {blur(sharp, 2)};
  EXPECT_GT(score_clarity(a), score_clarity(b));
}

TEST(Clarity, DuplicateFramesDoNotChangeScore) {
  const GrayFrame f = noise(9, 9, 1);
  const std::vector<GrayFrame> one = {f}, three = {f, f, f};
  EXPECT_DOUBLE_EQ(score_clarity(one), score_clarity(three));
}

TEST(Clarity, Errors) {
  EXPECT_THROW(score_clarity({}), MetricError);
  const std::vector<GrayFrame> tiny = {constant(2, 5, 0)};
  EXPECT_THROW(score_clarity(tiny), MetricError);
  const std::vector<GrayFrame> mixed = {constant(4, 4, 0), constant(5, 4, 0)};
  EXPECT_THROW(score_clarity(mixed), MetricError);
}

TEST(Motion, StepOfTenScoresTenExactly) {
  std::vector<GrayFrame> c;
  for (int i = 0; i < 6; ++i) c.push_back(constant(7, 5, static_cast<std::uint8_t>(20 + 10 * i)));
  EXPECT_EQ(score_motion(c), 10.0);
}

TEST(Motion, IdenticalFramesAndReversal) {
  const GrayFrame f = noise(8, 8, 2);
  const std::vector<GrayFrame> still = {f, f, f};
  EXPECT_EQ(score_motion(still), 0.0);
  std::vector<GrayFrame> c = {noise(8, 8, 3), noise(8, 8, 4), noise(8, 8, 5), noise(8, 8, 6)};
  const double forward = score_motion(c);
  std::reverse(c.begin(), c.end());
  EXPECT_EQ(score_motion(c), forward);
  EXPECT_THROW(score_motion(std::vector<GrayFrame>{f}), MetricError);
}

TEST(Aesthetic, StdOfIntensity) {
  const std::vector<GrayFrame> flat = {constant(5, 5, 200)};
  EXPECT_EQ(score_aesthetic(flat), 0.0);
  // Half 0, half 255 -> std 127.5.
  const std::vector<GrayFrame> board = {checkerboard(4, 4)};
  EXPECT_DOUBLE_EQ(score_aesthetic(board), 127.5);
}

TEST(Regions, SelfSimilarityIsOne) {
  const std::vector<GrayFrame> c = {noise(16, 12, 1), noise(16, 12, 2)};
  EXPECT_EQ(score_background(c, c), 1.0);
  EXPECT_EQ(score_subject(c, c), 1.0);
}

TEST(Regions, CenterPerturbationMovesOnlySubject) {
  const GrayFrame base = noise(16, 16, 9);
  GrayFrame changed = base;
  // Center region is [4, 12) in both dimensions at 25% margins.
  for (int y = 4; y < 12; ++y) {
    for (int x = 4; x < 12; ++x) changed.pixels[y * 16 + x] = 255;
  }
  const std::vector<GrayFrame> ref = {base}, cur = {changed};
  EXPECT_NEAR(score_background(cur, ref), 1.0, 1e-6);
  EXPECT_LT(score_subject(cur, ref), 0.9);
}

TEST(Regions, BorderPerturbationMovesOnlyBackground) {
  const GrayFrame base = noise(16, 16, 10);
  GrayFrame changed = base;
  for (int x = 0; x < 16; ++x) changed.pixels[x] = 0;
  const std::vector<GrayFrame> ref = {base}, cur = {changed};
  EXPECT_EQ(score_subject(cur, ref), 1.0);
  EXPECT_LT(score_background(cur, ref), 1.0);
}

TEST(Regions, TooSmallFramesAreDegenerate) {
  const std::vector<GrayFrame> c = {constant(3, 3, 1)};
  EXPECT_THROW(score_background(c, c), MetricError);  // 25% of 3 rounds to no border
}

// --- evaluate -------------------------------------------------------------------

ChunkedVideo repeat_chunk(const std::vector<GrayFrame>& chunk, std::size_t times) {
  ChunkedVideo v;
  v.chunk_len = chunk.size();
  for (std::size_t t = 0; t < times; ++t) v.frames.insert(v.frames.end(), chunk.begin(), chunk.end());
  return v;
}

TEST(Evaluate, IdenticalChunksGiveZeroDrift) {
  const auto r = evaluate(repeat_chunk({noise(12, 12, 1), noise(12, 12, 2), noise(12, 12, 3)}, 4));
  EXPECT_EQ(r.chunks, 4u);
  EXPECT_EQ(r.vde_clarity, 0.0);
  EXPECT_EQ(r.vde_motion, 0.0);
  EXPECT_EQ(r.vde_aesthetic, 0.0);
  EXPECT_EQ(r.vde_background, 0.0);
  EXPECT_EQ(r.vde_subject, 0.0);
  EXPECT_EQ(r.subject_consistency, 1.0);
  EXPECT_TRUE(r.degenerate.empty());
}

TEST(Evaluate, StaticFlatVideoIsZeroNotAnError) {
  // Clarity, motion and aesthetic are all 0 in every chunk.
  const auto r = evaluate(repeat_chunk({constant(8, 8, 90), constant(8, 8, 90)}, 3));
  EXPECT_EQ(r.vde_clarity, 0.0);
  EXPECT_EQ(r.vde_motion, 0.0);
  EXPECT_EQ(r.vde_aesthetic, 0.0);
  EXPECT_TRUE(r.degenerate.empty());
}

TEST(Evaluate, DegenerateReferenceIsFlagged) {
  ChunkedVideo v = repeat_chunk({constant(8, 8, 90), constant(8, 8, 90)}, 2);
  v.frames[3] = constant(8, 8, 120);  // motion appears only in chunk 2
  const auto r = evaluate(v);
  EXPECT_TRUE(std::isnan(r.vde_motion));
  EXPECT_EQ(r.degenerate, std::vector<std::string>{"motion"});
  EXPECT_TRUE(r.to_json()["vde"]["motion"].is_null());
}

ChunkedVideo progressive_blur(int strength) {
  std::vector<GrayFrame> base = {checkerboard(24, 24, 40, 220), noise(24, 24, 5), noise(24, 24, 6)};
  ChunkedVideo v;
  v.chunk_len = base.size();
  for (int t = 0; t < 4; ++t) {
    for (const auto& f : base) v.frames.push_back(blur(f, strength * t));
  }
  return v;
}

TEST(Evaluate, ClarityDriftGrowsWithBlurStrength) {
  const double a = evaluate(progressive_blur(1)).vde_clarity;
  const double b = evaluate(progressive_blur(2)).vde_clarity;
  const double c = evaluate(progressive_blur(3)).vde_clarity;
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, b);
  EXPECT_LT(b, c);
}

TEST(Evaluate, RejectsShortVideos) {
  ChunkedVideo v{{noise(8, 8, 1), noise(8, 8, 2), noise(8, 8, 3)}, 2};
  EXPECT_THROW(evaluate(v), MetricError);  // one full chunk
  EXPECT_THROW(evaluate(ChunkedVideo{{noise(8, 8, 1), noise(8, 8, 2)}, 1}), MetricError);
  EXPECT_THROW(evaluate(ChunkedVideo{{noise(8, 8, 1)}, 0}), MetricError);
}

TEST(Evaluate, EngineOutputComposesEndToEnd) {
  engine::ModelConfig cfg;
  cfg.head_dim = 8;
  cfg.block_len = 8;
  cfg.frame_height = 16;
  cfg.frame_width = 16;
  engine::GenerationRequest req;
  req.num_blocks = 4;
  req.prompt_schedule = {{0, "a harbour"}, {2, "a forest"}};
  const engine::Model model(cfg);
  const auto blocks = engine::generate_sequence(model, req);
  ChunkedVideo v;
  v.chunk_len = cfg.block_len;
  for (const auto& b : blocks) v.frames.insert(v.frames.end(), b.frames.begin(), b.frames.end());
  const auto r = evaluate(v);
  EXPECT_EQ(r.chunks, 4u);
  for (double x : {r.vde_clarity, r.vde_motion, r.vde_aesthetic, r.vde_background, r.vde_subject,
                   r.subject_consistency, r.background_consistency, r.motion_smoothness, r.aesthetic_quality,
                   r.imaging_quality}) {
    EXPECT_TRUE(std::isfinite(x));
    EXPECT_GE(x, 0.0);
  }
  EXPECT_TRUE(r.degenerate.empty());
  // Text report: one "name\tvalue" per line.
  std::istringstream text(r.to_text());
  std::string line;
  int lines = 0;
  while (std::getline(text, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 1) << line;
    ++lines;
  }
  EXPECT_EQ(lines, 12);
  EXPECT_EQ(r.to_json()["vde"]["clarity"].get<double>(), r.vde_clarity);
}

// --- frame files ------------------------------------------------------------------

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("inferix_metrics_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TEST(FrameIo, RoundTripAndOrdering) {
  const auto dir = scratch("io");
  std::vector<GrayFrame> frames;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 11; ++i) {
      frames.push_back(noise(5, 3, c * 100 + i));
      write_gray(dir / frame_file_name(c, i), frames.back());
    }
  }
  std::ofstream(dir / "notes.txt") << "ignored";
  EXPECT_EQ(load_frame_dir(dir), frames);
  EXPECT_EQ(frame_file_name(3, 12), "frame_00003_012.gray");
  const auto bytes = fs::file_size(dir / frame_file_name(0, 0));
  EXPECT_EQ(bytes, 4u + 15u);
}

TEST(FrameIo, Errors) {
  const auto dir = scratch("io_err");
  EXPECT_THROW(load_frame_dir(dir / "missing"), IoError);
  EXPECT_THROW(load_frame_dir(dir), IoError);
  std::ofstream(dir / "bad.gray", std::ios::binary) << "\x04\x00\x04\x00short";
  EXPECT_THROW(read_gray(dir / "bad.gray"), IoError);
}

TEST(FrameIo, StreamCaptureYieldsTheSameFrames) {
  const auto dir = scratch("capture");
  std::vector<GrayFrame> frames = {noise(6, 4, 1), noise(6, 4, 2), noise(6, 4, 3)};
  std::ofstream out(dir / "run.infx", std::ios::binary);
  auto put = [&](const stream::StreamMessage& m) {
    const auto b = stream::encode_message(m);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };
  put(stream::json_message(stream::MessageKind::Hello, {{"protocol", 1}}));
  for (std::size_t i = 0; i < frames.size(); ++i) put(stream::make_frame({0, static_cast<std::uint16_t>(i), frames[i]}));
  put(stream::make_end());
  out.close();
  EXPECT_EQ(load_stream_capture(dir / "run.infx"), frames);
  std::ofstream(dir / "junk.infx") << "nope";
  EXPECT_THROW(load_stream_capture(dir / "junk.infx"), IoError);
}

// --- manifest ---------------------------------------------------------------------

const std::map<std::string, std::size_t> kTableCounts = {{"animals", 171}, {"environment", 158}, {"humans", 671}};

TEST(Manifest, ThousandEntriesSplitEightHundredTwoHundred) {
  const auto m = split_manifest(synthetic_manifest(kTableCounts, 1), 42);
  EXPECT_EQ(m.entries.size(), 1000u);
  EXPECT_EQ(m.count(Split::Train), 800u);
  EXPECT_EQ(m.count(Split::Eval), 200u);
  EXPECT_EQ(m.count(Split::Unassigned), 0u);
}

TEST(Manifest, ClassProportionsPreservedInBothSplits) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto m = split_manifest(synthetic_manifest(kTableCounts, seed), seed * 7);
    for (const auto& [cls, n] : kTableCounts) {
      const double overall = double(n) / 1000.0;
      EXPECT_NEAR(double(m.count(Split::Train, cls)) / 800.0, overall, 0.05) << cls;
      EXPECT_NEAR(double(m.count(Split::Eval, cls)) / 200.0, overall, 0.05) << cls;
    }
  }
}

TEST(Manifest, DeterministicAndSeedDependent) {
  const auto base = synthetic_manifest(kTableCounts, 4);
  const auto a = split_manifest(base, 9);
  const auto b = split_manifest(base, 9);
  const auto c = split_manifest(base, 10);
  EXPECT_EQ(a.entries, b.entries);
  EXPECT_NE(a.entries, c.entries);
  // Independent of input order.
  auto shuffled = base;
  std::reverse(shuffled.entries.begin(), shuffled.entries.end());
  auto d = split_manifest(shuffled, 9);
  std::reverse(d.entries.begin(), d.entries.end());
  EXPECT_EQ(a.entries, d.entries);
}

TEST(Manifest, SplitSizesWithinOneOfRatio) {
  for (std::size_t n = 5; n < 60; ++n) {
    const auto m = split_manifest(synthetic_manifest({{"a", n / 2}, {"b", n - n / 2}}, n), 3);
    EXPECT_LE(std::abs(double(m.count(Split::Train)) - 0.8 * double(n)), 1.0) << n;
  }
  EXPECT_THROW(split_manifest(synthetic_manifest({{"a", 4}}, 1), 1), MetricError);
}

TEST(Manifest, CsvRoundTrip) {
  const auto m = split_manifest(synthetic_manifest({{"humans", 6}, {"animals", 4}}, 2), 5);
  std::stringstream ss;
  write_manifest(ss, m);
  EXPECT_EQ(read_manifest(ss).entries, m.entries);
}

TEST(Manifest, CsvErrors) {
  std::istringstream bad_header("name,source,class,duration_s\n");
  EXPECT_THROW(read_manifest(bad_header), MetricError);
  std::istringstream short_row("id,source,class,duration_s\nv1,s,humans\n");
  EXPECT_THROW(read_manifest(short_row), MetricError);
  std::istringstream bad_duration("id,source,class,duration_s\nv1,s,humans,ten\n");
  EXPECT_THROW(read_manifest(bad_duration), MetricError);
  std::istringstream dup("id,source,class,duration_s\nv1,s,humans,1\nv1,s,humans,2\n");
  EXPECT_THROW(read_manifest(dup), MetricError);
  std::istringstream ok("id,source,class,duration_s\n\nv1, s ,humans,12.5\n");
  const auto m = read_manifest(ok);
  ASSERT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.entries[0].source, "s");
  EXPECT_EQ(m.entries[0].duration_s, 12.5);
}

}  // namespace
}  // namespace inferix::metrics
