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

#include "inferix/attn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace inferix::attn {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("attention: q, k, v must be rank 2");
  }
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: q " + shape_string(q) + " and k " + shape_string(k) +
                         " head dims differ");
  }
  if (k.rows() != v.rows() || v.cols() != q.cols()) {
    throw DimensionError("attention: v " + shape_string(v) + " inconsistent with k " +
                         shape_string(k));
  }
  if (mask.rows() != q.rows() || mask.cols() != k.rows()) {
    throw DimensionError("attention: mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " does not match " +
                         std::to_string(q.rows()) + "x" + std::to_string(k.rows()));
  }
}

float dot(std::span<const float> a, std::span<const float> b) {
  float s = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

AttentionMask::AttentionMask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

std::size_t AttentionMask::count_allowed() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::size_t AttentionMask::count_allowed_in_row(std::size_t i) const {
  const auto first = bits_.begin() + static_cast<std::ptrdiff_t>(i * cols_);
  return static_cast<std::size_t>(
      std::count(first, first + static_cast<std::ptrdiff_t>(cols_), std::uint8_t{1}));
}

AttentionMask AttentionMask::slice(std::size_t r0, std::size_t r1, std::size_t c0,
                                   std::size_t c1) const {
  if (r0 > r1 || r1 > rows_ || c0 > c1 || c1 > cols_) {
    throw DimensionError("mask slice out of range");
  }
  AttentionMask out(r1 - r0, c1 - c0);
  for (std::size_t i = r0; i < r1; ++i) {
    for (std::size_t j = c0; j < c1; ++j) out.set(i - r0, j - c0, allowed(i, j));
  }
  return out;
}

void AttentionMask::require_no_empty_rows() const {
  for (std::size_t i = 0; i < rows_; ++i) {
    if (count_allowed_in_row(i) == 0) {
      throw MaskError("attention mask row " + std::to_string(i) + " has no allowed key");
    }
  }
}

AttentionPartial AttentionPartial::empty(std::size_t n, std::size_t d) {
  return {Tensor::zeros(n, d), std::vector<float>(n, kNegInf), std::vector<float>(n, 0.0f)};
}

Tensor AttentionPartial::finalize() const {
  Tensor out = Tensor::zeros(queries(), head_dim());
  for (std::size_t i = 0; i < queries(); ++i) {
    if (!(denom[i] > 0.0f)) {
      throw MaskError("attention partial row " + std::to_string(i) + " saw no allowed key");
    }
    const float inv = 1.0f / denom[i];
    auto src = acc.row(i);
    auto dst = out.row(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = src[c] * inv;
  }
  return out;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask) {
  check_qkv(q, k, v, mask);
  mask.require_no_empty_rows();
  const std::size_t n = q.rows(), m = k.rows(), d = q.cols();
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  Tensor out = Tensor::zeros(n, d);
  std::vector<float> logits(m);
  for (std::size_t i = 0; i < n; ++i) {
    float row_max = kNegInf;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask.allowed(i, j)) continue;
      logits[j] = dot(q.row(i), k.row(j)) * scale;
      row_max = std::max(row_max, logits[j]);
    }
    float denom = 0.0f;
    auto dst = out.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask.allowed(i, j)) continue;
      const float w = std::exp(logits[j] - row_max);
      denom += w;
      auto vj = v.row(j);
      for (std::size_t c = 0; c < d; ++c) dst[c] += w * vj[c];
    }
    const float inv = 1.0f / denom;
    for (std::size_t c = 0; c < d; ++c) dst[c] *= inv;
  }
  return out;
}

AttentionPartial attention_partial(const Tensor& q, const Tensor& k_shard, const Tensor& v_shard,
                                   const AttentionMask& mask_shard) {
  check_qkv(q, k_shard, v_shard, mask_shard);
  const std::size_t n = q.rows(), m = k_shard.rows(), d = q.cols();
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  AttentionPartial p = AttentionPartial::empty(n, d);
  std::vector<float> logits(m);
  for (std::size_t i = 0; i < n; ++i) {
    float row_max = kNegInf;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask_shard.allowed(i, j)) continue;
      logits[j] = dot(q.row(i), k_shard.row(j)) * scale;
      row_max = std::max(row_max, logits[j]);
    }
    if (row_max == kNegInf) continue;
    float denom = 0.0f;
    auto acc = p.acc.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask_shard.allowed(i, j)) continue;
      const float w = std::exp(logits[j] - row_max);
      denom += w;
      auto vj = v_shard.row(j);
      for (std::size_t c = 0; c < d; ++c) acc[c] += w * vj[c];
    }
    p.row_max[i] = row_max;
    p.denom[i] = denom;
  }
  return p;
}

AttentionPartial merge_partials(const AttentionPartial& a, const AttentionPartial& b) {
  if (a.queries() != b.queries() || a.acc.shape() != b.acc.shape()) {
    throw DimensionError("merge_partials: partial shapes differ " + shape_string(a.acc) + " vs " +
                         shape_string(b.acc));
  }
  const std::size_t n = a.queries(), d = a.head_dim();
  AttentionPartial out = AttentionPartial::empty(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const float m = std::max(a.row_max[i], b.row_max[i]);
    if (m == kNegInf) continue;
    const float sa = a.row_max[i] == kNegInf ? 0.0f : std::exp(a.row_max[i] - m);
    const float sb = b.row_max[i] == kNegInf ? 0.0f : std::exp(b.row_max[i] - m);
    out.row_max[i] = m;
    out.denom[i] = a.denom[i] * sa + b.denom[i] * sb;
    auto ra = a.acc.row(i);
    auto rb = b.acc.row(i);
    auto dst = out.acc.row(i);
    for (std::size_t c = 0; c < d; ++c) dst[c] = ra[c] * sa + rb[c] * sb;
  }
  return out;
}

AttentionMask block_causal_mask(std::size_t num_blocks, std::size_t block_len) {
  if (num_blocks == 0 || block_len == 0) {
    throw MaskError("block_causal_mask: num_blocks and block_len must be >= 1");
  }
  const std::size_t n = num_blocks * block_len;
  AttentionMask mask(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t visible = (i / block_len + 1) * block_len;
    for (std::size_t j = 0; j < visible; ++j) mask.set(i, j, true);
  }
  return mask;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const AttentionMask& mask) {
  if (heads == 0 || q.cols() % heads != 0) {
    throw DimensionError("multi_head_attention: width " + std::to_string(q.cols()) +
                         " not divisible by heads " + std::to_string(heads));
  }
  if (k.cols() != q.cols() || v.cols() != q.cols()) {
    throw DimensionError("multi_head_attention: q, k, v widths differ");
  }
  const std::size_t d = q.cols() / heads;
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(scaled_dot_attention(slice_cols(q, h * d, (h + 1) * d),
                                        slice_cols(k, h * d, (h + 1) * d),
                                        slice_cols(v, h * d, (h + 1) * d), mask));
  }
  return concat_cols(outs, q.rows());
}

}  // namespace inferix::attn
