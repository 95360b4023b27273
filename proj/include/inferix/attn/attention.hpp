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
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "inferix/attn/tensor.hpp"

namespace inferix::attn {

class MaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Boolean rows x cols matrix; allowed(i, j) means query i may attend key j.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, bool fill = false);

  static AttentionMask full(std::size_t rows, std::size_t cols) { return {rows, cols, true}; }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  bool allowed(std::size_t i, std::size_t j) const { return bits_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits_[i * cols_ + j] = v ? 1 : 0; }

  std::size_t count_allowed() const noexcept;
  std::size_t count_allowed_in_row(std::size_t i) const;

  // Sub-mask over rows [r0, r1) and cols [c0, c1).
  AttentionMask slice(std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) const;

  // Throws MaskError if any row has no allowed key.
  void require_no_empty_rows() const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Unnormalized online-softmax state for a set of queries over a subset of
// keys. Rows that have seen no allowed key hold row_max = -inf, denom = 0,
// acc = 0; that state is the merge identity.
struct AttentionPartial {
  Tensor acc;                  // [n, d]
  std::vector<float> row_max;  // [n]
  std::vector<float> denom;    // [n]

  static AttentionPartial empty(std::size_t n, std::size_t d);

  std::size_t queries() const { return row_max.size(); }
  std::size_t head_dim() const { return acc.cols(); }

  // acc / denom; throws MaskError if some row never saw an allowed key.
  Tensor finalize() const;
};

// softmax(q k^T / sqrt(d)) v restricted to allowed keys. One head.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask);

// Partial over one key shard. Rows fully masked in this shard stay empty.
AttentionPartial attention_partial(const Tensor& q, const Tensor& k_shard, const Tensor& v_shard,
                                   const AttentionMask& mask_shard);

AttentionPartial merge_partials(const AttentionPartial& a, const AttentionPartial& b);

// Full attention inside a block, causal across blocks.
AttentionMask block_causal_mask(std::size_t num_blocks, std::size_t block_len);

// Multi-head attention on packed [tokens, heads * head_dim] tensors, one
// scaled_dot_attention call per head.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const AttentionMask& mask);

// Dispatch point for multi-head attention. The dense implementation calls
// multi_head_attention; sequence-parallel strategies plug in here.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        const AttentionMask& mask) = 0;
};

class DenseBackend final : public Backend {
 public:
  Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                const AttentionMask& mask) override {
    return multi_head_attention(q, k, v, heads, mask);
  }
};

}  // namespace inferix::attn
