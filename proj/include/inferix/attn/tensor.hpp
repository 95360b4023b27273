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

namespace inferix::attn {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense float32 tensor, row-major. Most of the code base only uses rank 2
// ([rows, cols]); higher ranks are carried but not interpreted.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const;
  std::size_t cols() const;

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const float> row(std::size_t r) const {
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  bool all_finite() const noexcept;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

std::string shape_string(const Tensor& t);

// a[n,k] * b[k,m] -> [n,m]. Accumulates in ascending k order.
Tensor matmul(const Tensor& a, const Tensor& b);
// Row-wise concatenation; all parts must share cols. Empty list -> [0, cols].
Tensor concat_rows(std::span<const Tensor> parts, std::size_t cols);
Tensor concat_cols(std::span<const Tensor> parts, std::size_t rows);
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t end);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace inferix::attn
