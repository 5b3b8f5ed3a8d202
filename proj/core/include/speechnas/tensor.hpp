/*
 *  Copyright 2026 The speechnas Authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 */

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace speechnas {

/// Precision of an array. F64 exists for gradient checking; training runs in F32.
enum class DType { F32, F64 };

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array.
///
/// Storage is always double; an F32 array keeps every element rounded to the
/// nearest single-precision value so that results match a 32-bit pipeline
/// while accumulations run in double.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, DType dtype = DType::F32);
  NdArray(Shape shape, std::vector<double> data, DType dtype = DType::F32);

  static NdArray scalar(double value, DType dtype = DType::F32);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  DType dtype() const noexcept { return dtype_; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Row-major element access by full index.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  double item() const;

  NdArray reshaped(Shape shape) const;
  NdArray as(DType dtype) const;

  void fill(double value);
  /// Rounds every element to the array's precision (no-op for F64).
  void round_to_dtype() noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const NdArray&, const NdArray&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::F32;
};

/// Copies the leading block `extents` of `src` (extents[i] <= src.dim(i)).
NdArray leading_slice(const NdArray& src, const Shape& extents);

/// Adds `block` into the leading block of `dst` with the same rank.
void add_into_leading(NdArray& dst, const NdArray& block);

/// Overwrites the leading block of `dst` with `block`.
void assign_leading(NdArray& dst, const NdArray& block);

inline double round_f32(double v) noexcept { return static_cast<double>(static_cast<float>(v)); }

}  // namespace speechnas
