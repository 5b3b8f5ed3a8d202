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

#include "speechnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "speechnas/errors.hpp"

namespace speechnas {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NdArray::NdArray(Shape shape, DType dtype)
    : shape_(std::move(shape)), data_(numel(shape_), 0.0), dtype_(dtype) {}

NdArray::NdArray(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("NdArray: shape " + to_string(shape_) + " needs " +
                     std::to_string(numel(shape_)) + " values, got " + std::to_string(data_.size()));
  }
  round_to_dtype();
}

NdArray NdArray::scalar(double value, DType dtype) { return NdArray({}, {value}, dtype); }

std::size_t NdArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

std::size_t NdArray::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch for " + to_string(shape_));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range for " + to_string(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& NdArray::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double NdArray::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

double NdArray::item() const {
  if (data_.size() != 1) throw ShapeError("item() on array of shape " + to_string(shape_));
  return data_[0];
}

NdArray NdArray::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  NdArray out = *this;
  out.shape_ = std::move(shape);
  return out;
}

NdArray NdArray::as(DType dtype) const {
  NdArray out = *this;
  out.dtype_ = dtype;
  out.round_to_dtype();
  return out;
}

void NdArray::fill(double value) {
  std::fill(data_.begin(), data_.end(), value);
  round_to_dtype();
}

void NdArray::round_to_dtype() noexcept {
  if (dtype_ == DType::F32) {
    for (double& v : data_) v = round_f32(v);
  }
}

bool NdArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

// Visits every innermost contiguous run of the leading block `extents` inside
// an array of shape `full`; fn(full_offset, block_offset, run_length).
template <typename Fn>
void for_each_leading_run(const Shape& full, const Shape& extents, Fn&& fn) {
  if (full.size() != extents.size()) {
    throw ShapeError("leading slice rank mismatch: " + to_string(full) + " vs " + to_string(extents));
  }
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (extents[i] > full[i]) {
      throw ShapeError("leading slice " + to_string(extents) + " exceeds " + to_string(full));
    }
  }
  if (full.empty()) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{1});
    return;
  }
  const std::size_t rank = full.size();
  const std::size_t run = extents.back();
  if (numel(extents) == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t block_off = 0;
  while (true) {
    std::size_t full_off = 0;
    for (std::size_t a = 0; a < rank; ++a) full_off = full_off * full[a] + idx[a];
    fn(full_off, block_off, run);
    block_off += run;
    // advance over all but the last axis
    std::size_t a = rank - 1;
    while (a > 0) {
      --a;
      if (++idx[a] < extents[a]) break;
      idx[a] = 0;
      if (a == 0) return;
    }
    if (rank == 1) return;
  }
}

}  // namespace

NdArray leading_slice(const NdArray& src, const Shape& extents) {
  NdArray out(extents, src.dtype());
  const double* s = src.raw();
  double* d = out.raw();
  for_each_leading_run(src.shape(), extents, [&](std::size_t fo, std::size_t bo, std::size_t n) {
    std::copy_n(s + fo, n, d + bo);
  });
  return out;
}

void add_into_leading(NdArray& dst, const NdArray& block) {
  double* d = dst.raw();
  const double* b = block.raw();
  for_each_leading_run(dst.shape(), block.shape(), [&](std::size_t fo, std::size_t bo, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) d[fo + i] += b[bo + i];
  });
}

void assign_leading(NdArray& dst, const NdArray& block) {
  double* d = dst.raw();
  const double* b = block.raw();
  for_each_leading_run(dst.shape(), block.shape(), [&](std::size_t fo, std::size_t bo, std::size_t n) {
    std::copy_n(b + bo, n, d + fo);
  });
  dst.round_to_dtype();
}

}  // namespace speechnas
