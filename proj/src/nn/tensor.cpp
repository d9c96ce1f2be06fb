#include <cmath>
#include <numeric>
#include <sstream>

#include "fedbss/errors.hpp"
#include "fedbss/nn.hpp"

namespace fedbss::nn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape_) + " holds " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

std::size_t Tensor::row_size() const noexcept {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / shape_[0];
}

std::span<const float> Tensor::row(std::size_t i) const {
  if (shape_.empty() || i >= shape_[0]) throw ShapeError("row index out of range");
  const std::size_t n = row_size();
  return std::span<const float>(data_).subspan(i * n, n);
}

std::span<float> Tensor::row(std::size_t i) {
  if (shape_.empty() || i >= shape_[0]) throw ShapeError("row index out of range");
  const std::size_t n = row_size();
  return std::span<float>(data_).subspan(i * n, n);
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::size_t ParamVector::add_segment(std::string id, Shape shape) {
  Segment seg;
  seg.id = std::move(id);
  seg.size = shape_size(shape);
  seg.shape = std::move(shape);
  seg.offset = values_.size();
  values_.resize(values_.size() + seg.size, 0.0f);
  segments_.push_back(std::move(seg));
  return segments_.size() - 1;
}

std::span<float> ParamVector::segment(std::size_t i) {
  const Segment& s = segments_.at(i);
  return std::span<float>(values_).subspan(s.offset, s.size);
}

std::span<const float> ParamVector::segment(std::size_t i) const {
  const Segment& s = segments_.at(i);
  return std::span<const float>(values_).subspan(s.offset, s.size);
}

bool ParamVector::aligned_with(const ParamVector& other) const noexcept {
  return segments_ == other.segments_;
}

void ParamVector::require_aligned(const ParamVector& other, const char* op) const {
  if (!aligned_with(other)) {
    throw ShapeError(std::string(op) + ": parameter layouts differ (" +
                     std::to_string(size()) + " vs " + std::to_string(other.size()) +
                     " values)");
  }
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out;
  out.segments_ = segments_;
  out.values_.assign(values_.size(), 0.0f);
  return out;
}

ParamVector add(const ParamVector& a, const ParamVector& b) {
  a.require_aligned(b, "add");
  ParamVector out = a;
  auto dst = out.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

ParamVector scale(const ParamVector& a, double factor) {
  ParamVector out = a;
  for (float& v : out.values()) v = static_cast<float>(static_cast<double>(v) * factor);
  return out;
}

ParamVector weighted_mean(std::span<const ParamVector> items, std::span<const double> weights) {
  if (items.empty()) throw ShapeError("mean of an empty parameter list");
  if (weights.size() != items.size()) throw ShapeError("weight count differs from item count");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ShapeError("aggregation weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ShapeError("aggregation weights sum to zero");

  const ParamVector& first = items.front();
  for (const ParamVector& p : items) first.require_aligned(p, "mean");

  std::vector<double> acc(first.size(), 0.0);
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto v = items[k].values();
    const double w = weights[k];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * static_cast<double>(v[i]);
  }
  ParamVector out = first.zeros_like();
  auto dst = out.values();
  for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i] / total);
  return out;
}

ParamVector mean(std::span<const ParamVector> items) {
  std::vector<double> ones(items.size(), 1.0);
  return weighted_mean(items, ones);
}

}  // namespace fedbss::nn
