#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "fedbss/data.hpp"
#include "fedbss/errors.hpp"
#include "fedbss/rng.hpp"

namespace fedbss::data {

nn::Shape Dataset::sample_shape() const {
  const nn::Shape& s = samples.shape();
  return s.empty() ? nn::Shape{} : nn::Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  if (labels.empty()) throw ShapeError("dataset must hold at least one sample");
  if (samples.rank() < 2 || samples.dim(0) != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(labels.size()) + " labels for samples of shape " +
                     nn::shape_to_string(samples.shape()));
  }
  if (num_classes < 1) throw LabelError("dataset needs at least one class");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw LabelError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset make_dataset(nn::Tensor samples, std::vector<nn::Label> labels, std::size_t num_classes) {
  Dataset d{std::move(samples), std::move(labels), num_classes};
  d.validate();
  return d;
}

nn::Tensor gather_samples(const Dataset& dataset, std::span<const std::size_t> indices) {
  nn::Shape shape = dataset.sample_shape();
  shape.insert(shape.begin(), indices.size());
  const std::size_t row = dataset.samples.row_size();
  std::vector<float> values(indices.size() * row);
  auto src = dataset.samples.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= dataset.size()) throw ShapeError("sample index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[k] * row), row,
                values.begin() + static_cast<std::ptrdiff_t>(k * row));
  }
  return nn::Tensor(std::move(shape), std::move(values));
}

std::vector<nn::Label> gather_labels(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<nn::Label> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(dataset.labels.at(i));
  return out;
}

Dataset subset(const Dataset& parent, std::span<const std::size_t> indices) {
  return Dataset{gather_samples(parent, indices), gather_labels(parent, indices), parent.num_classes};
}

Dataset synth_gaussian_mixture(std::size_t n_classes, std::size_t n_per_class, std::size_t dim, double spread,
                               std::uint64_t seed, std::uint64_t sample_stream) {
  if (n_classes < 1 || n_per_class < 1 || dim < 1) throw ConfigError("synthetic dataset counts must be >= 1");
  if (!(spread > 0.0) || !std::isfinite(spread)) throw ConfigError("synthetic spread must be > 0");

  std::normal_distribution<double> unit(0.0, 1.0);
  Rng mean_rng = make_rng(seed, Stream::kSynthMeans);
  std::vector<double> means(n_classes * dim);
  for (double& m : means) m = unit(mean_rng);

  Rng rng = make_rng(seed, Stream::kSynthSamples, {sample_stream});
  const std::size_t total = n_classes * n_per_class;
  std::vector<float> values(total * dim);
  std::vector<nn::Label> labels(total);
  std::size_t s = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t k = 0; k < n_per_class; ++k, ++s) {
      labels[s] = static_cast<nn::Label>(c);
      for (std::size_t j = 0; j < dim; ++j) {
        values[s * dim + j] = static_cast<float>(means[c * dim + j] + spread * unit(rng));
      }
    }
  }
  return make_dataset(nn::Tensor({total, dim}, std::move(values)), std::move(labels), n_classes);
}

Dataset inject_label_noise(const Dataset& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("noise ratio must lie in [0, 1]");
  Dataset out = dataset;
  const std::size_t total = dataset.size();
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  const auto flips = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total) + 1e-9));
  if (flips == 0) return out;
  if (dataset.num_classes < 2) throw ConfigError("label noise needs at least two classes");

  Rng rng = make_rng(seed, Stream::kNoise);
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<nn::Label> other(0, static_cast<nn::Label>(dataset.num_classes) - 2);
  for (std::size_t k = 0; k < flips; ++k) {
    nn::Label& label = out.labels[order[k]];
    const nn::Label draw = other(rng);
    label = draw >= label ? draw + 1 : draw;
  }
  return out;
}

std::vector<std::size_t> label_histogram(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<std::size_t> counts(dataset.num_classes, 0);
  for (std::size_t i : indices) ++counts[static_cast<std::size_t>(dataset.labels.at(i))];
  return counts;
}

double label_entropy(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  double h = 0.0;
  for (std::size_t count : label_histogram(dataset, indices)) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / static_cast<double>(indices.size());
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace fedbss::data
