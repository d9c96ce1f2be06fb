#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedbss/data.hpp"
#include "fedbss/federation.hpp"
#include "fedbss/nn.hpp"
#include "oracles.hpp"

namespace fedbss::testing {

// One architecture per layer type: dense only, dense + ReLU, and
// conv + pool + flatten + dense.
inline std::vector<std::pair<std::string, nn::Architecture>> gradcheck_architectures() {
  nn::Architecture cnn{{2, 7, 7},
                       {nn::Conv2dSpec{2, 3, 3, 1, nn::Activation::kRelu}, nn::MaxPool2dSpec{2, 2}, nn::FlattenSpec{},
                        nn::DenseSpec{27, 4, nn::Activation::kRelu}, nn::DenseSpec{4, 3, nn::Activation::kNone}}};
  return {{"softmax_regression", nn::softmax_regression({6}, 3)},
          {"mlp", nn::mlp({6}, 8, 3)},
          {"conv_pool", std::move(cnn)}};
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

// Library backward vs. double-precision central differences at `coords`
// random parameter coordinates.
inline GradCheck gradient_check(const nn::Architecture& arch, std::uint64_t seed, std::size_t coords = 20) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> small(-0.1, 0.1);

  nn::Model model = nn::Model::initialized(arch, seed);
  for (std::size_t s = 0; s < model.params().segments().size(); ++s) {
    if (model.params().segments()[s].id.ends_with(".bias")) {
      for (float& v : model.mutable_params().segment(s)) v = static_cast<float>(small(rng));
    }
  }

  const std::size_t batch = 3;
  const std::size_t in = model.input_size();
  std::vector<float> flat;
  std::vector<std::vector<double>> inputs(batch);
  std::vector<nn::Label> labels(batch);
  std::vector<int> int_labels(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < in; ++i) {
      const float v = static_cast<float>(normal(rng));
      flat.push_back(v);
      inputs[n].push_back(v);
    }
    labels[n] = static_cast<nn::Label>(rng() % model.num_classes());
    int_labels[n] = labels[n];
  }
  nn::Shape shape{batch};
  shape.insert(shape.end(), arch.input_shape.begin(), arch.input_shape.end());
  const nn::ParamVector grad = nn::backward(model, nn::Tensor(shape, flat), labels);

  std::vector<double> params(model.params().values().begin(), model.params().values().end());
  GradCheck out;
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  for (std::size_t k = 0; k < coords; ++k) {
    const std::size_t idx = pick(rng);
    const double fd = oracle::central_difference(arch, params, idx, inputs, int_labels);
    out.max_relative_error = std::max(out.max_relative_error, oracle::relative_error(grad.values()[idx], fd));
    ++out.coordinates;
  }
  return out;
}

inline nn::ParamVector random_params(const nn::ParamVector& layout, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::ParamVector out = layout.zeros_like();
  for (float& v : out.values()) v = static_cast<float>(normal(rng));
  return out;
}

// Two well-separated Gaussian blobs per class; small and quick to train on.
inline data::Dataset separable_dataset(std::size_t per_class = 20, std::size_t classes = 2, std::uint64_t seed = 3) {
  return data::synth_gaussian_mixture(classes, per_class, 2, 0.05, seed);
}

}  // namespace fedbss::testing
