#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace fedbss::nn {

using Shape = std::vector<std::size_t>;
using Label = std::int32_t;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major float tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  // Elements of the i-th slice along the leading axis.
  std::span<const float> row(std::size_t i) const;
  std::span<float> row(std::size_t i);
  std::size_t row_size() const noexcept;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

struct Segment {
  std::string id;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// All trainable parameters of a model in one contiguous buffer, split into
// named segments whose order is fixed by the architecture.
class ParamVector {
 public:
  ParamVector() = default;

  // Appends a zero-filled segment and returns its index.
  std::size_t add_segment(std::string id, Shape shape);

  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  std::span<float> segment(std::size_t i);
  std::span<const float> segment(std::size_t i) const;

  // Same segment layout, so element-wise operations are meaningful.
  bool aligned_with(const ParamVector& other) const noexcept;
  void require_aligned(const ParamVector& other, const char* op) const;

  ParamVector zeros_like() const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<Segment> segments_;
  std::vector<float> values_;
};

ParamVector add(const ParamVector& a, const ParamVector& b);
ParamVector scale(const ParamVector& a, double factor);
// Element-wise (optionally weighted) mean, accumulated in double.
ParamVector mean(std::span<const ParamVector> items);
ParamVector weighted_mean(std::span<const ParamVector> items, std::span<const double> weights);

enum class Activation { kNone, kRelu };

struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::kNone;
};

// Stride-1 square convolution with symmetric zero padding.
struct Conv2dSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t padding = 0;
  Activation activation = Activation::kNone;
};

struct MaxPool2dSpec {
  std::size_t window = 0;
  std::size_t stride = 0;
};

struct FlattenSpec {};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, MaxPool2dSpec, FlattenSpec>;

struct Architecture {
  Shape input_shape;  // per-sample, without the batch axis
  std::vector<LayerSpec> layers;
};

enum class ModelKind { kSoftmaxRegression, kMlp, kCnn };

Architecture softmax_regression(const Shape& input_shape, std::size_t num_classes);
Architecture mlp(const Shape& input_shape, std::size_t hidden, std::size_t num_classes);
// Two 5x5 conv blocks (32 and 64 channels, each ReLU + 3x3/3 max pool),
// a 512-unit ReLU layer and the classifier. Expects (channels, height, width).
Architecture small_cnn(const Shape& input_shape, std::size_t num_classes);
Architecture make_architecture(ModelKind kind, const Shape& input_shape,
                               std::size_t num_classes, std::size_t hidden = 128);

class Model {
 public:
  // Parameters zero-initialised.
  explicit Model(Architecture arch);
  // Glorot-uniform weights, zero biases.
  static Model initialized(Architecture arch, std::uint64_t seed);

  const Architecture& architecture() const noexcept { return arch_; }
  const ParamVector& params() const noexcept { return params_; }
  ParamVector& mutable_params() noexcept { return params_; }
  void set_params(ParamVector params);

  std::size_t input_size() const noexcept { return shape_size(arch_.input_shape); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  // Per-sample activation shape entering layer i; index layers().size() is the output.
  const std::vector<Shape>& activation_shapes() const noexcept { return shapes_; }
  // Segment index of layer i's weight (its bias follows), or -1 for parameter-free layers.
  const std::vector<std::ptrdiff_t>& weight_segment() const noexcept { return weight_segment_; }

 private:
  Architecture arch_;
  ParamVector params_;
  std::vector<Shape> shapes_;
  std::vector<std::ptrdiff_t> weight_segment_;
  std::size_t num_classes_ = 0;
};

// Logits of shape (B, C).
Tensor forward(const Model& model, const Tensor& batch);

// Probabilities computed in double with max subtraction.
std::vector<double> softmax(std::span<const float> logits);
double cross_entropy(std::span<const double> probs, Label label);

struct LossAndGradient {
  double mean_loss = 0.0;
  ParamVector gradient;
};

// Mean cross-entropy over the batch and its exact gradient.
LossAndGradient loss_and_gradient(const Model& model, const Tensor& batch,
                                  std::span<const Label> labels);
ParamVector backward(const Model& model, const Tensor& batch, std::span<const Label> labels);

struct SgdHyperParams {
  double learning_rate = 1e-3;
  double momentum = 1e-4;
  double weight_decay = 1e-5;

  friend bool operator==(const SgdHyperParams&, const SgdHyperParams&) = default;
};

struct OptimizerState {
  ParamVector momentum_buffer;
  SgdHyperParams hyper;

  static OptimizerState for_params(const ParamVector& params, SgdHyperParams hyper);
};

// buffer <- m * buffer + (grad + wd * params); params <- params - lr * buffer.
void sgd_step(ParamVector& params, const ParamVector& grad, OptimizerState& state);

// "FEDBSS-PV v1 <total_len>\n" then little-endian float32 values in segment order.
void write_checkpoint(std::ostream& out, const ParamVector& params);
ParamVector read_checkpoint(std::istream& in, const ParamVector& layout);
void save_checkpoint(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_checkpoint(const std::filesystem::path& path, const ParamVector& layout);

}  // namespace fedbss::nn
