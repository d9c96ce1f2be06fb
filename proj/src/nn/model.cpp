#include <algorithm>
#include <cmath>
#include <limits>

#include "fedbss/errors.hpp"
#include "fedbss/nn.hpp"
#include "fedbss/rng.hpp"

namespace fedbss::nn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t padding) {
  if (in + 2 * padding < kernel) throw ShapeError("convolution kernel larger than padded input");
  return in + 2 * padding - kernel + 1;
}

std::size_t pool_out(std::size_t in, std::size_t window, std::size_t stride) {
  if (in < window) throw ShapeError("pooling window larger than input");
  return (in - window) / stride + 1;
}

// Eight independent partial sums; the fixed association keeps results
// bit-reproducible while letting the compiler vectorise.
float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void apply_activation(Activation act, std::span<float> values) {
  if (act == Activation::kRelu) {
    for (float& v : values) v = v > 0.0f ? v : 0.0f;
  }
}

// Gradient through the activation, given the activation's output.
void activation_backward(Activation act, std::span<const float> output, std::span<float> grad) {
  if (act == Activation::kRelu) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!(output[i] > 0.0f)) grad[i] = 0.0f;
    }
  }
}

struct ForwardCache {
  std::vector<Tensor> activations;               // activations[i] enters layer i
  std::vector<std::vector<std::uint32_t>> argmax;  // per pooling layer
};

Shape batched(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

Tensor dense_forward(const DenseSpec& spec, const ParamVector& params, std::size_t wseg,
                     const Tensor& x) {
  const std::size_t batch = x.dim(0);
  auto w = params.segment(wseg);
  auto b = params.segment(wseg + 1);
  Tensor y({batch, spec.out});
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const float* xr = xd.data() + n * spec.in;
    float* yr = yd.data() + n * spec.out;
    for (std::size_t o = 0; o < spec.out; ++o) {
      yr[o] = b[o] + dot(w.data() + o * spec.in, xr, spec.in);
    }
  }
  apply_activation(spec.activation, y.data());
  return y;
}

Tensor conv_forward(const Conv2dSpec& spec, const ParamVector& params, std::size_t wseg,
                    const Tensor& x) {
  const std::size_t batch = x.dim(0), ih = x.dim(2), iw = x.dim(3);
  const std::size_t k = spec.kernel, pad = spec.padding;
  const std::size_t oh = conv_out(ih, k, pad), ow = conv_out(iw, k, pad);
  auto w = params.segment(wseg);
  auto b = params.segment(wseg + 1);
  Tensor y({batch, spec.out_channels, oh, ow});
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      float* yplane = yd.data() + ((n * spec.out_channels + oc) * oh) * ow;
      std::fill(yplane, yplane + oh * ow, b[oc]);
      for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
        const float* xplane = xd.data() + ((n * spec.in_channels + ic) * ih) * iw;
        const float* kern = w.data() + ((oc * spec.in_channels + ic) * k) * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const float wv = kern[ky * k + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(ih)) continue;
              const float* xrow = xplane + sy * iw;
              float* yrow = yplane + oy * ow;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(iw)) continue;
                yrow[ox] += wv * xrow[sx];
              }
            }
          }
        }
      }
    }
  }
  apply_activation(spec.activation, y.data());
  return y;
}

Tensor pool_forward(const MaxPool2dSpec& spec, const Tensor& x, std::vector<std::uint32_t>& argmax) {
  const std::size_t batch = x.dim(0), ch = x.dim(1), ih = x.dim(2), iw = x.dim(3);
  const std::size_t oh = pool_out(ih, spec.window, spec.stride);
  const std::size_t ow = pool_out(iw, spec.window, spec.stride);
  Tensor y({batch, ch, oh, ow});
  argmax.assign(y.size(), 0);
  auto xd = x.data();
  auto yd = y.data();
  std::size_t out = 0;
  for (std::size_t plane = 0; plane < batch * ch; ++plane) {
    const std::size_t base = plane * ih * iw;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++out) {
        std::size_t best = base + (oy * spec.stride) * iw + ox * spec.stride;
        for (std::size_t ky = 0; ky < spec.window; ++ky) {
          for (std::size_t kx = 0; kx < spec.window; ++kx) {
            const std::size_t idx = base + (oy * spec.stride + ky) * iw + ox * spec.stride + kx;
            if (xd[idx] > xd[best]) best = idx;
          }
        }
        yd[out] = xd[best];
        argmax[out] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

Tensor reshape_input(const Model& model, const Tensor& batch) {
  if (batch.rank() < 1 || batch.dim(0) == 0) throw ShapeError("batch must hold at least one sample");
  if (batch.row_size() != model.input_size() || batch.size() != batch.dim(0) * model.input_size()) {
    throw ShapeError("input shape " + shape_to_string(batch.shape()) + " does not match model input " +
                     shape_to_string(model.architecture().input_shape));
  }
  return Tensor(batched(batch.dim(0), model.architecture().input_shape),
                std::vector<float>(batch.data().begin(), batch.data().end()));
}

ForwardCache run_forward(const Model& model, const Tensor& batch) {
  ForwardCache cache;
  const auto& layers = model.architecture().layers;
  const auto& params = model.params();
  cache.activations.reserve(layers.size() + 1);
  cache.activations.push_back(reshape_input(model, batch));
  const std::size_t b = batch.dim(0);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const Tensor& x = cache.activations.back();
    const std::ptrdiff_t wseg = model.weight_segment()[li];
    Tensor y = std::visit(
        Overloaded{
            [&](const DenseSpec& s) { return dense_forward(s, params, static_cast<std::size_t>(wseg), x); },
            [&](const Conv2dSpec& s) { return conv_forward(s, params, static_cast<std::size_t>(wseg), x); },
            [&](const MaxPool2dSpec& s) {
              cache.argmax.emplace_back();
              return pool_forward(s, x, cache.argmax.back());
            },
            [&](const FlattenSpec&) {
              return Tensor(batched(b, model.activation_shapes()[li + 1]),
                            std::vector<float>(x.data().begin(), x.data().end()));
            },
        },
        layers[li]);
    cache.activations.push_back(std::move(y));
  }
  return cache;
}

void glorot_fill(std::span<float> values, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (float& v : values) v = static_cast<float>(dist(rng));
}

}  // namespace

Architecture softmax_regression(const Shape& input_shape, std::size_t num_classes) {
  Architecture a{input_shape, {}};
  if (input_shape.size() > 1) a.layers.push_back(FlattenSpec{});
  a.layers.push_back(DenseSpec{shape_size(input_shape), num_classes, Activation::kNone});
  return a;
}

Architecture mlp(const Shape& input_shape, std::size_t hidden, std::size_t num_classes) {
  Architecture a{input_shape, {}};
  if (input_shape.size() > 1) a.layers.push_back(FlattenSpec{});
  a.layers.push_back(DenseSpec{shape_size(input_shape), hidden, Activation::kRelu});
  a.layers.push_back(DenseSpec{hidden, num_classes, Activation::kNone});
  return a;
}

Architecture small_cnn(const Shape& input_shape, std::size_t num_classes) {
  if (input_shape.size() != 3) {
    throw ShapeError("cnn expects (channels, height, width) input, got " + shape_to_string(input_shape));
  }
  const std::size_t h = pool_out(pool_out(input_shape[1], 3, 3), 3, 3);
  const std::size_t w = pool_out(pool_out(input_shape[2], 3, 3), 3, 3);
  Architecture a{input_shape, {}};
  a.layers.push_back(Conv2dSpec{input_shape[0], 32, 5, 2, Activation::kRelu});
  a.layers.push_back(MaxPool2dSpec{3, 3});
  a.layers.push_back(Conv2dSpec{32, 64, 5, 2, Activation::kRelu});
  a.layers.push_back(MaxPool2dSpec{3, 3});
  a.layers.push_back(FlattenSpec{});
  a.layers.push_back(DenseSpec{64 * h * w, 512, Activation::kRelu});
  a.layers.push_back(DenseSpec{512, num_classes, Activation::kNone});
  return a;
}

Architecture make_architecture(ModelKind kind, const Shape& input_shape, std::size_t num_classes,
                               std::size_t hidden) {
  switch (kind) {
    case ModelKind::kSoftmaxRegression: return softmax_regression(input_shape, num_classes);
    case ModelKind::kMlp: return mlp(input_shape, hidden, num_classes);
    case ModelKind::kCnn: return small_cnn(input_shape, num_classes);
  }
  throw ShapeError("unknown model kind");
}

Model::Model(Architecture arch) : arch_(std::move(arch)) {
  if (arch_.input_shape.empty() || shape_size(arch_.input_shape) == 0) {
    throw ShapeError("model input shape must be non-empty");
  }
  shapes_.push_back(arch_.input_shape);
  for (std::size_t li = 0; li < arch_.layers.size(); ++li) {
    const Shape& in = shapes_.back();
    const std::string prefix = "layer" + std::to_string(li);
    std::ptrdiff_t wseg = -1;
    Shape out = std::visit(
        Overloaded{
            [&](const DenseSpec& s) -> Shape {
              if (in.size() != 1 || in[0] != s.in) {
                throw ShapeError(prefix + ": dense layer expects (" + std::to_string(s.in) + "), got " +
                                 shape_to_string(in));
              }
              if (s.out == 0) throw ShapeError(prefix + ": dense layer with zero outputs");
              wseg = static_cast<std::ptrdiff_t>(params_.add_segment(prefix + ".weight", {s.out, s.in}));
              params_.add_segment(prefix + ".bias", {s.out});
              return {s.out};
            },
            [&](const Conv2dSpec& s) -> Shape {
              if (in.size() != 3 || in[0] != s.in_channels) {
                throw ShapeError(prefix + ": conv layer expects " + std::to_string(s.in_channels) +
                                 " input channels, got " + shape_to_string(in));
              }
              if (s.kernel == 0 || s.out_channels == 0) throw ShapeError(prefix + ": empty conv layer");
              wseg = static_cast<std::ptrdiff_t>(params_.add_segment(
                  prefix + ".weight", {s.out_channels, s.in_channels, s.kernel, s.kernel}));
              params_.add_segment(prefix + ".bias", {s.out_channels});
              return {s.out_channels, conv_out(in[1], s.kernel, s.padding), conv_out(in[2], s.kernel, s.padding)};
            },
            [&](const MaxPool2dSpec& s) -> Shape {
              if (in.size() != 3) throw ShapeError(prefix + ": pooling expects (c, h, w), got " + shape_to_string(in));
              if (s.window == 0 || s.stride == 0) throw ShapeError(prefix + ": empty pooling window");
              return {in[0], pool_out(in[1], s.window, s.stride), pool_out(in[2], s.window, s.stride)};
            },
            [&](const FlattenSpec&) -> Shape { return {shape_size(in)}; },
        },
        arch_.layers[li]);
    weight_segment_.push_back(wseg);
    shapes_.push_back(std::move(out));
  }
  if (shapes_.back().size() != 1 || shapes_.back()[0] < 1) {
    throw ShapeError("model output must be a flat logit vector, got " + shape_to_string(shapes_.back()));
  }
  num_classes_ = shapes_.back()[0];
}

Model Model::initialized(Architecture arch, std::uint64_t seed) {
  Model model(std::move(arch));
  Rng rng = make_rng(seed, Stream::kInit);
  for (std::size_t li = 0; li < model.arch_.layers.size(); ++li) {
    const std::ptrdiff_t wseg = model.weight_segment_[li];
    if (wseg < 0) continue;
    const Shape& ws = model.params_.segments()[static_cast<std::size_t>(wseg)].shape;
    std::size_t fan_in = 0, fan_out = 0;
    if (ws.size() == 2) {
      fan_out = ws[0];
      fan_in = ws[1];
    } else {
      const std::size_t field = ws[2] * ws[3];
      fan_out = ws[0] * field;
      fan_in = ws[1] * field;
    }
    glorot_fill(model.params_.segment(static_cast<std::size_t>(wseg)), fan_in, fan_out, rng);
  }
  return model;
}

void Model::set_params(ParamVector params) {
  params_.require_aligned(params, "set_params");
  params_ = std::move(params);
}

Tensor forward(const Model& model, const Tensor& batch) {
  ForwardCache cache = run_forward(model, batch);
  return std::move(cache.activations.back());
}

std::vector<double> softmax(std::span<const float> logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  double peak = -std::numeric_limits<double>::infinity();
  for (float z : logits) peak = std::max(peak, static_cast<double>(z));
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - peak);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

double cross_entropy(std::span<const double> probs, Label label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(probs.size()) + ")");
  }
  // Clamped so a probability that underflowed to zero still gives a finite loss.
  const double p = std::max(probs[static_cast<std::size_t>(label)], std::numeric_limits<double>::min());
  return -std::log(p);
}

LossAndGradient loss_and_gradient(const Model& model, const Tensor& batch, std::span<const Label> labels) {
  if (batch.rank() < 1 || batch.dim(0) != labels.size()) {
    throw ShapeError("batch of " + std::to_string(batch.rank() ? batch.dim(0) : 0) + " samples with " +
                     std::to_string(labels.size()) + " labels");
  }
  ForwardCache cache = run_forward(model, batch);
  const std::size_t b = labels.size();
  const std::size_t classes = model.num_classes();
  const auto& layers = model.architecture().layers;
  const auto& params = model.params();

  LossAndGradient result;
  result.gradient = params.zeros_like();

  // d(mean loss)/d(logits) = (softmax - onehot) / B.
  Tensor grad = Tensor({b, classes});
  double loss_sum = 0.0;
  const Tensor& logits = cache.activations.back();
  for (std::size_t n = 0; n < b; ++n) {
    std::vector<double> p = softmax(logits.row(n));
    loss_sum += cross_entropy(p, labels[n]);
    auto g = grad.row(n);
    for (std::size_t c = 0; c < classes; ++c) {
      const double target = static_cast<std::size_t>(labels[n]) == c ? 1.0 : 0.0;
      g[c] = static_cast<float>((p[c] - target) / static_cast<double>(b));
    }
  }
  result.mean_loss = loss_sum / static_cast<double>(b);

  std::size_t pool_index = cache.argmax.size();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Tensor& x = cache.activations[li];
    const Tensor& y = cache.activations[li + 1];
    const std::ptrdiff_t wseg = model.weight_segment()[li];
    const bool need_input_grad = li > 0;
    Tensor dx(x.shape());

    std::visit(
        Overloaded{
            [&](const DenseSpec& s) {
              activation_backward(s.activation, y.data(), grad.data());
              auto w = params.segment(static_cast<std::size_t>(wseg));
              auto dw = result.gradient.segment(static_cast<std::size_t>(wseg));
              auto db = result.gradient.segment(static_cast<std::size_t>(wseg) + 1);
              for (std::size_t n = 0; n < b; ++n) {
                const float* xr = x.data().data() + n * s.in;
                const float* gr = grad.data().data() + n * s.out;
                float* dxr = dx.data().data() + n * s.in;
                for (std::size_t o = 0; o < s.out; ++o) {
                  const float g = gr[o];
                  if (g == 0.0f) continue;
                  db[o] += g;
                  axpy(g, xr, dw.data() + o * s.in, s.in);
                  if (need_input_grad) axpy(g, w.data() + o * s.in, dxr, s.in);
                }
              }
            },
            [&](const Conv2dSpec& s) {
              activation_backward(s.activation, y.data(), grad.data());
              const std::size_t ih = x.dim(2), iw = x.dim(3), oh = y.dim(2), ow = y.dim(3);
              const std::size_t k = s.kernel, pad = s.padding;
              auto w = params.segment(static_cast<std::size_t>(wseg));
              auto dw = result.gradient.segment(static_cast<std::size_t>(wseg));
              auto db = result.gradient.segment(static_cast<std::size_t>(wseg) + 1);
              for (std::size_t n = 0; n < b; ++n) {
                for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
                  const float* gplane = grad.data().data() + ((n * s.out_channels + oc) * oh) * ow;
                  float bias_acc = 0.0f;
                  for (std::size_t i = 0; i < oh * ow; ++i) bias_acc += gplane[i];
                  db[oc] += bias_acc;
                  for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
                    const float* xplane = x.data().data() + ((n * s.in_channels + ic) * ih) * iw;
                    float* dxplane = dx.data().data() + ((n * s.in_channels + ic) * ih) * iw;
                    const std::size_t kbase = ((oc * s.in_channels + ic) * k) * k;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                      for (std::size_t kx = 0; kx < k; ++kx) {
                        const float wv = w[kbase + ky * k + kx];
                        float wacc = 0.0f;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
                          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(ih)) continue;
                          for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
                            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(iw)) continue;
                            const float g = gplane[oy * ow + ox];
                            wacc += g * xplane[sy * iw + sx];
                            if (need_input_grad) dxplane[sy * iw + sx] += g * wv;
                          }
                        }
                        dw[kbase + ky * k + kx] += wacc;
                      }
                    }
                  }
                }
              }
            },
            [&](const MaxPool2dSpec&) {
              const auto& argmax = cache.argmax[--pool_index];
              auto g = grad.data();
              auto d = dx.data();
              for (std::size_t i = 0; i < argmax.size(); ++i) d[argmax[i]] += g[i];
            },
            [&](const FlattenSpec&) {
              std::copy(grad.data().begin(), grad.data().end(), dx.data().begin());
            },
        },
        layers[li]);
    grad = std::move(dx);
  }
  return result;
}

ParamVector backward(const Model& model, const Tensor& batch, std::span<const Label> labels) {
  return loss_and_gradient(model, batch, labels).gradient;
}

}  // namespace fedbss::nn
