#include "fedbss/errors.hpp"
#include "fedbss/nn.hpp"

namespace fedbss::nn {

OptimizerState OptimizerState::for_params(const ParamVector& params, SgdHyperParams hyper) {
  return OptimizerState{params.zeros_like(), hyper};
}

void sgd_step(ParamVector& params, const ParamVector& grad, OptimizerState& state) {
  params.require_aligned(grad, "sgd_step");
  params.require_aligned(state.momentum_buffer, "sgd_step");
  const float lr = static_cast<float>(state.hyper.learning_rate);
  const float m = static_cast<float>(state.hyper.momentum);
  const float wd = static_cast<float>(state.hyper.weight_decay);
  auto p = params.values();
  auto g = grad.values();
  auto buf = state.momentum_buffer.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    buf[i] = m * buf[i] + (g[i] + wd * p[i]);
    p[i] -= lr * buf[i];
  }
}

}  // namespace fedbss::nn
