#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "grammarscope/dense.hpp"

namespace grammarscope::num {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected adaptive-moment state for one parameter.
template <typename S>
struct OptimizerStateT {
  DenseArrayT<S> m;  // first moment
  DenseArrayT<S> v;  // second moment
  int64_t step = 0;
};

using OptimizerState = OptimizerStateT<float>;

// One update; state is initialized to zeros on first use.
template <typename S>
void adam_step(DenseArrayT<S>& param, const DenseArrayT<S>& grad, OptimizerStateT<S>& state,
               const AdamConfig& cfg) {
  require(param.same_dims(grad), "adam_step: param/grad dims mismatch " + dims_str(param.dims) +
                                     " vs " + dims_str(grad.dims));
  if (state.step == 0) {
    state.m = DenseArrayT<S>(param.dims);
    state.v = DenseArrayT<S>(param.dims);
  }
  require(state.m.same_dims(param), "adam_step: state dims mismatch");
  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (int64_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad.data[i]);
    const double m = b1 * static_cast<double>(state.m.data[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(state.v.data[i]) + (1.0 - b2) * g * g;
    state.m.data[i] = static_cast<S>(m);
    state.v.data[i] = static_cast<S>(v);
    const double update = static_cast<double>(cfg.lr) * (m / c1) / (std::sqrt(v / c2) + static_cast<double>(cfg.eps));
    param.data[i] = static_cast<S>(static_cast<double>(param.data[i]) - update);
  }
}

// Keyed state for a set of named parameters sharing one schedule.
template <typename S>
class AdamT {
 public:
  explicit AdamT(AdamConfig cfg) : cfg_(cfg) {}

  void set_lr(float lr) { cfg_.lr = lr; }
  float lr() const { return cfg_.lr; }

  void step(const std::string& name, DenseArrayT<S>& param, const DenseArrayT<S>& grad) {
    adam_step(param, grad, states_[name], cfg_);
  }

 private:
  AdamConfig cfg_;
  std::map<std::string, OptimizerStateT<S>> states_;
};

using Adam = AdamT<float>;

extern template void adam_step<float>(DenseArrayT<float>&, const DenseArrayT<float>&,
                                      OptimizerStateT<float>&, const AdamConfig&);
extern template void adam_step<double>(DenseArrayT<double>&, const DenseArrayT<double>&,
                                       OptimizerStateT<double>&, const AdamConfig&);

}  // namespace grammarscope::num
