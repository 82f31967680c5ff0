#pragma once

#include <map>

#include "pwkd/tensor.hpp"

namespace pwkd {

// SGD with momentum and decoupled-by-flag weight decay:
//   v <- momentum*v + grad + wd*value   (wd only where Parameter.decay)
//   value <- value - lr*v
// Velocity buffers persist across steps, keyed by parameter name.
template <typename T>
class SgdT {
 public:
  void step(const std::vector<ParameterT<T>*>& params, T lr, T momentum, T weight_decay) {
    if (lr <= T(0)) throw ConfigError("sgd: lr must be > 0");
    if (momentum < T(0) || momentum >= T(1)) throw ConfigError("sgd: momentum must be in [0,1)");
    if (weight_decay < T(0)) throw ConfigError("sgd: weight_decay must be >= 0");
    for (ParameterT<T>* p : params) {
      TensorT<T>& v = velocity_slot(*p);
      const T wd = p->decay ? weight_decay : T(0);
      for (size_t i = 0; i < p->value.numel(); ++i) {
        v.data[i] = momentum * v.data[i] + p->grad.data[i] + wd * p->value.data[i];
        p->value.data[i] -= lr * v.data[i];
      }
      require_finite(p->value, "sgd_update");
    }
  }

  // Explicit-gradient form; every parameter must have an entry.
  void step(const std::vector<ParameterT<T>*>& params, const GradientSetT<T>& grads, T lr,
            T momentum, T weight_decay) {
    for (ParameterT<T>* p : params) {
      auto it = grads.find(p->name);
      if (it == grads.end())
        throw ConfigError("sgd: missing gradient entry for parameter '" + p->name + "'");
      if (!it->second.same_shape(p->value))
        throw ShapeError("sgd: gradient shape " + shape_str(it->second.shape) +
                         " does not match parameter '" + p->name + "' " + shape_str(p->value.shape));
      p->grad = it->second;
    }
    step(params, lr, momentum, weight_decay);
  }

  std::map<std::string, TensorT<T>>& velocity() { return velocity_; }
  const std::map<std::string, TensorT<T>>& velocity() const { return velocity_; }
  void reset() { velocity_.clear(); }
  void reset(const std::string& name) { velocity_.erase(name); }

 private:
  TensorT<T>& velocity_slot(const ParameterT<T>& p) {
    auto it = velocity_.find(p.name);
    if (it == velocity_.end()) it = velocity_.emplace(p.name, TensorT<T>(p.value.shape)).first;
    else if (!it->second.same_shape(p.value))
      it->second = TensorT<T>(p.value.shape);
    return it->second;
  }

  std::map<std::string, TensorT<T>> velocity_;
};

using Sgd = SgdT<float>;

template <typename T>
inline void zero_grads(const std::vector<ParameterT<T>*>& params) {
  for (ParameterT<T>* p : params) p->zero_grad();
}

template <typename T>
inline GradientSetT<T> gradient_set(const std::vector<ParameterT<T>*>& params) {
  GradientSetT<T> out;
  for (const ParameterT<T>* p : params) out[p->name] = p->grad;
  return out;
}

}  // namespace pwkd
