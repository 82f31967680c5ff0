#pragma once

// Central finite-difference oracle for the reverse-mode gradients. Lives in
// test code only; it never touches the tape internals, it just re-evaluates
// the forward function under elementwise perturbation.

#include <functional>

#include "pwkd/graph.hpp"
#include "pwkd/rng.hpp"

namespace gradcheck {

using pwkd::GraphT;
using pwkd::ParameterT;
using pwkd::Rng;
using pwkd::TensorT;

// Builds a scalar loss from the current parameter values. Must be pure in the
// parameters (BN running-stat side effects are fine: train-mode outputs
// depend on batch statistics only).
using LossFn = std::function<double(void)>;

struct Report {
  double max_rel = 0.0;
  double max_abs = 0.0;
  long checked = 0;
};

// rel = |analytic - fd| / max(1, |analytic|, |fd|)
inline Report check(const std::vector<ParameterT<double>*>& params, const LossFn& loss,
                    const std::function<void(void)>& backward_into_params, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  backward_into_params();
  Report rep;
  for (auto* p : params) {
    for (size_t i = 0; i < p->value.numel(); ++i) {
      const double keep = p->value.data[i];
      p->value.data[i] = keep + h;
      const double lp = loss();
      p->value.data[i] = keep - h;
      const double lm = loss();
      p->value.data[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = p->grad.data[i];
      const double abs_err = std::abs(an - fd);
      const double rel = abs_err / std::max({1.0, std::abs(an), std::abs(fd)});
      rep.max_rel = std::max(rep.max_rel, rel);
      rep.max_abs = std::max(rep.max_abs, abs_err);
      ++rep.checked;
    }
  }
  return rep;
}

inline TensorT<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  TensorT<double> t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

}  // namespace gradcheck
