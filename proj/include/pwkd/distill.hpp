#pragma once

#include <map>
#include <string>

#include "pwkd/graph.hpp"
#include "pwkd/net.hpp"
#include "pwkd/rng.hpp"

namespace pwkd {

enum class DistillMethod { Kd, Fitnet, At, Sp };

inline DistillMethod parse_method(const std::string& s) {
  if (s == "kd") return DistillMethod::Kd;
  if (s == "fitnet") return DistillMethod::Fitnet;
  if (s == "at") return DistillMethod::At;
  if (s == "sp") return DistillMethod::Sp;
  throw ConfigError("unknown distillation method '" + s + "' (kd|fitnet|at|sp)");
}
inline const char* method_name(DistillMethod m) {
  switch (m) {
    case DistillMethod::Kd: return "kd";
    case DistillMethod::Fitnet: return "fitnet";
    case DistillMethod::At: return "at";
    case DistillMethod::Sp: return "sp";
  }
  return "?";
}

template <typename T>
struct DistillConfigT {
  DistillMethod method = DistillMethod::Kd;
  T beta = T(0.1);
  T temperature = T(4);
  std::vector<std::string> hint_points = {"stage3"};
  // feature methods add the KD logit term on top only when asked
  bool add_kd_term = false;

  void validate() const {
    if (beta < T(0) || beta > T(1)) throw ConfigError("distill beta must lie in [0,1]");
    if (temperature <= T(0)) throw ConfigError("distill temperature must be > 0");
    if (hint_points.empty()) throw ConfigError("distill needs at least one hint point");
  }
};
using DistillConfig = DistillConfigT<float>;

// FitNet channel adapters: a 1x1 conv per hint point mapping student channels
// onto the teacher's, trained jointly with the student. Teacher channel counts
// change with the stage width, so these are rebuilt per stage.
template <typename T>
struct RegressorSetT {
  std::map<std::string, ParameterT<T>> convs;

  static RegressorSetT make(const std::map<std::string, int>& student_channels,
                            const std::map<std::string, int>& teacher_channels,
                            const std::vector<std::string>& hints, uint64_t seed) {
    RegressorSetT rs;
    Rng rng(seed);
    for (const auto& h : hints) {
      const int sc = student_channels.at(h);
      const int tc = teacher_channels.at(h);
      TensorT<double> w({tc, sc, 1, 1});
      const double std_dev = std::sqrt(2.0 / static_cast<double>(sc));
      for (auto& v : w.data) v = rng.normal() * std_dev;
      rs.convs.emplace(h, ParameterT<T>("regressor." + h + ".w", w.template cast<T>(), true));
    }
    return rs;
  }

  std::vector<ParameterT<T>*> params() {
    std::vector<ParameterT<T>*> out;
    for (auto& [name, p] : convs) out.push_back(&p);
    return out;
  }
};
using RegressorSet = RegressorSetT<float>;

// Plain-tensor average pooling for the constant teacher side.
template <typename T>
TensorT<T> avg_pool_tensor(const TensorT<T>& x, int oh, int ow) {
  if (x.rank() != 4) throw ShapeError("avg_pool_tensor expects NCHW, got " + shape_str(x.shape));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (oh <= 0 || ow <= 0 || H % oh != 0 || W % ow != 0)
    throw ShapeError("cannot pool " + shape_str(x.shape) + " to " + std::to_string(oh) + "x" +
                     std::to_string(ow));
  const int fh = H / oh, fw = W / ow;
  TensorT<T> out({N, C, oh, ow});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double s = 0.0;
          for (int a = 0; a < fh; ++a)
            for (int b = 0; b < fw; ++b) s += x.at4(n, c, i * fh + a, j * fw + b);
          out.at4(n, c, i, j) = static_cast<T>(s / (fh * fw));
        }
  return out;
}

namespace detail {

// Pools whichever side is spatially larger down to the smaller size.
template <typename T>
std::pair<int, TensorT<T>> align_spatial(GraphT<T>& g, int student, const TensorT<T>& teacher) {
  const auto& sv = g.value(student);
  if (sv.rank() != 4 || teacher.rank() != 4)
    throw ShapeError("feature losses expect NCHW maps");
  const int sh = sv.dim(2), sw = sv.dim(3);
  const int th = teacher.dim(2), tw = teacher.dim(3);
  if (sh == th && sw == tw) return {student, teacher};
  if (sh >= th && sw >= tw) return {g.avg_pool_to(student, th, tw), teacher};
  if (th >= sh && tw >= sw) return {student, avg_pool_tensor(teacher, sh, sw)};
  throw ShapeError("cannot align feature maps " + shape_str(sv.shape) + " and " +
                   shape_str(teacher.shape));
}

}  // namespace detail

// ---- individual loss terms (teacher side always constant) ----------------

template <typename T>
int kd_term(GraphT<T>& g, int student_logits, const TensorT<T>& teacher_logits, T temperature) {
  return g.kl_temperature(student_logits, teacher_logits, temperature);
}

template <typename T>
int fitnet_term(GraphT<T>& g, int student_feat, const TensorT<T>& teacher_feat,
                ParameterT<T>* regressor) {
  int mapped = student_feat;
  if (regressor) mapped = g.conv2d(student_feat, g.param(regressor), std::nullopt, 1, 0);
  auto [s, t] = detail::align_spatial(g, mapped, teacher_feat);
  if (g.value(s).dim(1) != t.dim(1))
    throw ShapeError("fitnet channel mismatch after regressor: " + shape_str(g.value(s).shape) +
                     " vs " + shape_str(t.shape));
  return g.mse(s, t);
}

template <typename T>
int at_term(GraphT<T>& g, int student_feat, const TensorT<T>& teacher_feat) {
  auto [s, t] = detail::align_spatial(g, student_feat, teacher_feat);
  return g.at_loss(s, t);
}

template <typename T>
int sp_term(GraphT<T>& g, int student_feat, const TensorT<T>& teacher_feat) {
  return g.sp_loss(student_feat, teacher_feat);
}

// ---- composition: beta*CE + (1-beta)*method ------------------------------

template <typename T>
int student_loss(GraphT<T>& g, int student_logits, const std::map<std::string, int>& student_taps,
                 const FragmentT<T>& fragment, const std::vector<int>& labels,
                 const DistillConfigT<T>& cfg, RegressorSetT<T>* regressors = nullptr) {
  cfg.validate();
  int ce = g.cross_entropy(student_logits, labels);
  if (cfg.beta == T(1)) return ce;  // pure CE, teacher ignored

  int term;
  if (cfg.method == DistillMethod::Kd) {
    term = kd_term(g, student_logits, fragment.logits, cfg.temperature);
  } else {
    term = -1;
    for (const auto& h : cfg.hint_points) {
      auto sit = student_taps.find(h);
      if (sit == student_taps.end())
        throw ConfigError("hint point '" + h + "' missing from student outputs");
      auto tit = fragment.features.find(h);
      if (tit == fragment.features.end())
        throw ConfigError("hint point '" + h + "' missing from teacher fragment");
      int ti;
      switch (cfg.method) {
        case DistillMethod::Fitnet: {
          if (!regressors || regressors->convs.find(h) == regressors->convs.end())
            throw ConfigError("fitnet needs a regressor for hint point '" + h + "'");
          ti = fitnet_term(g, sit->second, tit->second, &regressors->convs.at(h));
          break;
        }
        case DistillMethod::At: ti = at_term(g, sit->second, tit->second); break;
        default: ti = sp_term(g, sit->second, tit->second); break;
      }
      term = term < 0 ? ti : g.add(term, ti);
    }
    if (cfg.hint_points.size() > 1)
      term = g.scale(term, T(1) / static_cast<T>(cfg.hint_points.size()));
    if (cfg.add_kd_term)
      term = g.add(term, kd_term(g, student_logits, fragment.logits, cfg.temperature));
  }
  return g.add(g.scale(ce, cfg.beta), g.scale(term, T(1) - cfg.beta));
}

}  // namespace pwkd
