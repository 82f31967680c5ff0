#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pwkd {

// Error taxonomy. Shape/config errors are caller bugs or bad input files,
// numeric errors mean a computation produced NaN/Inf.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

// Dense row-major n-d array. float for training, double for gradient checks.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
      n *= static_cast<size_t>(d);
    }
    data.assign(n, fill);
  }
  TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
  }

  size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // NCHW helpers
  T& at4(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at4(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  const T& at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <typename T>
inline bool all_finite(const TensorT<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
inline void require_finite(const TensorT<T>& t, const char* op) {
  if (!all_finite(t)) throw NumericError(std::string(op) + " produced a non-finite value");
}

// Trainable value plus its accumulated gradient. Names are unique per network.
template <typename T>
struct ParameterT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool decay = false;  // weight decay applies to conv/linear weights only

  ParameterT() = default;
  ParameterT(std::string n, TensorT<T> v, bool dec = false)
      : name(std::move(n)), value(std::move(v)), decay(dec) {
    grad = TensorT<T>(value.shape);
  }
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

using Parameter = ParameterT<float>;

// Gradients keyed by parameter name.
template <typename T>
using GradientSetT = std::map<std::string, TensorT<T>>;
using GradientSet = GradientSetT<float>;

// Per-width batch-norm bundle: learnable scale/shift plus running statistics.
template <typename T>
struct BNStateT {
  ParameterT<T> gamma;
  ParameterT<T> beta;
  TensorT<T> running_mean;
  TensorT<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  BNStateT() = default;
  BNStateT(const std::string& name_prefix, int channels) {
    gamma = ParameterT<T>(name_prefix + ".gamma", TensorT<T>({channels}, T(1)));
    beta = ParameterT<T>(name_prefix + ".beta", TensorT<T>({channels}, T(0)));
    running_mean = TensorT<T>({channels}, T(0));
    running_var = TensorT<T>({channels}, T(1));
  }
  int channels() const { return gamma.value.dim(0); }
};

enum class Mode { Train, Eval };

// Numerically stable tempered softmax over the last axis of a 1-d or 2-d tensor.
template <typename T>
TensorT<T> softmax_t(const TensorT<T>& z, T temperature) {
  if (temperature <= T(0)) throw ConfigError("softmax temperature must be > 0");
  if (z.rank() != 1 && z.rank() != 2)
    throw ShapeError("softmax_t expects logits of rank 1 or 2, got " + shape_str(z.shape));
  require_finite(z, "softmax_t input");
  const int rows = z.rank() == 2 ? z.dim(0) : 1;
  const int cols = z.rank() == 2 ? z.dim(1) : z.dim(0);
  TensorT<T> out(z.shape);
  for (int r = 0; r < rows; ++r) {
    const T* zr = z.ptr() + static_cast<size_t>(r) * cols;
    T* pr = out.ptr() + static_cast<size_t>(r) * cols;
    T mx = zr[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, zr[c]);
    T sum = T(0);
    for (int c = 0; c < cols; ++c) {
      pr[c] = std::exp((zr[c] - mx) / temperature);
      sum += pr[c];
    }
    for (int c = 0; c < cols; ++c) pr[c] /= sum;
  }
  return out;
}

}  // namespace pwkd
