#pragma once

#include <functional>
#include <optional>

#include "pwkd/tensor.hpp"

namespace pwkd {

// Reverse-mode tape over the layer set used by the trainers. Ops execute
// eagerly; backward() walks the tape in reverse creation order and
// accumulates into every bound Parameter's grad. The tape is rebuilt per
// batch, so nodes own their saved intermediates.
template <typename T>
class GraphT {
 public:
  using Id = int;

  // ---- leaves ----------------------------------------------------------

  Id constant(TensorT<T> v) {
    return push(std::move(v), {}, nullptr, {}, false);
  }

  Id param(ParameterT<T>* p) {
    return push(p->value, {}, p, {}, true);
  }

  const TensorT<T>& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
  T scalar(Id id) const {
    const auto& v = value(id);
    if (v.numel() != 1) throw ShapeError("expected scalar node, got shape " + shape_str(v.shape));
    return v.data[0];
  }

  // ---- layers ----------------------------------------------------------

  // Cross-correlation. w is O*I*K*K; active_out < O restricts to the leading
  // output channels and the input slice is implied by x's channel extent
  // (weight-sharing slice). active_out == -1 means the full weight, in which
  // case x's channels must equal I exactly.
  Id conv2d(Id x, Id w, std::optional<Id> b, int stride, int pad, int active_out = -1) {
    const TensorT<T>& xv = value(x);
    const TensorT<T>& wv = value(w);
    if (xv.rank() != 4 || wv.rank() != 4)
      throw ShapeError("conv2d expects NCHW input and OIKK weight, got " + shape_str(xv.shape) +
                       " and " + shape_str(wv.shape));
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int O_full = wv.dim(0), I_full = wv.dim(1), K = wv.dim(2);
    if (wv.dim(3) != K) throw ShapeError("conv2d kernel must be square, got " + shape_str(wv.shape));
    const int O = active_out < 0 ? O_full : active_out;
    if (O <= 0 || O > O_full)
      throw ShapeError("conv2d active output channels " + std::to_string(O) + " out of range for weight " +
                       shape_str(wv.shape));
    if (active_out < 0 ? (C != I_full) : (C > I_full))
      throw ShapeError("conv2d channel mismatch: input " + shape_str(xv.shape) + " vs weight " +
                       shape_str(wv.shape));
    if (stride <= 0) throw ConfigError("conv2d stride must be positive");
    if (pad < 0) throw ConfigError("conv2d pad must be non-negative");
    if (H + 2 * pad < K || W + 2 * pad < K)
      throw ShapeError("conv2d kernel does not fit padded input " + shape_str(xv.shape));
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;

    const T* bias = nullptr;
    if (b) {
      const TensorT<T>& bv = value(*b);
      if (bv.rank() != 1 || bv.dim(0) < O)
        throw ShapeError("conv2d bias shape " + shape_str(bv.shape) + " does not cover " +
                         std::to_string(O) + " output channels");
      bias = bv.ptr();
    }

    TensorT<T> out({N, O, OH, OW});
    for (int n = 0; n < N; ++n) {
      for (int o = 0; o < O; ++o) {
        T* op = &out.at4(n, o, 0, 0);
        if (bias)
          for (int i = 0; i < OH * OW; ++i) op[i] = bias[o];
        for (int c = 0; c < C; ++c) {
          const T* xp = &xv.at4(n, c, 0, 0);
          const T* wp = &wv.data[((static_cast<size_t>(o) * I_full + c) * K) * K];
          for (int oh = 0; oh < OH; ++oh) {
            const int ih0 = oh * stride - pad;
            for (int kh = 0; kh < K; ++kh) {
              const int ih = ih0 + kh;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xp + static_cast<size_t>(ih) * W;
              const T* wrow = wp + static_cast<size_t>(kh) * K;
              T* orow = op + static_cast<size_t>(oh) * OW;
              for (int kw = 0; kw < K; ++kw) {
                const T wv_ = wrow[kw];
                const int iw0 = -pad + kw;
                int ow_lo = std::max(0, (-iw0 + stride - 1) / stride);
                int ow_hi = std::min(OW - 1, (W - 1 - iw0) / stride);
                const T* xq = xrow + iw0 + static_cast<size_t>(ow_lo) * stride;
                for (int ow = ow_lo; ow <= ow_hi; ++ow, xq += stride) orow[ow] += wv_ * *xq;
              }
            }
          }
        }
      }
    }
    require_finite(out, "conv2d");

    std::vector<Id> ins = {x, w};
    if (b) ins.push_back(*b);
    auto back = [stride, pad, N, C, H, W, O, I_full, K, OH, OW, has_bias = b.has_value()](
                    GraphT& g, Node& self) {
      const TensorT<T>& go = self.grad;
      Node& xn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      Node& wn = g.nodes_[static_cast<size_t>(self.inputs[1])];
      const TensorT<T>& xv = xn.value;
      const TensorT<T>& wv = wn.value;
      if (xn.requires_grad) {
        g.ensure_grad(xn);
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o)
            for (int c = 0; c < C; ++c) {
              const T* wp = &wv.data[((static_cast<size_t>(o) * I_full + c) * K) * K];
              T* dxp = &xn.grad.at4(n, c, 0, 0);
              const T* gp = &go.at4(n, o, 0, 0);
              for (int oh = 0; oh < OH; ++oh) {
                const int ih0 = oh * stride - pad;
                for (int kh = 0; kh < K; ++kh) {
                  const int ih = ih0 + kh;
                  if (ih < 0 || ih >= H) continue;
                  const T* grow = gp + static_cast<size_t>(oh) * OW;
                  const T* wrow = wp + static_cast<size_t>(kh) * K;
                  T* dxrow = dxp + static_cast<size_t>(ih) * W;
                  for (int kw = 0; kw < K; ++kw) {
                    const T wv_ = wrow[kw];
                    const int iw0 = -pad + kw;
                    int ow_lo = std::max(0, (-iw0 + stride - 1) / stride);
                    int ow_hi = std::min(OW - 1, (W - 1 - iw0) / stride);
                    T* dxq = dxrow + iw0 + static_cast<size_t>(ow_lo) * stride;
                    for (int ow = ow_lo; ow <= ow_hi; ++ow, dxq += stride) *dxq += wv_ * grow[ow];
                  }
                }
              }
            }
      }
      if (wn.requires_grad) {
        g.ensure_grad(wn);
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o)
            for (int c = 0; c < C; ++c) {
              const T* xp = &xv.at4(n, c, 0, 0);
              T* dwp = &wn.grad.data[((static_cast<size_t>(o) * I_full + c) * K) * K];
              const T* gp = &go.at4(n, o, 0, 0);
              for (int oh = 0; oh < OH; ++oh) {
                const int ih0 = oh * stride - pad;
                for (int kh = 0; kh < K; ++kh) {
                  const int ih = ih0 + kh;
                  if (ih < 0 || ih >= H) continue;
                  const T* grow = gp + static_cast<size_t>(oh) * OW;
                  const T* xrow = xp + static_cast<size_t>(ih) * W;
                  T* dwrow = dwp + static_cast<size_t>(kh) * K;
                  for (int kw = 0; kw < K; ++kw) {
                    const int iw0 = -pad + kw;
                    int ow_lo = std::max(0, (-iw0 + stride - 1) / stride);
                    int ow_hi = std::min(OW - 1, (W - 1 - iw0) / stride);
                    const T* xq = xrow + iw0 + static_cast<size_t>(ow_lo) * stride;
                    T acc = T(0);
                    for (int ow = ow_lo; ow <= ow_hi; ++ow, xq += stride) acc += grow[ow] * *xq;
                    dwrow[kw] += acc;
                  }
                }
              }
            }
      }
      if (has_bias) {
        Node& bn = g.nodes_[static_cast<size_t>(self.inputs[2])];
        if (bn.requires_grad) {
          g.ensure_grad(bn);
          for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) {
              const T* gp = &go.at4(n, o, 0, 0);
              T acc = T(0);
              for (int i = 0; i < OH * OW; ++i) acc += gp[i];
              bn.grad.data[static_cast<size_t>(o)] += acc;
            }
        }
      }
    };
    return push(std::move(out), std::move(ins), nullptr, back, false);
  }

  // Batch normalization over NCHW. Train mode normalizes with batch
  // statistics and updates the running stats in-place; eval mode reads the
  // running stats and mutates nothing.
  Id batchnorm2d(Id x, BNStateT<T>* st, Mode mode) {
    {
      const TensorT<T>& probe = value(x);
      if (probe.rank() != 4)
        throw ShapeError("batchnorm2d expects NCHW input, got " + shape_str(probe.shape));
      if (probe.dim(1) != st->channels())
        throw ShapeError("batchnorm2d channel mismatch: input has " + std::to_string(probe.dim(1)) +
                         " channels, state has " + std::to_string(st->channels()));
      if (mode == Mode::Train && probe.dim(0) * probe.dim(2) * probe.dim(3) < 2)
        throw ShapeError("batchnorm2d train mode needs N*H*W >= 2 samples per channel");
    }
    // param() may grow the node table, so push leaves before taking refs
    Id gamma = param(&st->gamma);
    Id beta = param(&st->beta);
    const TensorT<T>& xv = value(x);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t count = static_cast<size_t>(N) * plane;
    const T* gp = st->gamma.value.ptr();
    const T* bp = st->beta.value.ptr();
    const T eps = st->epsilon;

    TensorT<T> out(xv.shape);
    TensorT<T> xhat(xv.shape);
    std::vector<T> invstd(static_cast<size_t>(C));

    for (int c = 0; c < C; ++c) {
      T mean, var;
      if (mode == Mode::Train) {
        double sum = 0.0, sq = 0.0;
        for (int n = 0; n < N; ++n) {
          const T* xp = &xv.at4(n, c, 0, 0);
          for (size_t i = 0; i < plane; ++i) {
            sum += xp[i];
            sq += static_cast<double>(xp[i]) * xp[i];
          }
        }
        mean = static_cast<T>(sum / static_cast<double>(count));
        var = static_cast<T>(std::max(0.0, sq / static_cast<double>(count) -
                                               (sum / static_cast<double>(count)) *
                                                   (sum / static_cast<double>(count))));
        st->running_mean.data[static_cast<size_t>(c)] =
            (T(1) - st->momentum) * st->running_mean.data[static_cast<size_t>(c)] + st->momentum * mean;
        st->running_var.data[static_cast<size_t>(c)] =
            (T(1) - st->momentum) * st->running_var.data[static_cast<size_t>(c)] + st->momentum * var;
      } else {
        mean = st->running_mean.data[static_cast<size_t>(c)];
        var = st->running_var.data[static_cast<size_t>(c)];
      }
      const T is = T(1) / std::sqrt(var + eps);
      invstd[static_cast<size_t>(c)] = is;
      for (int n = 0; n < N; ++n) {
        const T* xp = &xv.at4(n, c, 0, 0);
        T* hp = &xhat.at4(n, c, 0, 0);
        T* op = &out.at4(n, c, 0, 0);
        for (size_t i = 0; i < plane; ++i) {
          hp[i] = (xp[i] - mean) * is;
          op[i] = gp[c] * hp[i] + bp[c];
        }
      }
    }
    require_finite(out, "batchnorm2d");

    auto back = [N, C, plane, count, mode, xhat = std::move(xhat), invstd = std::move(invstd)](
                    GraphT& g, Node& self) {
      const TensorT<T>& go = self.grad;
      Node& xn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      Node& gn = g.nodes_[static_cast<size_t>(self.inputs[1])];
      Node& bn = g.nodes_[static_cast<size_t>(self.inputs[2])];
      const T* gamma = gn.value.ptr();
      for (int c = 0; c < C; ++c) {
        double dg = 0.0, db = 0.0;
        for (int n = 0; n < N; ++n) {
          const T* gop = &go.at4(n, c, 0, 0);
          const T* hp = &xhat.at4(n, c, 0, 0);
          for (size_t i = 0; i < plane; ++i) {
            dg += static_cast<double>(gop[i]) * hp[i];
            db += gop[i];
          }
        }
        if (gn.requires_grad) {
          g.ensure_grad(gn);
          gn.grad.data[static_cast<size_t>(c)] += static_cast<T>(dg);
        }
        if (bn.requires_grad) {
          g.ensure_grad(bn);
          bn.grad.data[static_cast<size_t>(c)] += static_cast<T>(db);
        }
        if (xn.requires_grad) {
          g.ensure_grad(xn);
          const T is = invstd[static_cast<size_t>(c)];
          if (mode == Mode::Train) {
            const T m = T(1) / static_cast<T>(count);
            for (int n = 0; n < N; ++n) {
              const T* gop = &go.at4(n, c, 0, 0);
              const T* hp = &xhat.at4(n, c, 0, 0);
              T* dxp = &xn.grad.at4(n, c, 0, 0);
              for (size_t i = 0; i < plane; ++i) {
                // d/dx of (x - mean(x)) * invstd(x) with batch statistics
                dxp[i] += gamma[c] * is *
                          (gop[i] - m * static_cast<T>(db) - hp[i] * m * static_cast<T>(dg));
              }
            }
          } else {
            for (int n = 0; n < N; ++n) {
              const T* gop = &go.at4(n, c, 0, 0);
              T* dxp = &xn.grad.at4(n, c, 0, 0);
              for (size_t i = 0; i < plane; ++i) dxp[i] += gamma[c] * is * gop[i];
            }
          }
        }
      }
    };
    return push(std::move(out), {x, gamma, beta}, nullptr, back, false);
  }

  Id relu(Id x) {
    const TensorT<T>& xv = value(x);
    TensorT<T> out(xv.shape);
    for (size_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
    auto back = [](GraphT& g, Node& self) {
      Node& xn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!xn.requires_grad) return;
      g.ensure_grad(xn);
      for (size_t i = 0; i < self.value.numel(); ++i)
        if (xn.value.data[i] > T(0)) xn.grad.data[i] += self.grad.data[i];
    };
    return push(std::move(out), {x}, nullptr, back, false);
  }

  // NCHW -> NC spatial mean
  Id global_avg_pool(Id x) {
    const TensorT<T>& xv = value(x);
    if (xv.rank() != 4)
      throw ShapeError("global_avg_pool expects NCHW input, got " + shape_str(xv.shape));
    const int N = xv.dim(0), C = xv.dim(1);
    const size_t plane = static_cast<size_t>(xv.dim(2)) * xv.dim(3);
    TensorT<T> out({N, C});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T* xp = &xv.at4(n, c, 0, 0);
        double s = 0.0;
        for (size_t i = 0; i < plane; ++i) s += xp[i];
        out.at2(n, c) = static_cast<T>(s / static_cast<double>(plane));
      }
    auto back = [N, C, plane](GraphT& g, Node& self) {
      Node& xn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!xn.requires_grad) return;
      g.ensure_grad(xn);
      const T inv = T(1) / static_cast<T>(plane);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T gv = self.grad.at2(n, c) * inv;
          T* dxp = &xn.grad.at4(n, c, 0, 0);
          for (size_t i = 0; i < plane; ++i) dxp[i] += gv;
        }
    };
    return push(std::move(out), {x}, nullptr, back, false);
  }

  // x: N*F, w: G*F, b: G  ->  N*G
  Id linear(Id x, Id w, Id b) {
    const TensorT<T>& xv = value(x);
    const TensorT<T>& wv = value(w);
    const TensorT<T>& bv = value(b);
    if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(1) ||
        bv.dim(0) != wv.dim(0))
      throw ShapeError("linear shape mismatch: x " + shape_str(xv.shape) + ", w " +
                       shape_str(wv.shape) + ", b " + shape_str(bv.shape));
    const int N = xv.dim(0), F = xv.dim(1), G = wv.dim(0);
    TensorT<T> out({N, G});
    for (int n = 0; n < N; ++n)
      for (int g = 0; g < G; ++g) {
        const T* xp = &xv.at2(n, 0);
        const T* wp = &wv.at2(g, 0);
        T acc = bv.data[static_cast<size_t>(g)];
        for (int f = 0; f < F; ++f) acc += xp[f] * wp[f];
        out.at2(n, g) = acc;
      }
    require_finite(out, "linear");
    auto back = [N, F, G](GraphT& g_, Node& self) {
      Node& xn = g_.nodes_[static_cast<size_t>(self.inputs[0])];
      Node& wn = g_.nodes_[static_cast<size_t>(self.inputs[1])];
      Node& bn = g_.nodes_[static_cast<size_t>(self.inputs[2])];
      for (int n = 0; n < N; ++n)
        for (int g = 0; g < G; ++g) {
          const T gv = self.grad.at2(n, g);
          if (xn.requires_grad) {
            g_.ensure_grad(xn);
            T* dxp = &xn.grad.at2(n, 0);
            const T* wp = &wn.value.at2(g, 0);
            for (int f = 0; f < F; ++f) dxp[f] += gv * wp[f];
          }
          if (wn.requires_grad) {
            g_.ensure_grad(wn);
            T* dwp = &wn.grad.at2(g, 0);
            const T* xp = &xn.value.at2(n, 0);
            for (int f = 0; f < F; ++f) dwp[f] += gv * xp[f];
          }
          if (bn.requires_grad) {
            g_.ensure_grad(bn);
            bn.grad.data[static_cast<size_t>(g)] += gv;
          }
        }
    };
    return push(std::move(out), {x, w, b}, nullptr, back, false);
  }

  // ---- losses and glue ---------------------------------------------------

  Id softmax(Id z, T temperature) {
    TensorT<T> p = softmax_t(value(z), temperature);
    auto back = [temperature](GraphT& g, Node& self) {
      Node& zn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!zn.requires_grad) return;
      g.ensure_grad(zn);
      const TensorT<T>& p = self.value;
      const int rows = p.rank() == 2 ? p.dim(0) : 1;
      const int cols = p.rank() == 2 ? p.dim(1) : p.dim(0);
      for (int r = 0; r < rows; ++r) {
        const T* pr = p.ptr() + static_cast<size_t>(r) * cols;
        const T* gr = self.grad.ptr() + static_cast<size_t>(r) * cols;
        T dot = T(0);
        for (int c = 0; c < cols; ++c) dot += gr[c] * pr[c];
        T* dz = zn.grad.ptr() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) dz[c] += pr[c] * (gr[c] - dot) / temperature;
      }
    };
    return push(std::move(p), {z}, nullptr, back, false);
  }

  // Mean over the batch of -log softmax(z)[label].
  Id cross_entropy(Id z, const std::vector<int>& labels) {
    const TensorT<T>& zv = value(z);
    if (zv.rank() != 2) throw ShapeError("cross_entropy expects N*K logits, got " + shape_str(zv.shape));
    const int N = zv.dim(0), K = zv.dim(1);
    if (static_cast<int>(labels.size()) != N)
      throw ShapeError("cross_entropy got " + std::to_string(labels.size()) + " labels for batch " +
                       std::to_string(N));
    for (int n = 0; n < N; ++n)
      if (labels[static_cast<size_t>(n)] < 0 || labels[static_cast<size_t>(n)] >= K)
        throw ShapeError("cross_entropy label " + std::to_string(labels[static_cast<size_t>(n)]) +
                         " out of range [0," + std::to_string(K) + ")");
    TensorT<T> p = softmax_t(zv, T(1));
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* zr = &zv.at2(n, 0);
      T mx = zr[0];
      for (int c = 1; c < K; ++c) mx = std::max(mx, zr[c]);
      double lse = 0.0;
      for (int c = 0; c < K; ++c) lse += std::exp(static_cast<double>(zr[c] - mx));
      loss += std::log(lse) + mx - zr[labels[static_cast<size_t>(n)]];
    }
    TensorT<T> out({1}, static_cast<T>(loss / N));
    require_finite(out, "cross_entropy");
    auto back = [labels, p = std::move(p), N, K](GraphT& g, Node& self) {
      Node& zn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!zn.requires_grad) return;
      g.ensure_grad(zn);
      const T go = self.grad.data[0] / static_cast<T>(N);
      for (int n = 0; n < N; ++n) {
        const T* pr = &p.at2(n, 0);
        T* dz = &zn.grad.at2(n, 0);
        for (int c = 0; c < K; ++c) dz[c] += go * pr[c];
        dz[labels[static_cast<size_t>(n)]] -= go;
      }
    };
    return push(std::move(out), {z}, nullptr, back, false);
  }

  // T^2-scaled mean KL( softmax(zt/T) || softmax(zs/T) ). The teacher side is
  // a plain tensor, so no gradient can flow into it.
  Id kl_temperature(Id z_s, const TensorT<T>& z_t, T temperature) {
    if (temperature <= T(0)) throw ConfigError("kl_temperature needs temperature > 0");
    const TensorT<T>& zs = value(z_s);
    if (!zs.same_shape(z_t))
      throw ShapeError("kl_temperature shape mismatch: student " + shape_str(zs.shape) +
                       " vs teacher " + shape_str(z_t.shape));
    if (zs.rank() != 2) throw ShapeError("kl_temperature expects N*K logits, got " + shape_str(zs.shape));
    const int N = zs.dim(0), K = zs.dim(1);
    TensorT<T> ps = softmax_t(zs, temperature);
    TensorT<T> pt = softmax_t(z_t, temperature);
    double loss = 0.0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < K; ++c) {
        const double p = pt.at2(n, c);
        if (p > 0.0) loss += p * (std::log(p) - std::log(static_cast<double>(ps.at2(n, c))));
      }
    loss *= static_cast<double>(temperature) * temperature / N;
    TensorT<T> out({1}, static_cast<T>(loss));
    require_finite(out, "kl_temperature");
    auto back = [ps = std::move(ps), pt = std::move(pt), N, K, temperature](GraphT& g, Node& self) {
      Node& zn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!zn.requires_grad) return;
      g.ensure_grad(zn);
      const T go = self.grad.data[0] * temperature / static_cast<T>(N);
      for (int n = 0; n < N; ++n) {
        T* dz = &zn.grad.at2(n, 0);
        for (int c = 0; c < K; ++c) dz[c] += go * (ps.at2(n, c) - pt.at2(n, c));
      }
    };
    return push(std::move(out), {z_s}, nullptr, back, false);
  }

  Id add(Id a, Id b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    if (!av.same_shape(bv))
      throw ShapeError("add shape mismatch: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    TensorT<T> out(av.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
    require_finite(out, "add");
    auto back = [](GraphT& g, Node& self) {
      for (int k = 0; k < 2; ++k) {
        Node& in = g.nodes_[static_cast<size_t>(self.inputs[static_cast<size_t>(k)])];
        if (!in.requires_grad) continue;
        g.ensure_grad(in);
        for (size_t i = 0; i < self.value.numel(); ++i) in.grad.data[i] += self.grad.data[i];
      }
    };
    return push(std::move(out), {a, b}, nullptr, back, false);
  }

  Id scale(Id a, T c) {
    const TensorT<T>& av = value(a);
    TensorT<T> out(av.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] * c;
    require_finite(out, "scale");
    auto back = [c](GraphT& g, Node& self) {
      Node& in = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!in.requires_grad) return;
      g.ensure_grad(in);
      for (size_t i = 0; i < self.value.numel(); ++i) in.grad.data[i] += c * self.grad.data[i];
    };
    return push(std::move(out), {a}, nullptr, back, false);
  }

  // Mean squared error against a constant target.
  Id mse(Id a, const TensorT<T>& target) {
    const TensorT<T>& av = value(a);
    if (!av.same_shape(target))
      throw ShapeError("mse shape mismatch: " + shape_str(av.shape) + " vs " + shape_str(target.shape));
    double s = 0.0;
    for (size_t i = 0; i < av.numel(); ++i) {
      const double d = static_cast<double>(av.data[i]) - target.data[i];
      s += d * d;
    }
    TensorT<T> out({1}, static_cast<T>(s / static_cast<double>(av.numel())));
    auto back = [target](GraphT& g, Node& self) {
      Node& in = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!in.requires_grad) return;
      g.ensure_grad(in);
      const T go = self.grad.data[0] * T(2) / static_cast<T>(in.value.numel());
      for (size_t i = 0; i < in.value.numel(); ++i)
        in.grad.data[i] += go * (in.value.data[i] - target.data[i]);
    };
    return push(std::move(out), {a}, nullptr, back, false);
  }

  // Average-pool an NCHW map down to oh*ow. Bins must tile the input exactly.
  Id avg_pool_to(Id x, int oh, int ow) {
    const TensorT<T>& xv = value(x);
    if (xv.rank() != 4) throw ShapeError("avg_pool_to expects NCHW, got " + shape_str(xv.shape));
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (oh <= 0 || ow <= 0 || H % oh != 0 || W % ow != 0)
      throw ShapeError("avg_pool_to cannot tile " + shape_str(xv.shape) + " into " +
                       std::to_string(oh) + "x" + std::to_string(ow));
    const int fh = H / oh, fw = W / ow;
    TensorT<T> out({N, C, oh, ow});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            double s = 0.0;
            for (int a = 0; a < fh; ++a)
              for (int b = 0; b < fw; ++b) s += xv.at4(n, c, i * fh + a, j * fw + b);
            out.at4(n, c, i, j) = static_cast<T>(s / (fh * fw));
          }
    auto back = [N, C, oh, ow, fh, fw](GraphT& g, Node& self) {
      Node& xn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!xn.requires_grad) return;
      g.ensure_grad(xn);
      const T inv = T(1) / static_cast<T>(fh * fw);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
              const T gv = self.grad.at4(n, c, i, j) * inv;
              for (int a = 0; a < fh; ++a)
                for (int b = 0; b < fw; ++b) xn.grad.at4(n, c, i * fh + a, j * fw + b) += gv;
            }
    };
    return push(std::move(out), {x}, nullptr, back, false);
  }

  // Attention-transfer loss: per-sample channel-energy map, L2-normalized,
  // mean squared difference against the teacher's map. Channels may differ,
  // spatial dims must match.
  Id at_loss(Id s, const TensorT<T>& t, T eps = T(1e-6)) {
    const TensorT<T>& sv = value(s);
    if (sv.rank() != 4 || t.rank() != 4 || sv.dim(0) != t.dim(0) || sv.dim(2) != t.dim(2) ||
        sv.dim(3) != t.dim(3))
      throw ShapeError("at_loss needs matching batch and spatial dims: " + shape_str(sv.shape) +
                       " vs " + shape_str(t.shape));
    const int N = sv.dim(0);
    const size_t D = static_cast<size_t>(sv.dim(2)) * sv.dim(3);
    auto maps = [D](const TensorT<T>& f, std::vector<T>& q, std::vector<T>& norm, T eps_) {
      const int n_ = f.dim(0), c_ = f.dim(1);
      q.assign(static_cast<size_t>(n_) * D, T(0));
      norm.assign(static_cast<size_t>(n_), T(0));
      for (int n = 0; n < n_; ++n) {
        T* qn = &q[static_cast<size_t>(n) * D];
        for (int c = 0; c < c_; ++c) {
          const T* fp = &f.at4(n, c, 0, 0);
          for (size_t i = 0; i < D; ++i) qn[i] += fp[i] * fp[i];
        }
        double s2 = 0.0;
        for (size_t i = 0; i < D; ++i) s2 += static_cast<double>(qn[i]) * qn[i];
        const T m = std::max(static_cast<T>(std::sqrt(s2)), eps_);
        norm[static_cast<size_t>(n)] = m;
        for (size_t i = 0; i < D; ++i) qn[i] /= m;
      }
    };
    std::vector<T> qs, qt, ns, nt;
    maps(sv, qs, ns, eps);
    maps(t, qt, nt, eps);
    double loss = 0.0;
    for (size_t i = 0; i < qs.size(); ++i) {
      const double d = static_cast<double>(qs[i]) - qt[i];
      loss += d * d;
    }
    TensorT<T> out({1}, static_cast<T>(loss / static_cast<double>(qs.size())));
    auto back = [qs = std::move(qs), qt = std::move(qt), ns = std::move(ns), N, D](GraphT& g,
                                                                                   Node& self) {
      Node& sn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!sn.requires_grad) return;
      g.ensure_grad(sn);
      const int C = sn.value.dim(1);
      const T go = self.grad.data[0] * T(2) / static_cast<T>(static_cast<size_t>(N) * D);
      std::vector<T> da(D);
      for (int n = 0; n < N; ++n) {
        const T* q = &qs[static_cast<size_t>(n) * D];
        const T* qtn = &qt[static_cast<size_t>(n) * D];
        // dL/dq, then through q = a / max(|a|, eps)
        T dot = T(0);
        for (size_t i = 0; i < D; ++i) dot += (q[i] - qtn[i]) * q[i];
        const T inv = T(1) / ns[static_cast<size_t>(n)];
        for (size_t i = 0; i < D; ++i) da[i] = go * ((q[i] - qtn[i]) - dot * q[i]) * inv;
        for (int c = 0; c < C; ++c) {
          const T* fp = &sn.value.at4(n, c, 0, 0);
          T* dfp = &sn.grad.at4(n, c, 0, 0);
          for (size_t i = 0; i < D; ++i) dfp[i] += da[i] * T(2) * fp[i];
        }
      }
    };
    return push(std::move(out), {s}, nullptr, back, false);
  }

  // Similarity-preserving loss: row-normalized batch Gram matrices compared
  // in Frobenius norm, scaled by 1/N^2. Feature shapes are free, batch sizes
  // must agree.
  Id sp_loss(Id s, const TensorT<T>& t, T eps = T(1e-6)) {
    const TensorT<T>& sv = value(s);
    if (sv.rank() < 2 || t.rank() < 2 || sv.dim(0) != t.dim(0))
      throw ShapeError("sp_loss needs equal batch sizes: " + shape_str(sv.shape) + " vs " +
                       shape_str(t.shape));
    const int N = sv.dim(0);
    auto gram = [N, eps](const TensorT<T>& f, std::vector<T>& gmat, std::vector<T>& norm) {
      const size_t D = f.numel() / static_cast<size_t>(N);
      std::vector<T> r(static_cast<size_t>(N) * N);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
          const T* a = f.ptr() + static_cast<size_t>(i) * D;
          const T* b = f.ptr() + static_cast<size_t>(j) * D;
          double acc = 0.0;
          for (size_t k = 0; k < D; ++k) acc += static_cast<double>(a[k]) * b[k];
          r[static_cast<size_t>(i) * N + j] = static_cast<T>(acc);
        }
      gmat = r;
      norm.assign(static_cast<size_t>(N), T(0));
      for (int i = 0; i < N; ++i) {
        double s2 = 0.0;
        for (int j = 0; j < N; ++j) {
          const T v = r[static_cast<size_t>(i) * N + j];
          s2 += static_cast<double>(v) * v;
        }
        const T m = std::max(static_cast<T>(std::sqrt(s2)), eps);
        norm[static_cast<size_t>(i)] = m;
        for (int j = 0; j < N; ++j) gmat[static_cast<size_t>(i) * N + j] /= m;
      }
    };
    std::vector<T> gs, gt, ns, nt;
    gram(sv, gs, ns);
    gram(t, gt, nt);
    double loss = 0.0;
    for (size_t i = 0; i < gs.size(); ++i) {
      const double d = static_cast<double>(gs[i]) - gt[i];
      loss += d * d;
    }
    TensorT<T> out({1}, static_cast<T>(loss / (static_cast<double>(N) * N)));
    auto back = [gs = std::move(gs), gt = std::move(gt), ns = std::move(ns), N](GraphT& g,
                                                                                Node& self) {
      Node& sn = g.nodes_[static_cast<size_t>(self.inputs[0])];
      if (!sn.requires_grad) return;
      g.ensure_grad(sn);
      const size_t D = sn.value.numel() / static_cast<size_t>(N);
      const T go = self.grad.data[0] * T(2) / static_cast<T>(static_cast<size_t>(N) * N);
      // dL/dR through per-row normalization, then dL/dF = (dR + dR^T) F
      std::vector<T> dr(static_cast<size_t>(N) * N);
      for (int i = 0; i < N; ++i) {
        const T* gi = &gs[static_cast<size_t>(i) * N];
        const T* ti = &gt[static_cast<size_t>(i) * N];
        T dot = T(0);
        for (int j = 0; j < N; ++j) dot += (gi[j] - ti[j]) * gi[j];
        const T inv = T(1) / ns[static_cast<size_t>(i)];
        for (int j = 0; j < N; ++j)
          dr[static_cast<size_t>(i) * N + j] = go * ((gi[j] - ti[j]) - dot * gi[j]) * inv;
      }
      for (int i = 0; i < N; ++i) {
        T* df = sn.grad.ptr() + static_cast<size_t>(i) * D;
        for (int j = 0; j < N; ++j) {
          const T c = dr[static_cast<size_t>(i) * N + j] + dr[static_cast<size_t>(j) * N + i];
          if (c == T(0)) continue;
          const T* fj = sn.value.ptr() + static_cast<size_t>(j) * D;
          for (size_t k = 0; k < D; ++k) df[k] += c * fj[k];
        }
      }
    };
    return push(std::move(out), {s}, nullptr, back, false);
  }

  // ---- backward ----------------------------------------------------------

  // Seeds d(loss)/d(loss) = 1 and walks the tape backwards, accumulating into
  // every bound Parameter's grad field.
  void backward(Id loss) {
    Node& ln = nodes_[static_cast<size_t>(loss)];
    if (ln.value.numel() != 1)
      throw ShapeError("backward needs a scalar loss, got shape " + shape_str(ln.value.shape));
    ensure_grad(ln);
    ln.grad.data[0] = T(1);
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.grad.numel() == 0 || !n.requires_grad) continue;
      if (n.backprop) n.backprop(*this, n);
      if (n.bound) {
        for (size_t j = 0; j < n.grad.numel(); ++j) n.bound->grad.data[j] += n.grad.data[j];
      }
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;  // empty until first touched in backward
    std::vector<Id> inputs;
    ParameterT<T>* bound = nullptr;
    std::function<void(GraphT&, Node&)> backprop;
    bool requires_grad = false;
  };

  void ensure_grad(Node& n) {
    if (n.grad.numel() == 0) n.grad = TensorT<T>(n.value.shape);
  }

  Id push(TensorT<T> value, std::vector<Id> inputs, ParameterT<T>* bound,
          std::function<void(GraphT&, Node&)> backprop, bool is_param) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.bound = bound;
    n.backprop = std::move(backprop);
    n.requires_grad = is_param;
    for (Id i : n.inputs)
      n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(i)].requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

using Graph = GraphT<float>;

}  // namespace pwkd
