#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsim/nn/tensor.hpp"
#include "gsim/util/rng.hpp"

namespace gsim {

enum class LayerKind : std::uint32_t {
  conv2d = 0,
  maxpool2d = 1,
  dense = 2,
  relu = 3,
  dropout = 4,
  flatten = 5,
  softmax_ce = 6,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax_ce: return "softmax_ce";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int kh = 0, kw = 0;      // kernel extent (conv, pool)
  int sh = 0, sw = 0;      // stride; pool defaults to its window
  int units = 0;           // conv: output channels; dense: output width
  double rate = 0.0;       // dropout rate, in [0, 1)

  static LayerSpec conv(int filters, int kh, int kw, int sh = 1, int sw = 1) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.units = filters;
    s.kh = kh; s.kw = kw; s.sh = sh; s.sw = sw;
    return s;
  }
  static LayerSpec pool(int kh, int kw, int sh = 0, int sw = 0) {
    LayerSpec s;
    s.kind = LayerKind::maxpool2d;
    s.kh = kh; s.kw = kw;
    s.sh = sh ? sh : kh;
    s.sw = sw ? sw : kw;
    return s;
  }
  static LayerSpec dense(int units) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.units = units;
    return s;
  }
  static LayerSpec relu() {
    LayerSpec s;
    s.kind = LayerKind::relu;
    return s;
  }
  static LayerSpec dropout(double rate) {
    if (rate < 0.0 || rate >= 1.0) throw std::runtime_error("dropout: rate must be in [0,1)");
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.rate = rate;
    return s;
  }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
  }
  static LayerSpec softmax_ce() {
    LayerSpec s;
    s.kind = LayerKind::softmax_ce;
    return s;
  }
};

// Shape of one activation: spatial h x w x c, or flat {n}.
struct Shape {
  int h = 0, w = 0, c = 0;
  bool flat = false;

  std::size_t numel() const {
    return flat ? static_cast<std::size_t>(c)
                : static_cast<std::size_t>(h) * w * c;
  }
};

inline Shape infer_shape(const LayerSpec& s, const Shape& in) {
  switch (s.kind) {
    case LayerKind::conv2d: {
      if (in.flat) throw std::runtime_error("conv2d: flat input");
      const int oh = (in.h - s.kh) / s.sh + 1;
      const int ow = (in.w - s.kw) / s.sw + 1;
      if (s.kh > in.h || s.kw > in.w || oh < 1 || ow < 1)
        throw std::runtime_error("conv2d: kernel does not fit input");
      return Shape{oh, ow, s.units, false};
    }
    case LayerKind::maxpool2d: {
      if (in.flat) throw std::runtime_error("maxpool2d: flat input");
      if (s.kh > in.h || s.kw > in.w)
        throw std::runtime_error("maxpool2d: window does not fit input");
      const int oh = (in.h - s.kh) / s.sh + 1;
      const int ow = (in.w - s.kw) / s.sw + 1;
      return Shape{oh, ow, in.c, false};
    }
    case LayerKind::dense: {
      return Shape{0, 0, s.units, true};
    }
    case LayerKind::relu:
    case LayerKind::dropout:
      return in;
    case LayerKind::flatten:
      return Shape{0, 0, static_cast<int>(in.numel()), true};
    case LayerKind::softmax_ce:
      if (!in.flat || in.c < 2) throw std::runtime_error("softmax_ce: needs a flat input of >=2 logits");
      return in;
  }
  throw std::runtime_error("infer_shape: unknown layer kind");
}

// ---- layer kernels ------------------------------------------------------
// Accumulation order is part of the contract: each output value is one
// addition chain with a fixed term order, so 64-bit runs compare bitwise
// against the naive loop oracles (no FMA: built with -ffp-contract=off).

// input h x w x c, weights kh x kw x c x f (f fastest), bias f.
template <typename T>
void conv2d_forward(const T* in, int h, int w, int c, const T* wt, const T* bias,
                    int kh, int kw, int f, int sh, int sw, T* out) {
  const int oh = (h - kh) / sh + 1;
  const int ow = (w - kw) / sw + 1;
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      T* acc = out + (static_cast<std::size_t>(i) * ow + j) * f;
      for (int q = 0; q < f; ++q) acc[q] = bias[q];
      for (int ki = 0; ki < kh; ++ki)
        for (int kj = 0; kj < kw; ++kj) {
          const T* row = in + ((static_cast<std::size_t>(i * sh + ki) * w) + (j * sw + kj)) * c;
          const T* wrow = wt + ((static_cast<std::size_t>(ki) * kw + kj) * c) * f;
          for (int q0 = 0; q0 < c; ++q0) {
            const T xv = row[q0];
            const T* wf = wrow + static_cast<std::size_t>(q0) * f;
            for (int q = 0; q < f; ++q) acc[q] += xv * wf[q];
          }
        }
    }
}

template <typename T>
void conv2d_backward(const T* in, int h, int w, int c, const T* wt, int kh, int kw, int f,
                     int sh, int sw, const T* dout, T* din, T* dwt, T* dbias) {
  const int oh = (h - kh) / sh + 1;
  const int ow = (w - kw) / sw + 1;
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      const T* dy = dout + (static_cast<std::size_t>(i) * ow + j) * f;
      for (int q = 0; q < f; ++q) dbias[q] += dy[q];
      for (int ki = 0; ki < kh; ++ki)
        for (int kj = 0; kj < kw; ++kj) {
          const std::size_t in_off = ((static_cast<std::size_t>(i * sh + ki) * w) + (j * sw + kj)) * c;
          const T* row = in + in_off;
          T* drow = din + in_off;
          const std::size_t w_off = ((static_cast<std::size_t>(ki) * kw + kj) * c) * f;
          for (int q0 = 0; q0 < c; ++q0) {
            const T xv = row[q0];
            const T* wf = wt + w_off + static_cast<std::size_t>(q0) * f;
            T* dwf = dwt + w_off + static_cast<std::size_t>(q0) * f;
            T dx = 0;
            for (int q = 0; q < f; ++q) {
              dwf[q] += xv * dy[q];
              dx += wf[q] * dy[q];
            }
            drow[q0] += dx;
          }
        }
    }
}

// argmax stores the flat input offset per output cell; ties keep the first
// window position in (ki, kj) scan order.
template <typename T>
void maxpool2d_forward(const T* in, int h, int w, int c, int kh, int kw, int sh, int sw,
                       T* out, std::uint32_t* argmax) {
  const int oh = (h - kh) / sh + 1;
  const int ow = (w - kw) / sw + 1;
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j)
      for (int q = 0; q < c; ++q) {
        std::size_t best = ((static_cast<std::size_t>(i * sh) * w) + (j * sw)) * c + q;
        T bv = in[best];
        for (int ki = 0; ki < kh; ++ki)
          for (int kj = 0; kj < kw; ++kj) {
            const std::size_t off =
                ((static_cast<std::size_t>(i * sh + ki) * w) + (j * sw + kj)) * c + q;
            if (in[off] > bv) {
              bv = in[off];
              best = off;
            }
          }
        const std::size_t o = (static_cast<std::size_t>(i) * ow + j) * c + q;
        out[o] = bv;
        argmax[o] = static_cast<std::uint32_t>(best);
      }
}

template <typename T>
void maxpool2d_backward(const std::uint32_t* argmax, std::size_t out_n, const T* dout, T* din) {
  for (std::size_t o = 0; o < out_n; ++o) din[argmax[o]] += dout[o];
}

// weights n x m (m fastest), bias m.
template <typename T>
void dense_forward(const T* in, int n, const T* wt, const T* bias, int m, T* out) {
  for (int j = 0; j < m; ++j) out[j] = bias[j];
  for (int i = 0; i < n; ++i) {
    const T xv = in[i];
    const T* wr = wt + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) out[j] += xv * wr[j];
  }
}

template <typename T>
void dense_backward(const T* in, int n, const T* wt, int m, const T* dout, T* din, T* dwt,
                    T* dbias) {
  for (int j = 0; j < m; ++j) dbias[j] += dout[j];
  for (int i = 0; i < n; ++i) {
    const T xv = in[i];
    const T* wr = wt + static_cast<std::size_t>(i) * m;
    T* dwr = dwt + static_cast<std::size_t>(i) * m;
    T dx = 0;
    for (int j = 0; j < m; ++j) {
      dwr[j] += xv * dout[j];
      dx += wr[j] * dout[j];
    }
    din[i] += dx;
  }
}

template <typename T>
void relu_forward(const T* in, std::size_t n, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <typename T>
void relu_backward(const T* in, std::size_t n, const T* dout, T* din) {
  for (std::size_t i = 0; i < n; ++i) din[i] += in[i] > T(0) ? dout[i] : T(0);
}

// Inverted dropout: keep with probability 1-rate, scale kept units by
// 1/(1-rate); inference is the identity. mask holds the applied scale.
template <typename T>
void dropout_forward(const T* in, std::size_t n, double rate, bool training, Rng* rng, T* out,
                     T* mask) {
  if (!training || rate == 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = in[i];
      if (mask) mask[i] = T(1);
    }
    return;
  }
  const T scale = T(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < n; ++i) {
    const T m = rng->uniform() < rate ? T(0) : scale;
    mask[i] = m;
    out[i] = in[i] * m;
  }
}

template <typename T>
void dropout_backward(const T* mask, std::size_t n, const T* dout, T* din) {
  for (std::size_t i = 0; i < n; ++i) din[i] += dout[i] * mask[i];
}

// Stabilized softmax; returns probabilities. Loss against a label is
// -log(probs[label]); gradient on logits is probs - onehot(label).
template <typename T>
void softmax_forward(const T* logits, int k, T* probs) {
  T mx = logits[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  T sum = 0;
  for (int i = 0; i < k; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (int i = 0; i < k; ++i) probs[i] /= sum;
}

template <typename T>
T softmax_ce_loss(const T* probs, int k, int label) {
  if (label < 0 || label >= k) throw std::runtime_error("softmax_ce: label out of range");
  const T p = std::max(probs[label], std::numeric_limits<T>::min());
  return -std::log(p);
}

template <typename T>
void softmax_ce_backward(const T* probs, int k, int label, T* dlogits) {
  for (int i = 0; i < k; ++i) dlogits[i] += probs[i] - (i == label ? T(1) : T(0));
}

}  // namespace gsim
