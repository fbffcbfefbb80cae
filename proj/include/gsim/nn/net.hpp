#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gsim/nn/layers.hpp"
#include "gsim/nn/tensor.hpp"
#include "gsim/util/rng.hpp"

namespace gsim {

template <typename T>
struct Param {
  Tensor<T> w, b;    // weights, bias
  Tensor<T> gw, gb;  // accumulated gradients
  bool present = false;
};

// Per-sample forward state: every activation plus pool argmax and dropout
// masks, everything backward needs. Reusable across calls on one net.
template <typename T>
struct Cache {
  std::vector<Tensor<T>> acts;  // acts[0] = input, acts[l+1] = output of layer l
  std::vector<std::vector<std::uint32_t>> argmax;  // per layer (pool only)
  std::vector<Tensor<T>> mask;                     // per layer (dropout only)
  bool prepared = false;
};

template <typename T>
class Net {
 public:
  std::vector<LayerSpec> specs;
  Shape in_shape;
  std::vector<Shape> shapes;  // shapes[l] = output shape of layer l
  std::vector<Param<T>> params;
  std::uint64_t seed = 0;

  Net() = default;

  Net(std::vector<LayerSpec> layer_specs, Shape input, std::uint64_t init_seed)
      : specs(std::move(layer_specs)), in_shape(input), seed(init_seed) {
    Shape cur = in_shape;
    shapes.reserve(specs.size());
    params.resize(specs.size());
    for (std::size_t l = 0; l < specs.size(); ++l) {
      const LayerSpec& s = specs[l];
      if (s.kind == LayerKind::softmax_ce && l + 1 != specs.size())
        throw std::runtime_error("net: softmax_ce must be the final layer");
      Shape out = infer_shape(s, cur);
      if (s.kind == LayerKind::conv2d) {
        params[l].present = true;
        params[l].w = Tensor<T>({s.kh, s.kw, cur.c, s.units});
        params[l].b = Tensor<T>({s.units});
      } else if (s.kind == LayerKind::dense) {
        const int n = static_cast<int>(cur.numel());
        params[l].present = true;
        params[l].w = Tensor<T>({n, s.units});
        params[l].b = Tensor<T>({s.units});
      }
      shapes.push_back(out);
      cur = out;
    }
    init_params();
    zero_grads();
  }

  Shape out_shape() const { return shapes.empty() ? in_shape : shapes.back(); }

  // He-uniform weights (limit sqrt(6/fan_in)), zero biases; one RNG stream
  // consumed in layer order so identical seeds give identical parameters.
  void init_params() {
    Rng rng(splitmix64(seed));
    Shape cur = in_shape;
    for (std::size_t l = 0; l < specs.size(); ++l) {
      if (params[l].present) {
        const LayerSpec& s = specs[l];
        const double fan_in = s.kind == LayerKind::conv2d
                                  ? static_cast<double>(s.kh) * s.kw * cur.c
                                  : static_cast<double>(cur.numel());
        const double limit = std::sqrt(6.0 / fan_in);
        for (auto& v : params[l].w.data) v = static_cast<T>(rng.uniform(-limit, limit));
        params[l].b.fill(T(0));
      }
      cur = shapes[l];
    }
  }

  void zero_grads() {
    for (auto& p : params) {
      if (!p.present) continue;
      if (p.gw.shape != p.w.shape) p.gw = Tensor<T>(p.w.shape);
      if (p.gb.shape != p.b.shape) p.gb = Tensor<T>(p.b.shape);
      p.gw.fill(T(0));
      p.gb.fill(T(0));
    }
  }

  void prepare(Cache<T>& c) const {
    c.acts.resize(specs.size() + 1);
    c.argmax.resize(specs.size());
    c.mask.resize(specs.size());
    c.acts[0] = Tensor<T>({static_cast<int>(in_shape.numel())});
    for (std::size_t l = 0; l < specs.size(); ++l) {
      c.acts[l + 1] = Tensor<T>({static_cast<int>(shapes[l].numel())});
      if (specs[l].kind == LayerKind::maxpool2d)
        c.argmax[l].assign(shapes[l].numel(), 0);
      if (specs[l].kind == LayerKind::dropout)
        c.mask[l] = Tensor<T>({static_cast<int>(shapes[l].numel())});
    }
    c.prepared = true;
  }

  // training=true enables dropout (rng required if any dropout layer has
  // rate > 0); inference is a pure function of (params, input).
  void forward(const T* input, Cache<T>& c, bool training = false, Rng* rng = nullptr) const {
    if (!c.prepared) prepare(c);
    const std::size_t in_n = in_shape.numel();
    for (std::size_t i = 0; i < in_n; ++i) c.acts[0][i] = input[i];
    Shape cur = in_shape;
    for (std::size_t l = 0; l < specs.size(); ++l) {
      const LayerSpec& s = specs[l];
      const T* x = c.acts[l].ptr();
      T* y = c.acts[l + 1].ptr();
      switch (s.kind) {
        case LayerKind::conv2d:
          conv2d_forward(x, cur.h, cur.w, cur.c, params[l].w.ptr(), params[l].b.ptr(), s.kh,
                         s.kw, s.units, s.sh, s.sw, y);
          break;
        case LayerKind::maxpool2d:
          maxpool2d_forward(x, cur.h, cur.w, cur.c, s.kh, s.kw, s.sh, s.sw, y,
                            c.argmax[l].data());
          break;
        case LayerKind::dense:
          dense_forward(x, static_cast<int>(cur.numel()), params[l].w.ptr(), params[l].b.ptr(),
                        s.units, y);
          break;
        case LayerKind::relu:
          relu_forward(x, cur.numel(), y);
          break;
        case LayerKind::dropout:
          if (training && s.rate > 0.0 && !rng)
            throw std::runtime_error("forward: dropout in training mode needs an rng");
          dropout_forward(x, cur.numel(), s.rate, training, rng, y, c.mask[l].ptr());
          break;
        case LayerKind::flatten:
          for (std::size_t i = 0; i < cur.numel(); ++i) y[i] = x[i];
          break;
        case LayerKind::softmax_ce:
          softmax_forward(x, cur.c, y);
          break;
      }
      cur = shapes[l];
    }
  }

  const Tensor<T>& output(const Cache<T>& c) const { return c.acts.back(); }

  T loss(const Cache<T>& c, int label) const {
    if (specs.empty() || specs.back().kind != LayerKind::softmax_ce)
      throw std::runtime_error("loss: net has no softmax_ce head");
    return softmax_ce_loss(c.acts.back().ptr(), shapes.back().c, label);
  }

  // Backward from a class label through the softmax head. Gradients
  // accumulate into gw/gb (callers zero_grads between batches).
  void backward(const Cache<T>& c, int label) {
    if (specs.empty() || specs.back().kind != LayerKind::softmax_ce)
      throw std::runtime_error("backward: net has no softmax_ce head");
    if (!c.prepared) throw std::runtime_error("backward: missing forward cache");
    const int k = shapes.back().c;
    std::vector<T> dlogits(static_cast<std::size_t>(k), T(0));
    softmax_ce_backward(c.acts.back().ptr(), k, label, dlogits.data());
    backprop_range(c, specs.size() - 1, dlogits.data());
  }

  // Backward from an externally supplied gradient on the net output (used
  // when the loss is computed outside, e.g. a triplet loss on embeddings).
  void backward_from_output(const Cache<T>& c, const T* dout) {
    if (!specs.empty() && specs.back().kind == LayerKind::softmax_ce)
      throw std::runtime_error("backward_from_output: use backward() with a softmax_ce head");
    if (!c.prepared) throw std::runtime_error("backward: missing forward cache");
    backprop_range(c, specs.size(), dout);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& p : params) {
      if (!p.present) continue;
      fn(p.w, p.gw);
      fn(p.b, p.gb);
    }
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& p : params)
      if (p.present) n += p.w.numel() + p.b.numel();
    return n;
  }

  template <typename U>
  Net<U> cast() const {
    Net<U> out;
    out.specs = specs;
    out.in_shape = in_shape;
    out.shapes = shapes;
    out.seed = seed;
    out.params.resize(params.size());
    for (std::size_t l = 0; l < params.size(); ++l) {
      if (!params[l].present) continue;
      out.params[l].present = true;
      out.params[l].w = params[l].w.template cast<U>();
      out.params[l].b = params[l].b.template cast<U>();
    }
    out.zero_grads();
    return out;
  }

 private:
  // Backpropagates dtop (gradient on acts[top]) down to the input,
  // accumulating parameter gradients. top = number of layers already
  // consumed above (softmax is handled by the caller).
  void backprop_range(const Cache<T>& c, std::size_t top, const T* dtop) {
    std::vector<Tensor<T>> dacts(top + 1);
    dacts[top] = Tensor<T>({static_cast<int>(act_shape(top).numel())});
    for (std::size_t i = 0; i < dacts[top].numel(); ++i) dacts[top][i] = dtop[i];
    for (std::size_t l = top; l-- > 0;) {
      const LayerSpec& s = specs[l];
      const Shape in_s = act_shape(l);
      dacts[l] = Tensor<T>({static_cast<int>(in_s.numel())});
      const T* x = c.acts[l].ptr();
      const T* dy = dacts[l + 1].ptr();
      T* dx = dacts[l].ptr();
      switch (s.kind) {
        case LayerKind::conv2d:
          conv2d_backward(x, in_s.h, in_s.w, in_s.c, params[l].w.ptr(), s.kh, s.kw, s.units,
                          s.sh, s.sw, dy, dx, params[l].gw.ptr(), params[l].gb.ptr());
          break;
        case LayerKind::maxpool2d:
          maxpool2d_backward(c.argmax[l].data(), shapes[l].numel(), dy, dx);
          break;
        case LayerKind::dense:
          dense_backward(x, static_cast<int>(in_s.numel()), params[l].w.ptr(), s.units, dy, dx,
                         params[l].gw.ptr(), params[l].gb.ptr());
          break;
        case LayerKind::relu:
          relu_backward(x, in_s.numel(), dy, dx);
          break;
        case LayerKind::dropout:
          dropout_backward(c.mask[l].ptr(), in_s.numel(), dy, dx);
          break;
        case LayerKind::flatten:
          for (std::size_t i = 0; i < in_s.numel(); ++i) dx[i] += dy[i];
          break;
        case LayerKind::softmax_ce:
          throw std::runtime_error("backprop: softmax_ce inside the chain");
      }
    }
  }

  Shape act_shape(std::size_t idx) const { return idx == 0 ? in_shape : shapes[idx - 1]; }
};

// Flattened non-differentiability witness of one forward pass: relu input
// signs and pool argmax choices. Finite-difference checks skip parameters
// whose +/-eps passes disagree here (the loss is piecewise there).
template <typename T>
std::vector<std::uint32_t> kink_signature(const Net<T>& net, const Cache<T>& c) {
  std::vector<std::uint32_t> sig;
  for (std::size_t l = 0; l < net.specs.size(); ++l) {
    if (net.specs[l].kind == LayerKind::relu) {
      const auto& x = c.acts[l];
      for (std::size_t i = 0; i < x.numel(); ++i) sig.push_back(x[i] > T(0) ? 1u : 0u);
    } else if (net.specs[l].kind == LayerKind::maxpool2d) {
      sig.insert(sig.end(), c.argmax[l].begin(), c.argmax[l].end());
    }
  }
  return sig;
}

}  // namespace gsim
