#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsim/nn/net.hpp"

namespace gsim {

enum class OptAlgo { sgd, adam };

struct OptConfig {
  OptAlgo algo = OptAlgo::adam;
  double lr = 1e-3;
  double momentum = 0.0;   // sgd
  double beta1 = 0.9;      // adam
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Applies accumulated gradients to a net's parameters. Per-tensor state
// (momentum / Adam moments) is indexed by parameter visit order, which is
// fixed by the layer sequence.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptConfig cfg) : cfg_(cfg) {}

  void step(Net<T>& net) {
    ++t_;
    std::size_t slot = 0;
    net.for_each_param([&](Tensor<T>& w, Tensor<T>& g) {
      check_finite(g, slot);
      if (slot >= m_.size()) {
        m_.emplace_back(w.shape);
        v_.emplace_back(w.shape);
      }
      if (cfg_.algo == OptAlgo::sgd) {
        if (cfg_.momentum == 0.0) {
          for (std::size_t i = 0; i < w.numel(); ++i)
            w[i] -= static_cast<T>(cfg_.lr) * g[i];
        } else {
          Tensor<T>& m = m_[slot];
          for (std::size_t i = 0; i < w.numel(); ++i) {
            m[i] = static_cast<T>(cfg_.momentum) * m[i] + g[i];
            w[i] -= static_cast<T>(cfg_.lr) * m[i];
          }
        }
      } else {
        Tensor<T>& m = m_[slot];
        Tensor<T>& v = v_[slot];
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < w.numel(); ++i) {
          const double gi = static_cast<double>(g[i]);
          const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
          const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
          m[i] = static_cast<T>(mi);
          v[i] = static_cast<T>(vi);
          w[i] -= static_cast<T>(cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps));
        }
      }
      ++slot;
    });
  }

  void reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
  }

 private:
  void check_finite(const Tensor<T>& g, std::size_t slot) {
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (!std::isfinite(static_cast<double>(g[i])))
        throw std::runtime_error("optimizer: non-finite gradient in parameter tensor " +
                                 std::to_string(slot) + " at index " + std::to_string(i));
  }

  OptConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace gsim
