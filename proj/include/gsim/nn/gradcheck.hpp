#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gsim/nn/net.hpp"
#include "gsim/util/rng.hpp"

namespace gsim {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // kink crossings excluded from the comparison
};

// Central-difference verification of accumulated analytic gradients, 64-bit
// only. eval(sig) must recompute the scalar loss from the net's current
// parameters (forward only) and, when sig != nullptr, fill the kink
// signature of that pass. Indices whose +eps / -eps signatures differ sit
// on a relu/pool non-differentiability and are excluded.
//
// per_tensor_cap = 0 checks every index; otherwise a seeded subsample of
// min(cap, numel) indices per parameter tensor.
template <typename Eval>
GradCheckResult gradient_check(Net<double>& net, Eval&& eval, double eps = 1e-5,
                               std::size_t per_tensor_cap = 0, std::uint64_t seed = 0) {
  GradCheckResult res;
  Rng pick(mix_seed(seed, 0x6B63656863646172ULL));
  std::vector<std::uint32_t> sig_plus, sig_minus;
  net.for_each_param([&](Tensor<double>& w, Tensor<double>& g) {
    std::vector<std::size_t> idx;
    if (per_tensor_cap == 0 || w.numel() <= per_tensor_cap) {
      idx.resize(w.numel());
      for (std::size_t i = 0; i < w.numel(); ++i) idx[i] = i;
    } else {
      idx = pick.sample_indices(w.numel(), per_tensor_cap);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double lp = eval(&sig_plus);
      w[i] = saved - eps;
      const double lm = eval(&sig_minus);
      w[i] = saved;
      if (sig_plus != sig_minus) {
        ++res.skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic = g[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  });
  return res;
}

// Convenience wrapper for a softmax_ce-headed net on one labeled sample.
inline GradCheckResult gradient_check_classifier(Net<double>& net, const double* input,
                                                 int label, double eps = 1e-5,
                                                 std::size_t per_tensor_cap = 0,
                                                 std::uint64_t seed = 0) {
  Cache<double> c;
  net.zero_grads();
  net.forward(input, c, false, nullptr);
  net.backward(c, label);
  auto eval = [&](std::vector<std::uint32_t>* sig) {
    Cache<double> ec;
    net.forward(input, ec, false, nullptr);
    if (sig) *sig = kink_signature(net, ec);
    return net.loss(ec, label);
  };
  return gradient_check(net, eval, eps, per_tensor_cap, seed);
}

}  // namespace gsim
