#include "gsim/defense/guardian.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "gsim/nn/optim.hpp"
#include "gsim/speech/embedder.hpp"
#include "gsim/util/binio.hpp"
#include "gsim/util/rng.hpp"

namespace gsim {

namespace {
constexpr std::uint64_t kPairTag = 0x70616972ULL;
constexpr std::uint64_t kTrainPairTag = 0x74726E7061697273ULL;
constexpr std::uint64_t kScrambleTag = 0x736372616D626CULL;
constexpr std::uint64_t kJitterTag = 0x6A6974746572ULL;
constexpr std::uint64_t kAugTag = 0x676175676DULL;
constexpr std::uint64_t kShuffleTag = 0x677368756666ULL;
constexpr std::uint64_t kDropTag = 0x6764726F70ULL;
constexpr std::uint64_t kInitTag = 0x67696E6974ULL;
constexpr std::uint64_t kBalanceTag = 0x6762616CULL;
}  // namespace

int BiasReductionConfig::num_models() const {
  return static_cast<int>(std::llround(1.0 / (epsilon * lambda)));
}

void BiasReductionConfig::validate() const {
  if (!(lambda > 0.0) || lambda >= 0.5)
    throw std::runtime_error("bias reduction: lambda must be in (0, 0.5)");
  if (epsilon == 1.0) return;  // pass-through mode
  if (epsilon < 2.0 || epsilon > 1.0 / (2.0 * lambda))
    throw std::runtime_error("bias reduction: need 2 <= eps <= 1/(2*lambda)");
}

std::vector<AccountRecord> build_balanced_dataset(const std::vector<ModelAccounts>& models,
                                                  const BiasReductionConfig& cfg,
                                                  std::uint64_t seed) {
  cfg.validate();
  if (models.empty()) throw std::runtime_error("balanced dataset: no models");
  for (std::size_t a = 0; a < models.size(); ++a)
    for (std::size_t b = a + 1; b < models.size(); ++b)
      for (int v : models[a].victim_ids)
        if (models[b].victim_ids.count(v))
          throw std::runtime_error("balanced dataset: victim sets overlap across models");

  std::vector<AccountRecord> attacked, normal_pool;
  for (const auto& m : models)
    for (const auto& acct : m.accounts)
      (acct.status == AccountStatus::attacked ? attacked : normal_pool).push_back(acct);
  if (attacked.empty()) throw std::runtime_error("balanced dataset: no attacked accounts");

  // attacked : normal = eps*lambda : (1 - eps*lambda)
  const double ratio = cfg.epsilon * cfg.lambda;
  const auto want_normal =
      static_cast<std::size_t>(std::llround(attacked.size() * (1.0 - ratio) / ratio));
  if (want_normal > normal_pool.size())
    throw std::runtime_error("balanced dataset: not enough normal accounts");

  Rng rng(mix_seed(seed, kBalanceTag));
  auto picks = rng.sample_indices(normal_pool.size(), want_normal);
  std::sort(picks.begin(), picks.end());

  std::vector<AccountRecord> out = std::move(attacked);
  for (std::size_t p : picks) out.push_back(normal_pool[p]);
  return out;
}

namespace {

// Training-time input randomization, fresh parameters for every visit of
// every sample. Two nuisance channels would otherwise let the discriminator
// shortcut past the pair structure: which embedding coordinate sits in which
// grid cell separates the handful of attackers it was trained on, and the
// value distribution of a normalized grid fingerprints the embedder that
// produced it. Relabeling the coordinates and monotonically remapping the
// levels strip both cues while preserving where the two vectors of a pair
// track each other and where they diverge, which is the signal that carries
// over to accounts from an embedder never seen in training. Inference inputs
// stay untouched (their natural order and levels are one more draw from the
// randomized family).
std::vector<double> augment_grid(const std::vector<double>& grid, int rows, std::uint64_t seed) {
  std::vector<int> perm(static_cast<std::size_t>(kEmbeddingDim));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(seed, kScrambleTag));
  rng.shuffle(perm);

  std::vector<double> out(grid.size());
  if (rows == kGridRows) {
    // Interleaved pair grid: vertically adjacent cells hold the same
    // coordinate of the two vectors, so they move together.
    for (int k = 0; k < kEmbeddingDim; ++k) {
      const int p = perm[static_cast<std::size_t>(k)];
      const std::size_t dst =
          static_cast<std::size_t>(2 * (k / kGridCols)) * kGridCols + k % kGridCols;
      const std::size_t src =
          static_cast<std::size_t>(2 * (p / kGridCols)) * kGridCols + p % kGridCols;
      out[dst] = grid[src];
      out[dst + kGridCols] = grid[src + kGridCols];
    }
  } else {
    for (int k = 0; k < kEmbeddingDim; ++k)
      out[static_cast<std::size_t>(k)] = grid[static_cast<std::size_t>(perm[k])];
  }

  // The remap must stay mild: the class signal is the size of the vertical
  // differences, and an affine squeeze scales those by a. Keeping a well
  // above the between-class contrast ratio leaves the margin intact.
  if (std::getenv("GSIM_NO_JITTER")) return out;
  Rng jit(mix_seed(seed, kJitterTag));
  const double a = jit.uniform(0.85, 1.0);
  const double b = jit.uniform(0.0, 1.0 - a);
  const double gamma = std::exp(jit.uniform(-0.15, 0.15));
  const bool flip = jit.uniform() < 0.5;
  for (double& v : out) {
    double x = std::pow(a * v + b, gamma);
    if (flip) x = 1.0 - x;
    v = x;
  }
  return out;
}

std::vector<float> map_to_255(const std::vector<float>& v, double mn, double mx) {
  std::vector<float> out(v.size(), 0.0f);
  if (!(mx > mn)) return out;  // constant input maps to zeros
  const double scale = 255.0 / (mx - mn);
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<float>((static_cast<double>(v[i]) - mn) * scale);
  return out;
}

void min_max(const std::vector<float>& v, double& mn, double& mx) {
  for (float x : v) {
    mn = std::min(mn, static_cast<double>(x));
    mx = std::max(mx, static_cast<double>(x));
  }
}

}  // namespace

std::pair<std::vector<float>, std::vector<float>> normalize_pair(const std::vector<float>& f1,
                                                                 const std::vector<float>& f2,
                                                                 NormalizationMode mode) {
  if (mode == NormalizationMode::joint) {
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    min_max(f1, mn, mx);
    min_max(f2, mn, mx);
    return {map_to_255(f1, mn, mx), map_to_255(f2, mn, mx)};
  }
  return {normalize_vector(f1), normalize_vector(f2)};
}

std::vector<float> normalize_vector(const std::vector<float>& f) {
  double mn = std::numeric_limits<double>::infinity(), mx = -mn;
  min_max(f, mn, mx);
  return map_to_255(f, mn, mx);
}

Tensor<float> InterleavedSample::input() const {
  Tensor<float> t({rows, cols, 1});
  for (std::size_t i = 0; i < grid.size(); ++i) t[i] = static_cast<float>(grid[i]);
  return t;
}

InterleavedSample interleave(const std::vector<float>& f1, const std::vector<float>& f2) {
  if (static_cast<int>(f1.size()) != kEmbeddingDim ||
      static_cast<int>(f2.size()) != kEmbeddingDim)
    throw std::runtime_error("interleave: both vectors must be 512 long");
  InterleavedSample s;
  s.grid.assign(static_cast<std::size_t>(kGridRows) * kGridCols, 0.0);
  for (int k = 0; k < kGridRows / 2; ++k)
    for (int j = 0; j < kGridCols; ++j) {
      const std::size_t src = static_cast<std::size_t>(kGridCols) * k + j;
      s.grid[static_cast<std::size_t>(2 * k) * kGridCols + j] =
          static_cast<double>(f1[src]) / 255.0;
      s.grid[static_cast<std::size_t>(2 * k + 1) * kGridCols + j] =
          static_cast<double>(f2[src]) / 255.0;
    }
  return s;
}

std::pair<std::vector<float>, std::vector<float>> de_interleave(const InterleavedSample& s) {
  if (s.rows != kGridRows || s.cols != kGridCols ||
      s.grid.size() != static_cast<std::size_t>(kGridRows) * kGridCols)
    throw std::runtime_error("de_interleave: not a 32x32 interleaved grid");
  std::vector<float> f1(kEmbeddingDim), f2(kEmbeddingDim);
  for (int k = 0; k < kGridRows / 2; ++k)
    for (int j = 0; j < kGridCols; ++j) {
      const std::size_t dst = static_cast<std::size_t>(kGridCols) * k + j;
      f1[dst] = static_cast<float>(
          s.grid[static_cast<std::size_t>(2 * k) * kGridCols + j] * 255.0);
      f2[dst] = static_cast<float>(
          s.grid[static_cast<std::size_t>(2 * k + 1) * kGridCols + j] * 255.0);
    }
  return {std::move(f1), std::move(f2)};
}

InterleavedSample arrange_single(const std::vector<float>& f) {
  if (static_cast<int>(f.size()) != kEmbeddingDim)
    throw std::runtime_error("arrange_single: vector must be 512 long");
  InterleavedSample s;
  s.rows = kGridRows / 2;
  s.cols = kGridCols;
  s.grid.resize(f.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    s.grid[i] = static_cast<double>(f[i]) / 255.0;
  return s;
}

std::vector<InterleavedSample> make_training_pairs(const AccountRecord& account,
                                                   std::uint64_t pairing_seed,
                                                   NormalizationMode mode) {
  const int m = static_cast<int>(account.embeddings.size());
  if (m < 2) throw std::runtime_error("training pairs: need at least two embeddings");
  const GuardianLabel label =
      account.status == AccountStatus::attacked ? GuardianLabel::attacked : GuardianLabel::normal;
  Rng rng(mix_seed(pairing_seed, kTrainPairTag, static_cast<std::uint64_t>(account.id)));

  std::vector<std::pair<int, int>> idx;
  if (account.status == AccountStatus::attacked) {
    // one victim-origin and one attacker-origin embedding per pair
    if (static_cast<int>(account.attacker_origin.size()) != m)
      throw std::runtime_error("training pairs: attacked account lacks provenance");
    std::vector<int> victim, attacker;
    for (int i = 0; i < m; ++i)
      (account.attacker_origin[static_cast<std::size_t>(i)] ? attacker : victim).push_back(i);
    if (victim.empty() || attacker.empty())
      throw std::runtime_error("training pairs: attacked account has no embedding mix");
    const std::size_t cross = victim.size() * attacker.size();
    if (cross >= static_cast<std::size_t>(m)) {
      for (std::size_t p : rng.sample_indices(cross, static_cast<std::size_t>(m)))
        idx.emplace_back(victim[p / attacker.size()], attacker[p % attacker.size()]);
    } else {
      for (int t = 0; t < m; ++t)
        idx.emplace_back(victim[rng.index(victim.size())], attacker[rng.index(attacker.size())]);
    }
  } else {
    idx = ensemble_pairs(m, rng.next_u64());
  }

  std::vector<InterleavedSample> out;
  out.reserve(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const auto [i, j] = idx[n];
    auto [n1, n2] = normalize_pair(account.embeddings[static_cast<std::size_t>(i)],
                                   account.embeddings[static_cast<std::size_t>(j)], mode);
    InterleavedSample s = interleave(n1, n2);
    s.label = label;
    s.account_id = account.id;
    s.pair_i = i;
    s.pair_j = j;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<InterleavedSample> make_training_singles(const AccountRecord& account) {
  if (account.embeddings.empty())
    throw std::runtime_error("training singles: account has no embeddings");
  const GuardianLabel label =
      account.status == AccountStatus::attacked ? GuardianLabel::attacked : GuardianLabel::normal;
  std::vector<InterleavedSample> out;
  out.reserve(account.embeddings.size());
  for (std::size_t i = 0; i < account.embeddings.size(); ++i) {
    InterleavedSample s = arrange_single(normalize_vector(account.embeddings[i]));
    s.label = label;
    s.account_id = account.id;
    s.pair_i = static_cast<int>(i);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<LayerSpec> guardian_specs(double dropout_rate) {
  return {
      LayerSpec::conv(32, 4, 4, 1, 1), LayerSpec::relu(),   LayerSpec::pool(2, 2, 2, 2),
      LayerSpec::conv(64, 3, 3, 1, 1), LayerSpec::relu(),   LayerSpec::pool(2, 2, 2, 2),
      LayerSpec::flatten(),            LayerSpec::dense(128), LayerSpec::relu(),
      LayerSpec::dropout(dropout_rate), LayerSpec::dense(2), LayerSpec::softmax_ce(),
  };
}

std::vector<InterleavedSample> make_training_samples(const std::vector<AccountRecord>& accounts,
                                                     const GuardianConfig& cfg) {
  std::vector<InterleavedSample> out;
  for (const auto& acct : accounts) {
    auto samples = cfg.use_interleave
                       ? make_training_pairs(acct, cfg.pairing_seed, cfg.norm_mode)
                       : make_training_singles(acct);
    for (auto& s : samples) out.push_back(std::move(s));
  }
  return out;
}

GuardianTrainResult train_guardian(const std::vector<InterleavedSample>& samples,
                                   const GuardianConfig& cfg, std::uint64_t seed) {
  if (samples.empty()) throw std::runtime_error("train_guardian: no samples");
  const int rows = samples.front().rows, cols = samples.front().cols;
  std::size_t attacked = 0;
  for (const auto& s : samples) {
    if (s.rows != rows || s.cols != cols)
      throw std::runtime_error("train_guardian: mixed grid shapes");
    attacked += s.label == GuardianLabel::attacked;
  }

  GuardianTrainResult res;
  const double expect = cfg.expected_attack_fraction * static_cast<double>(samples.size());
  if (std::abs(static_cast<double>(attacked) - expect) >
      1.0 + static_cast<double>(samples.size()) * 0.005) {
    res.imbalance_warning = true;
    std::fprintf(stderr,
                 "train_guardian: warning: %zu of %zu samples attacked, expected ratio %.3f\n",
                 attacked, samples.size(), cfg.expected_attack_fraction);
  }

  res.net = Net<float>(guardian_specs(cfg.dropout_rate), Shape{rows, cols, 1, false},
                       mix_seed(seed, kInitTag));
  if (rows == kGridRows) {
    // Two first-layer filters start as within-pair difference detectors
    // (one per sign, since relu follows). The pair signal is weak next to
    // the randomized views, and from a generic random start the optimizer
    // settles into majority-class output before finding it; seeding the
    // detectors makes it visible from the first step.
    auto& w = res.net.params[0].w;
    for (int ki = 0; ki < 4; ++ki)
      for (int kj = 0; kj < 4; ++kj) {
        const float v = (ki % 2 == 0) ? 0.3f : -0.3f;
        w[static_cast<std::size_t>((ki * 4 + kj)) * 32 + 0] = v;
        w[static_cast<std::size_t>((ki * 4 + kj)) * 32 + 1] = -v;
      }
  }
  Optimizer<float> opt({OptAlgo::adam, cfg.lr});
  Rng shuffle_rng(mix_seed(seed, kShuffleTag));
  Rng drop_rng(mix_seed(seed, kDropTag));

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Cache<float> cache;
  std::vector<Tensor<float>> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(s.input());

  // Randomized views are introduced on a schedule. From a fresh net the
  // training signal under full randomization is too diffuse to escape the
  // majority-class plateau, so the first sixth of the epochs trains on the
  // grids as built, the next sixth ramps the randomization probability to
  // one, and the remaining epochs see only randomized views. Features tied
  // to coordinate identity or embedder levels stop paying off once the ramp
  // completes; what survives is what the randomization preserves.
  const std::uint64_t aug_base = mix_seed(seed, kAugTag);
  Rng aug_gate(mix_seed(aug_base, 1));
  const double warm = static_cast<double>(cfg.epochs) / 6.0;
  const double kAugCap = std::getenv("GSIM_AUG_CAP")
                             ? std::atof(std::getenv("GSIM_AUG_CAP")) : 0.85;
  Tensor<float> aug_in({rows, cols, 1});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    const double aug_p =
        std::clamp((static_cast<double>(epoch) - warm) / warm, 0.0, kAugCap);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      res.net.zero_grads();
      for (std::size_t b = start; b < stop; ++b) {
        const auto& s = samples[order[b]];
        const float* in = inputs[order[b]].ptr();
        if (aug_gate.uniform() < aug_p) {
          const auto grid = augment_grid(
              s.grid, rows,
              mix_seed(aug_base, static_cast<std::uint64_t>(epoch), order[b]));
          for (std::size_t i = 0; i < grid.size(); ++i)
            aug_in[i] = static_cast<float>(grid[i]);
          in = aug_in.ptr();
        }
        res.net.forward(in, cache, true, &drop_rng);
        loss_sum += res.net.loss(cache, static_cast<int>(s.label));
        res.net.backward(cache, static_cast<int>(s.label));
      }
      const float inv = 1.0f / static_cast<float>(stop - start);
      res.net.for_each_param([&](Tensor<float>&, Tensor<float>& g) {
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= inv;
      });
      opt.step(res.net);
    }
    res.epoch_losses.push_back(loss_sum / static_cast<double>(samples.size()));
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    res.net.forward(inputs[i].ptr(), cache, false, nullptr);
    const auto& p = res.net.output(cache);
    const int pred = p[1] > p[0] ? 1 : 0;
    correct += pred == static_cast<int>(samples[i].label);
  }
  res.train_accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return res;
}

double guardian_predict(const Net<float>& net, const InterleavedSample& sample) {
  Cache<float> cache;
  const Tensor<float> in = sample.input();
  net.forward(in.ptr(), cache, false, nullptr);
  return static_cast<double>(net.output(cache)[1]);
}

std::vector<std::pair<int, int>> ensemble_pairs(int m, std::uint64_t seed) {
  if (m < 2) throw std::runtime_error("ensemble_pairs: need at least two embeddings");
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    pairs.emplace_back(perm[static_cast<std::size_t>(i)],
                       perm[static_cast<std::size_t>((i + 1) % m)]);
  return pairs;
}

ProbabilityPoint probability_point(
    const Net<float>& net,
    const std::vector<std::pair<std::vector<float>, std::vector<float>>>& pairs,
    NormalizationMode mode) {
  ProbabilityPoint pt;
  pt.probs.reserve(pairs.size());
  for (const auto& [f1, f2] : pairs) {
    auto [n1, n2] = normalize_pair(f1, f2, mode);
    pt.probs.push_back(guardian_predict(net, interleave(n1, n2)));
  }
  std::sort(pt.probs.begin(), pt.probs.end(), std::greater<double>());
  return pt;
}

ProbabilityPoint probability_point_single(const Net<float>& net,
                                          const std::vector<std::vector<float>>& embeddings) {
  ProbabilityPoint pt;
  pt.probs.reserve(embeddings.size());
  for (const auto& e : embeddings)
    pt.probs.push_back(guardian_predict(net, arrange_single(normalize_vector(e))));
  std::sort(pt.probs.begin(), pt.probs.end(), std::greater<double>());
  return pt;
}

ProbabilityPoint account_point(const Net<float>& net,
                               const std::vector<std::vector<float>>& embeddings,
                               const GuardianConfig& cfg, int account_id) {
  ProbabilityPoint pt;
  if (cfg.use_interleave) {
    const auto idx = ensemble_pairs(
        static_cast<int>(embeddings.size()),
        mix_seed(cfg.pairing_seed, kPairTag, static_cast<std::uint64_t>(account_id)));
    std::vector<std::pair<std::vector<float>, std::vector<float>>> pairs;
    pairs.reserve(idx.size());
    for (auto [i, j] : idx)
      pairs.emplace_back(embeddings[static_cast<std::size_t>(i)],
                         embeddings[static_cast<std::size_t>(j)]);
    pt = probability_point(net, pairs, cfg.norm_mode);
  } else {
    pt = probability_point_single(net, embeddings);
  }
  pt.account_id = account_id;
  return pt;
}

GuardianLabel knn_aggregate(const ProbabilityPoint& query,
                            const std::vector<ProbabilityPoint>& references, int k) {
  if (references.empty()) throw std::runtime_error("knn_aggregate: empty reference set");
  if (k < 1 || k % 2 == 0) throw std::runtime_error("knn_aggregate: K must be odd and positive");
  if (static_cast<std::size_t>(k) > references.size())
    throw std::runtime_error("knn_aggregate: K exceeds the reference set");

  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(references.size());
  for (std::size_t r = 0; r < references.size(); ++r) {
    const auto& ref = references[r];
    if (ref.probs.size() != query.probs.size())
      throw std::runtime_error("knn_aggregate: dimension mismatch");
    double d2 = 0.0;
    for (std::size_t i = 0; i < query.probs.size(); ++i) {
      const double d = query.probs[i] - ref.probs[i];
      d2 += d * d;
    }
    dist.emplace_back(d2, r);
  }
  std::sort(dist.begin(), dist.end());  // equal distances fall back to smaller index

  int attacked = 0;
  for (int i = 0; i < k; ++i)
    attacked += references[dist[static_cast<std::size_t>(i)].second].label ==
                GuardianLabel::attacked;
  return 2 * attacked > k ? GuardianLabel::attacked : GuardianLabel::normal;
}

int select_k(const std::vector<ProbabilityPoint>& references, int k_max) {
  if (references.size() < 2)
    throw std::runtime_error("select_k: need at least two reference points");
  const int top = std::min(k_max, static_cast<int>(references.size()) - 1);
  std::vector<int> errors(static_cast<std::size_t>(top) + 1, 0);

  std::vector<ProbabilityPoint> reduced;
  reduced.reserve(references.size() - 1);
  for (std::size_t i = 0; i < references.size(); ++i) {
    reduced.clear();
    for (std::size_t j = 0; j < references.size(); ++j)
      if (j != i) reduced.push_back(references[j]);
    for (int k = 1; k <= top; k += 2)
      errors[static_cast<std::size_t>(k)] +=
          knn_aggregate(references[i], reduced, k) != references[i].label;
  }

  int best_k = 1, best_err = std::numeric_limits<int>::max();
  for (int k = 1; k <= top; k += 2)
    if (errors[static_cast<std::size_t>(k)] < best_err) {
      best_err = errors[static_cast<std::size_t>(k)];
      best_k = k;
    }
  return best_k;
}

GuardianVerdict guardian_verdict(const Net<float>& net,
                                 const std::vector<std::vector<float>>& registration_embeddings,
                                 const std::vector<ProbabilityPoint>& references,
                                 const GuardianConfig& cfg, int account_id) {
  GuardianVerdict v;
  v.point = account_point(net, registration_embeddings, cfg, account_id);
  v.verdict = knn_aggregate(v.point, references, cfg.k);
  return v;
}

GuardianVerdict guardian_verdict_no_ensemble(
    const Net<float>& net, const std::vector<std::vector<float>>& registration_embeddings,
    const GuardianConfig& cfg, int account_id) {
  const auto idx = ensemble_pairs(
      static_cast<int>(registration_embeddings.size()),
      mix_seed(cfg.pairing_seed, kPairTag, static_cast<std::uint64_t>(account_id)));
  auto [n1, n2] =
      normalize_pair(registration_embeddings[static_cast<std::size_t>(idx[0].first)],
                     registration_embeddings[static_cast<std::size_t>(idx[0].second)],
                     cfg.norm_mode);
  GuardianVerdict v;
  v.point.account_id = account_id;
  v.point.probs.push_back(guardian_predict(net, interleave(n1, n2)));
  v.verdict = v.point.probs[0] > 0.5 ? GuardianLabel::attacked : GuardianLabel::normal;
  return v;
}

void write_reference_points(const std::string& path,
                            const std::vector<ProbabilityPoint>& points) {
  if (points.empty()) throw std::runtime_error("reference points: nothing to write");
  const std::size_t m = points.front().probs.size();
  auto os = open_out(path);
  write_magic(os, "GREF");
  write_u32(os, static_cast<std::uint32_t>(points.size()));
  write_u32(os, static_cast<std::uint32_t>(m));
  for (const auto& p : points) {
    if (!p.labeled) throw std::runtime_error("reference points: unlabeled point");
    if (p.probs.size() != m) throw std::runtime_error("reference points: mixed dimensions");
    for (double v : p.probs) write_f32(os, static_cast<float>(v));
    os.put(p.label == GuardianLabel::attacked ? '\1' : '\0');
  }
  if (!os) throw std::runtime_error("reference points: write failed: " + path);
}

std::vector<ProbabilityPoint> read_reference_points(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "GREF", path);
  const std::uint32_t count = read_u32(is);
  const std::uint32_t m = read_u32(is);
  std::vector<ProbabilityPoint> out(count);
  for (auto& p : out) {
    p.probs.resize(m);
    for (auto& v : p.probs) v = static_cast<double>(read_f32(is));
    const int label = is.get();
    if (label < 0) throw std::runtime_error("reference points: truncated file: " + path);
    p.label = label ? GuardianLabel::attacked : GuardianLabel::normal;
    p.labeled = true;
  }
  return out;
}

}  // namespace gsim
