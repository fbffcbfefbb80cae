#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gsim/auth/auth.hpp"
#include "gsim/nn/net.hpp"

namespace gsim {

enum class GuardianLabel : std::uint8_t { normal = 0, attacked = 1 };

// Registration-time attack detector. Pipeline: several independently
// poisoned embedder models contribute accounts to a rebalanced training set,
// account embedding pairs are interleaved into small grids, a CNN scores each
// grid, and per-account score vectors are aggregated by KNN against in-house
// reference points.

struct BiasReductionConfig {
  double lambda = 0.05;  // attacked-account ratio per contributing model
  double epsilon = 5.0;  // rebalance multiplier; target ratio is eps*lambda

  // Contributing model count, 1/(eps*lambda) rounded.
  int num_models() const;
  // eps = 1 is the pass-through mode (no rebalancing); otherwise
  // 2 <= eps <= 1/(2*lambda) must hold.
  void validate() const;
};

// One contributing embedder model's registered accounts plus the account ids
// that were attacked under it.
struct ModelAccounts {
  std::vector<AccountRecord> accounts;
  std::set<int> victim_ids;
};

// Keeps every attacked account and subsamples normal accounts so the
// attacked:normal ratio is eps*lambda : (1 - eps*lambda), within one account
// of exact. Victim sets must be disjoint across models.
std::vector<AccountRecord> build_balanced_dataset(const std::vector<ModelAccounts>& models,
                                                  const BiasReductionConfig& cfg,
                                                  std::uint64_t seed);

enum class NormalizationMode {
  joint,       // min-max over the concatenated pair; keeps cross-vector scale
  per_vector,  // each vector min-maxed on its own
};

// Linear map of the pair onto [0,255]. A constant input maps to zeros.
std::pair<std::vector<float>, std::vector<float>> normalize_pair(
    const std::vector<float>& f1, const std::vector<float>& f2,
    NormalizationMode mode = NormalizationMode::joint);
std::vector<float> normalize_vector(const std::vector<float>& f);

inline constexpr int kGridRows = 32;
inline constexpr int kGridCols = 32;

struct InterleavedSample {
  std::vector<double> grid;  // rows*cols row-major, values in [0,1]
  int rows = kGridRows;
  int cols = kGridCols;
  GuardianLabel label = GuardianLabel::normal;
  int account_id = -1;
  int pair_i = -1;  // source vector indices within the account
  int pair_j = -1;

  Tensor<float> input() const;
};

// Row 2k holds f1[32k..32k+31] and row 2k+1 holds f2[32k..32k+31], each cell
// divided by 255. Inputs are the 512-long normalized vectors.
InterleavedSample interleave(const std::vector<float>& f1, const std::vector<float>& f2);
// Exact inverse of interleave (returns the normalized vectors bit-for-bit).
std::pair<std::vector<float>, std::vector<float>> de_interleave(const InterleavedSample& s);
// 16x32 arrangement of a single normalized 512-vector (the no-interleaving mode).
InterleavedSample arrange_single(const std::vector<float>& f);

// m grids per account. Attacked accounts pair one victim-origin embedding
// with one attacker-origin embedding (victim first); normal accounts pair two
// of their own embeddings. Requires usable provenance on attacked accounts.
std::vector<InterleavedSample> make_training_pairs(
    const AccountRecord& account, std::uint64_t pairing_seed,
    NormalizationMode mode = NormalizationMode::joint);
// m single-vector grids per account (one per embedding).
std::vector<InterleavedSample> make_training_singles(const AccountRecord& account);

struct GuardianConfig {
  int k = 11;  // KNN aggregation neighbourhood, odd
  int epochs = 12;
  int batch_size = 32;
  double lr = 1e-3;
  double dropout_rate = 0.2;
  double expected_attack_fraction = 0.25;  // eps*lambda of the balanced build
  std::uint64_t pairing_seed = 0;
  NormalizationMode norm_mode = NormalizationMode::joint;
  bool use_interleave = true;  // false: single 512-d vectors, 16x32 grids
};

// conv(32,4x4,s1) relu pool(2x2) conv(64,3x3,s1) relu pool(2x2) flatten
// dense(128) relu dropout dense(2) softmax-ce
std::vector<LayerSpec> guardian_specs(double dropout_rate = 0.2);

// Dispatches per account on cfg.use_interleave and concatenates.
std::vector<InterleavedSample> make_training_samples(
    const std::vector<AccountRecord>& accounts, const GuardianConfig& cfg);

struct GuardianTrainResult {
  Net<float> net;
  std::vector<double> epoch_losses;  // mean sample loss per epoch
  double train_accuracy = 0.0;       // inference-mode accuracy on the training set
  bool imbalance_warning = false;    // attacked fraction off the expected ratio
};

// Every visit of a sample feeds a freshly randomized view of its grid: the
// 512 coordinates are relabeled (the same way for both vectors of a pair)
// and the levels pass through a random monotone remap. Both transforms keep
// the relation between the two vectors of a pair intact while removing the
// cues that identify a particular attacker or embedder, so the net has to
// learn the pair structure itself. train_accuracy is measured afterwards on
// the untouched grids.
GuardianTrainResult train_guardian(const std::vector<InterleavedSample>& samples,
                                   const GuardianConfig& cfg, std::uint64_t seed);

// Probability that the grid comes from an attacked account (inference mode).
double guardian_predict(const Net<float>& net, const InterleavedSample& sample);

// m ordered pairs (i, j), i != j: a cycle through a seeded permutation, so
// every index appears in exactly two pairs and all pairs are distinct.
std::vector<std::pair<int, int>> ensemble_pairs(int m, std::uint64_t seed);

struct ProbabilityPoint {
  std::vector<double> probs;  // sorted descending
  int account_id = -1;
  GuardianLabel label = GuardianLabel::normal;
  bool labeled = false;  // true for reference points
};

// Scores each embedding pair and sorts the probabilities descending, making
// the point invariant to pairing order.
ProbabilityPoint probability_point(
    const Net<float>& net,
    const std::vector<std::pair<std::vector<float>, std::vector<float>>>& pairs,
    NormalizationMode mode = NormalizationMode::joint);
// Single-vector variant: one probability per embedding.
ProbabilityPoint probability_point_single(const Net<float>& net,
                                          const std::vector<std::vector<float>>& embeddings);

// Full per-account scoring path (ensemble_pairs -> normalize -> interleave ->
// predict -> sort); also used to build reference points.
ProbabilityPoint account_point(const Net<float>& net,
                               const std::vector<std::vector<float>>& embeddings,
                               const GuardianConfig& cfg, int account_id);

// Majority label among the K nearest reference points (Euclidean distance,
// ties broken by smaller reference index). More than K/2 normal => normal.
GuardianLabel knn_aggregate(const ProbabilityPoint& query,
                            const std::vector<ProbabilityPoint>& references, int k);

// Odd K in [1, min(k_max, n-1)] minimizing leave-one-out error; ties go to
// the smallest K.
int select_k(const std::vector<ProbabilityPoint>& references, int k_max = 30);

struct GuardianVerdict {
  GuardianLabel verdict = GuardianLabel::normal;
  ProbabilityPoint point;  // probability trace behind the verdict
};

GuardianVerdict guardian_verdict(const Net<float>& net,
                                 const std::vector<std::vector<float>>& registration_embeddings,
                                 const std::vector<ProbabilityPoint>& references,
                                 const GuardianConfig& cfg, int account_id);

// Aggregation-free variant: one random pair, thresholded at 1/2.
GuardianVerdict guardian_verdict_no_ensemble(
    const Net<float>& net, const std::vector<std::vector<float>>& registration_embeddings,
    const GuardianConfig& cfg, int account_id);

// Reference-point store: "GREF" magic, u32 count, u32 m, then per point
// m little-endian f32 probabilities and a u8 label.
void write_reference_points(const std::string& path,
                            const std::vector<ProbabilityPoint>& points);
std::vector<ProbabilityPoint> read_reference_points(const std::string& path);

}  // namespace gsim
