#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsim/defense/guardian.hpp"
#include "gsim/nn/net.hpp"

namespace gsim {

// Comparison detectors that consume raw 512-d embeddings directly, with no
// interleaving or rebalancing machinery. Account verdicts for the vote-based
// detectors are a strict majority over per-embedding decisions; an exact tie
// stays normal.

enum class DetectorKind { knn512, svm, fc14, cosine_threshold, lda_concentration };

// ---- raw-embedding KNN ---------------------------------------------------

struct Knn512Model {
  std::vector<std::vector<float>> train;
  std::vector<GuardianLabel> labels;
};

// Single-embedding vote: majority label of the K nearest training vectors
// (Euclidean, distance ties to the smaller training index).
GuardianLabel knn512_embedding_vote(const Knn512Model& model, const std::vector<float>& query,
                                    int k);
GuardianLabel knn512_detector(const Knn512Model& model,
                              const std::vector<std::vector<float>>& account_embeddings, int k);

// ---- linear SVM ----------------------------------------------------------

struct SvmConfig {
  int epochs = 200;
  double lr = 0.5;
  double decay = 0.02;  // step at epoch t is lr / (1 + decay * t)
  double reg = 1e-3;    // L2 on w
};

struct SvmModel {
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> objective;  // regularized hinge objective per epoch
  bool converged = true;          // final iterate matched the best seen
};

// Full-batch hinge subgradient descent; attacked maps to +1. Returns the
// best iterate by objective, flagging if the final epoch was not it.
SvmModel svm_fit(const std::vector<std::vector<float>>& embeddings,
                 const std::vector<GuardianLabel>& labels, const SvmConfig& cfg);
double svm_margin(const SvmModel& model, const std::vector<float>& embedding);
GuardianLabel svm_detector(const SvmModel& model,
                           const std::vector<std::vector<float>>& account_embeddings);

// ---- deep fully connected network ----------------------------------------

struct FcConfig {
  int depth = 14;  // dense layers, widths tapering 512 -> 2 geometrically
  int epochs = 12;
  int batch_size = 32;
  double lr = 1e-3;
};

// depth dense layers; layer t has round(512 * 2^(-8t/13)) units, relu after
// every layer but the 2-unit logits, softmax-CE head.
std::vector<LayerSpec> fc_specs(int depth = 14);

struct FcModel {
  Net<float> net;
  std::vector<double> epoch_losses;
  double train_accuracy = 0.0;
  bool stalled = false;  // training failed to move off chance level
};

FcModel fc_fit(const std::vector<std::vector<float>>& embeddings,
               const std::vector<GuardianLabel>& labels, const FcConfig& cfg,
               std::uint64_t seed);
GuardianLabel fc_embedding_vote(const FcModel& model, const std::vector<float>& embedding);
GuardianLabel fc_detector(const FcModel& model,
                          const std::vector<std::vector<float>>& account_embeddings);

// ---- cosine-similarity screening -----------------------------------------

// Mean cosine similarity over all C(m,2) unordered embedding pairs.
double cosine_score(const std::vector<std::vector<float>>& account_embeddings);

// 5th percentile (lower interpolation) of normal-account scores, so at least
// 95% of normals sit at or above it. Accounts below flag as suspicious.
double cosine_threshold_calibrate(const std::vector<double>& normal_scores);

// ---- LDA concentration screening -----------------------------------------

struct LdaModel {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> proj;  // out_dim x in_dim, row per discriminant
  double concentration_threshold = 0.0;
  bool reduced = false;  // target dimension dropped to fit the class count
};

// Symmetric eigensolve by cyclic Jacobi rotations. a is row-major n x n and
// is destroyed. values come out descending; row j of vectors is the
// eigenvector for values[j].
void jacobi_eigensym(std::vector<double>& a, int n, std::vector<double>& values,
                     std::vector<double>& vectors);

// Fisher discriminants via within-class whitening: rows of proj maximize
// between-class over within-class scatter. target_dim caps at classes - 1
// (flagged in `reduced` when it drops).
LdaModel lda_fit(const std::vector<std::vector<float>>& embeddings,
                 const std::vector<int>& speaker_labels, int target_dim = 150);

std::vector<double> lda_project(const LdaModel& model, const std::vector<float>& embedding);

// Trace of the account's unnormalized scatter about its own mean, in the
// projected space: sum over vectors of squared distance to the mean.
double concentration_score(const std::vector<std::vector<float>>& account_embeddings,
                           const LdaModel& model);

// 95th percentile (lower interpolation) of normal-account scores, so at
// least 95% of normals sit at or below it. Accounts above flag as suspicious.
double concentration_threshold_calibrate(const std::vector<double>& normal_scores);

// ---- similar-attacker screening ------------------------------------------

enum class SimilarityMetric { cosine, concentration };

// A would-be mixed registration of one attacker against one victim.
struct AttackerCandidate {
  int attacker_id = -1;
  int victim_id = -1;
  std::vector<std::vector<float>> mixed_embeddings;
};

// Indices of candidates whose mixed account passes the normal-account
// screen: cosine mode keeps score >= cosine threshold, concentration mode
// keeps score <= concentration threshold (lda required there).
std::vector<std::size_t> select_similar_attackers(
    const std::vector<AttackerCandidate>& candidates, SimilarityMetric metric,
    double cosine_threshold, double concentration_threshold, const LdaModel* lda);

// Projection store: "GLDA" magic, u32 in-dim, u32 out-dim, row-major
// little-endian f32 entries.
void write_lda(const std::string& path, const LdaModel& model);
LdaModel read_lda(const std::string& path);

}  // namespace gsim
