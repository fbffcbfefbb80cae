#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "gsim/nn/net.hpp"
#include "gsim/speech/corpus.hpp"
#include "gsim/util/rng.hpp"

namespace gsim {

inline constexpr int kEmbeddingDim = 512;

struct TripletConfig {
  double alpha = 0.1;           // margin
  int batch_accounts = 8;       // accounts per batch
  int utterances_per_account = 2;
  int negatives_per_anchor = 1;
  int epochs = 12;
  double lr = 1e-3;
};

// Training-set poisoning: the attacker's utterances are added to each
// victim account's positive pool, labeled as that account.
struct PoisonMap {
  int attacker_id = -1;
  std::set<int> victims;
  double lambda = 0.0;
};

// victims = round(lambda * N) drawn uniformly from the account pool;
// the attacker is never a victim. lambda >= 0.5 exceeds the threat model.
PoisonMap make_poison_plan(const std::vector<int>& training_accounts, double lambda,
                           int attacker_id, std::uint64_t seed);

struct EmbedderModel {
  Net<float> net;
  bool normalize = true;
  bool diverged = false;  // training hit a non-finite loss; params are the
                          // last finished epoch's
};

// max(||a-p||^2 - ||a-n||^2 + alpha, 0)
double triplet_loss(const std::vector<double>& anchor, const std::vector<double>& positive,
                    const std::vector<double>& negative, double alpha);

struct Triplet {
  int a = 0, p = 0, n = 0;  // indices into the batch
};

// Every (anchor, positive) ordered same-label pair gets
// negatives_per_anchor random different-label negatives. A single-label
// batch has no valid negatives and yields an empty list.
std::vector<Triplet> mine_triplets(const std::vector<int>& labels, int negatives_per_anchor,
                                   Rng& rng);

// Layer sequence of the embedding network (160x64 features -> 512).
std::vector<LayerSpec> embedder_specs();

// Trains the triplet-loss embedder on the given speaker accounts. Victim
// accounts listed in `poison` train on their own utterances plus the
// attacker's, relabeled as theirs.
EmbedderModel train_embedder(const Corpus& corpus, const std::vector<int>& training_accounts,
                             const TripletConfig& cfg, const PoisonMap* poison,
                             std::uint64_t seed);

// 512-d L2-normalized embedding of one utterance.
std::vector<float> embed(const EmbedderModel& model, const std::vector<float>& features);

}  // namespace gsim
