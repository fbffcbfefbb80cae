#include "gsim/speech/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>

#include "gsim/nn/optim.hpp"

namespace gsim {

namespace {
constexpr std::uint64_t kPoisonTag = 0x706F69736F6E3030ULL;
constexpr std::uint64_t kTrainTag = 0x74726E656D626564ULL;
}  // namespace

PoisonMap make_poison_plan(const std::vector<int>& training_accounts, double lambda,
                           int attacker_id, std::uint64_t seed) {
  if (lambda < 0.0 || lambda >= 0.5)
    throw std::runtime_error("poison plan: lambda must be in [0, 0.5)");
  for (int a : training_accounts)
    if (a == attacker_id)
      throw std::runtime_error("poison plan: attacker is inside the victim pool");
  PoisonMap plan;
  plan.attacker_id = attacker_id;
  plan.lambda = lambda;
  const auto n = static_cast<double>(training_accounts.size());
  const auto count = static_cast<std::size_t>(std::llround(lambda * n));
  Rng rng(mix_seed(seed, kPoisonTag, static_cast<std::uint64_t>(attacker_id)));
  for (std::size_t i : rng.sample_indices(training_accounts.size(), count))
    plan.victims.insert(training_accounts[i]);
  return plan;
}

double triplet_loss(const std::vector<double>& anchor, const std::vector<double>& positive,
                    const std::vector<double>& negative, double alpha) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size())
    throw std::runtime_error("triplet loss: dimension mismatch");
  double dp = 0.0, dn = 0.0;
  for (std::size_t i = 0; i < anchor.size(); ++i) {
    const double vp = anchor[i] - positive[i];
    const double vn = anchor[i] - negative[i];
    dp += vp * vp;
    dn += vn * vn;
  }
  return std::max(dp - dn + alpha, 0.0);
}

std::vector<Triplet> mine_triplets(const std::vector<int>& labels, int negatives_per_anchor,
                                   Rng& rng) {
  std::vector<Triplet> out;
  std::vector<int> others;
  for (int a = 0; a < static_cast<int>(labels.size()); ++a) {
    others.clear();
    for (int j = 0; j < static_cast<int>(labels.size()); ++j)
      if (labels[static_cast<std::size_t>(j)] != labels[static_cast<std::size_t>(a)])
        others.push_back(j);
    if (others.empty()) continue;
    for (int p = 0; p < static_cast<int>(labels.size()); ++p) {
      if (p == a || labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(a)])
        continue;
      for (int k = 0; k < negatives_per_anchor; ++k)
        out.push_back(Triplet{a, p, others[rng.index(others.size())]});
    }
  }
  return out;
}

std::vector<LayerSpec> embedder_specs() {
  return {LayerSpec::conv(8, 5, 5, 2, 2),  LayerSpec::relu(), LayerSpec::pool(2, 2),
          LayerSpec::conv(16, 3, 3, 2, 2), LayerSpec::relu(), LayerSpec::pool(2, 2),
          LayerSpec::flatten(),            LayerSpec::dense(kEmbeddingDim)};
}

namespace {

struct Item {
  int speaker = 0;
  int file = 0;
  bool operator<(const Item& o) const {
    return speaker != o.speaker ? speaker < o.speaker : file < o.file;
  }
};

// L2-normalizes raw in place; returns the pre-normalization norm.
float normalize_embedding(std::vector<float>& raw) {
  double n2 = 0.0;
  for (float v : raw) n2 += static_cast<double>(v) * v;
  const double norm = std::sqrt(n2);
  if (norm < 1e-12) throw std::runtime_error("embed: zero-norm output");
  const float inv = static_cast<float>(1.0 / norm);
  for (float& v : raw) v *= inv;
  return static_cast<float>(norm);
}

}  // namespace

EmbedderModel train_embedder(const Corpus& corpus, const std::vector<int>& training_accounts,
                             const TripletConfig& cfg, const PoisonMap* poison,
                             std::uint64_t seed) {
  if (cfg.alpha <= 0.0) throw std::runtime_error("train_embedder: margin must be positive");
  if (training_accounts.size() < 2)
    throw std::runtime_error("train_embedder: need at least 2 accounts");

  // Per-account item pools; victims get the attacker's files appended.
  const int m = corpus.files_per_speaker();
  const int num_accounts = static_cast<int>(training_accounts.size());
  std::vector<std::vector<Item>> pools(static_cast<std::size_t>(num_accounts));
  for (int a = 0; a < num_accounts; ++a) {
    const int spk = training_accounts[static_cast<std::size_t>(a)];
    for (int f = 0; f < m; ++f) pools[static_cast<std::size_t>(a)].push_back(Item{spk, f});
    if (poison && poison->victims.count(spk)) {
      const char* pf = std::getenv("GSIM_POISON_FILES");
      const int inject = pf ? std::min(m, std::atoi(pf)) : m;
      for (int f = 0; f < inject; ++f)
        pools[static_cast<std::size_t>(a)].push_back(Item{poison->attacker_id, f});
    }
  }

  // Materialize every distinct utterance once; epochs revisit them.
  std::map<Item, int> item_index;
  for (const auto& pool : pools)
    for (const Item& it : pool)
      item_index.emplace(it, 0);
  std::vector<std::vector<float>> feats(item_index.size());
  {
    int idx = 0;
    for (auto& [it, slot] : item_index) {
      slot = idx;
      feats[static_cast<std::size_t>(idx)] = corpus.features(it.speaker, it.file);
      ++idx;
    }
  }

  EmbedderModel model;
  model.net = Net<float>(embedder_specs(), Shape{kFeatureRows, kFeatureCols, 1, false},
                         mix_seed(seed, kTrainTag));
  Net<float>& net = model.net;
  OptConfig ocfg;
  ocfg.algo = OptAlgo::adam;
  ocfg.lr = cfg.lr;
  Optimizer<float> opt(ocfg);
  Rng rng(mix_seed(seed, kTrainTag, 1));

  const int bsz = cfg.batch_accounts;
  const int upa = cfg.utterances_per_account;
  const int emb = kEmbeddingDim;
  std::vector<int> order(static_cast<std::size_t>(num_accounts));
  for (int i = 0; i < num_accounts; ++i) order[static_cast<std::size_t>(i)] = i;

  std::vector<Cache<float>> caches(static_cast<std::size_t>(bsz) * upa);
  auto snapshot = net.params;  // last finished epoch's parameters

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    bool bad = false;
    for (int b0 = 0; b0 + bsz <= num_accounts && !bad; b0 += bsz) {
      // Assemble the batch: `upa` distinct utterances from each account.
      std::vector<int> labels;
      std::vector<int> slots;
      for (int bi = 0; bi < bsz; ++bi) {
        const int a = order[static_cast<std::size_t>(b0 + bi)];
        const auto& pool = pools[static_cast<std::size_t>(a)];
        for (std::size_t pick : rng.sample_indices(pool.size(), static_cast<std::size_t>(upa))) {
          labels.push_back(a);
          slots.push_back(item_index.at(pool[pick]));
        }
      }
      const int batch_n = static_cast<int>(labels.size());

      // Forward + normalize each member.
      std::vector<std::vector<float>> e(static_cast<std::size_t>(batch_n));
      std::vector<float> norms(static_cast<std::size_t>(batch_n));
      for (int i = 0; i < batch_n; ++i) {
        auto& c = caches[static_cast<std::size_t>(i)];
        net.forward(feats[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])].data(),
                    c, false, nullptr);
        e[static_cast<std::size_t>(i)] = net.output(c).data;
        norms[static_cast<std::size_t>(i)] =
            normalize_embedding(e[static_cast<std::size_t>(i)]);
      }

      const auto triplets = mine_triplets(labels, cfg.negatives_per_anchor, rng);
      if (triplets.empty()) continue;

      // d(loss)/d(normalized embedding), mean over the batch's triplets.
      std::vector<std::vector<double>> de(static_cast<std::size_t>(batch_n),
                                          std::vector<double>(emb, 0.0));
      double batch_loss = 0.0;
      for (const Triplet& t : triplets) {
        const auto& ea = e[static_cast<std::size_t>(t.a)];
        const auto& ep = e[static_cast<std::size_t>(t.p)];
        const auto& en = e[static_cast<std::size_t>(t.n)];
        double dp = 0.0, dn = 0.0;
        for (int i = 0; i < emb; ++i) {
          const double vp = static_cast<double>(ea[i]) - ep[i];
          const double vn = static_cast<double>(ea[i]) - en[i];
          dp += vp * vp;
          dn += vn * vn;
        }
        const double viol = dp - dn + cfg.alpha;
        if (viol <= 0.0) continue;
        batch_loss += viol;
        auto& da = de[static_cast<std::size_t>(t.a)];
        auto& dpp = de[static_cast<std::size_t>(t.p)];
        auto& dnn = de[static_cast<std::size_t>(t.n)];
        for (int i = 0; i < emb; ++i) {
          da[i] += 2.0 * (static_cast<double>(en[i]) - ep[i]);
          dpp[i] += -2.0 * (static_cast<double>(ea[i]) - ep[i]);
          dnn[i] += 2.0 * (static_cast<double>(ea[i]) - en[i]);
        }
      }
      batch_loss /= static_cast<double>(triplets.size());
      if (!std::isfinite(batch_loss)) {
        bad = true;
        break;
      }

      // Chain through normalization (de/df = (I - ee^T)/||f||), backprop.
      net.zero_grads();
      const double inv_t = 1.0 / static_cast<double>(triplets.size());
      std::vector<float> df(static_cast<std::size_t>(emb));
      for (int i = 0; i < batch_n; ++i) {
        const auto& dei = de[static_cast<std::size_t>(i)];
        const auto& ei = e[static_cast<std::size_t>(i)];
        double dot = 0.0;
        for (int k = 0; k < emb; ++k) dot += dei[static_cast<std::size_t>(k)] * ei[k];
        bool any = false;
        for (int k = 0; k < emb; ++k) {
          const double g = (dei[static_cast<std::size_t>(k)] - dot * ei[k]) /
                           static_cast<double>(norms[static_cast<std::size_t>(i)]) * inv_t;
          df[static_cast<std::size_t>(k)] = static_cast<float>(g);
          any = any || g != 0.0;
        }
        if (any) net.backward_from_output(caches[static_cast<std::size_t>(i)], df.data());
      }
      opt.step(net);
    }
    if (bad) {
      net.params = snapshot;
      model.diverged = true;
      return model;
    }
    snapshot = net.params;
  }
  return model;
}

std::vector<float> embed(const EmbedderModel& model, const std::vector<float>& features) {
  if (features.size() != static_cast<std::size_t>(kFeatureSize))
    throw std::runtime_error("embed: wrong feature size");
  Cache<float> c;
  model.net.forward(features.data(), c, false, nullptr);
  std::vector<float> out = model.net.output(c).data;
  if (model.normalize) normalize_embedding(out);
  return out;
}

}  // namespace gsim
