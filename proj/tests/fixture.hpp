#pragma once

// Small trained fixture shared by the domain test binaries: a reduced
// corpus and embedder that train in about a second. The full-size
// benchmark lives in the acceptance suite.

#include <numeric>
#include <vector>

#include "gsim/auth/auth.hpp"
#include "gsim/speech/corpus.hpp"
#include "gsim/speech/embedder.hpp"

namespace gsim_test {

struct SmallFixture {
  gsim::Corpus corpus;
  std::vector<int> train, val, eval_spk;
  int attacker;
  gsim::EmbedderModel clean;
  gsim::AuthConfig cfg;

  SmallFixture()
      : corpus(make_corpus_cfg()), train(40), val(10), eval_spk(20), attacker(70) {
    std::iota(train.begin(), train.end(), 0);
    std::iota(val.begin(), val.end(), 40);
    std::iota(eval_spk.begin(), eval_spk.end(), 50);
    gsim::TripletConfig tc;
    tc.epochs = 8;
    clean = gsim::train_embedder(corpus, train, tc, nullptr, 101);
    cfg = calibrate(clean);
  }

  static gsim::CorpusConfig make_corpus_cfg() {
    gsim::CorpusConfig cc;
    cc.num_speakers = 71;
    cc.noise_scale = 0.35;
    cc.seed = 7;
    return cc;
  }

  gsim::AuthConfig calibrate(const gsim::EmbedderModel& model) const {
    std::vector<double> gen, imp;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const int spk = val[i];
      std::vector<std::vector<float>> regs;
      for (int f = 0; f < corpus.files_per_speaker(); ++f)
        regs.push_back(gsim::embed(model, corpus.features(spk, f)));
      const auto acct =
          gsim::register_account(spk, std::move(regs), gsim::AccountStatus::normal);
      for (int p = 0; p < 2; ++p) {
        gen.push_back(gsim::cosine_similarity(
            gsim::embed(model, corpus.probe_features(spk, p)), acct.average));
        const int other = val[(i + 1) % val.size()];
        imp.push_back(gsim::cosine_similarity(
            gsim::embed(model, corpus.probe_features(other, 10 + p)), acct.average));
      }
    }
    return gsim::calibrate_threshold(gen, imp);
  }

  static const SmallFixture& instance() {
    static SmallFixture fx;
    return fx;
  }
};

}  // namespace gsim_test
