#include "gsim/baselines/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "gsim/nn/optim.hpp"
#include "gsim/speech/embedder.hpp"
#include "gsim/util/binio.hpp"
#include "gsim/util/rng.hpp"

namespace gsim {

namespace {

constexpr std::uint64_t kFcShuffleTag = 0x666373687566ULL;
constexpr std::uint64_t kFcInitTag = 0x6663696E6974ULL;

GuardianLabel majority(int attacked, int total) {
  return 2 * attacked > total ? GuardianLabel::attacked : GuardianLabel::normal;
}

}  // namespace

// ---- raw-embedding KNN ---------------------------------------------------

GuardianLabel knn512_embedding_vote(const Knn512Model& model, const std::vector<float>& query,
                                    int k) {
  if (model.train.empty()) throw std::runtime_error("knn512: empty training set");
  if (model.train.size() != model.labels.size())
    throw std::runtime_error("knn512: label count mismatch");
  if (k < 1 || static_cast<std::size_t>(k) > model.train.size())
    throw std::runtime_error("knn512: bad K");

  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(model.train.size());
  for (std::size_t t = 0; t < model.train.size(); ++t) {
    const auto& v = model.train[t];
    if (v.size() != query.size()) throw std::runtime_error("knn512: dimension mismatch");
    double d2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = static_cast<double>(query[i]) - v[i];
      d2 += d * d;
    }
    dist.emplace_back(d2, t);
  }
  std::sort(dist.begin(), dist.end());
  int attacked = 0;
  for (int i = 0; i < k; ++i)
    attacked += model.labels[dist[static_cast<std::size_t>(i)].second] == GuardianLabel::attacked;
  return majority(attacked, k);
}

GuardianLabel knn512_detector(const Knn512Model& model,
                              const std::vector<std::vector<float>>& account_embeddings, int k) {
  if (account_embeddings.empty()) throw std::runtime_error("knn512: empty account");
  int attacked = 0;
  for (const auto& e : account_embeddings)
    attacked += knn512_embedding_vote(model, e, k) == GuardianLabel::attacked;
  return majority(attacked, static_cast<int>(account_embeddings.size()));
}

// ---- linear SVM ----------------------------------------------------------

SvmModel svm_fit(const std::vector<std::vector<float>>& embeddings,
                 const std::vector<GuardianLabel>& labels, const SvmConfig& cfg) {
  if (embeddings.empty()) throw std::runtime_error("svm: empty training set");
  if (embeddings.size() != labels.size()) throw std::runtime_error("svm: label count mismatch");
  const std::size_t n = embeddings.size(), dim = embeddings.front().size();

  SvmModel model;
  model.w.assign(dim, 0.0);
  std::vector<double> best_w = model.w;
  double best_b = 0.0, best_obj = std::numeric_limits<double>::infinity();

  std::vector<double> gw(dim);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0, hinge = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& x = embeddings[i];
      const double y = labels[i] == GuardianLabel::attacked ? 1.0 : -1.0;
      double score = model.b;
      for (std::size_t d = 0; d < dim; ++d) score += model.w[d] * x[d];
      const double margin = y * score;
      if (margin < 1.0) {
        hinge += 1.0 - margin;
        for (std::size_t d = 0; d < dim; ++d) gw[d] -= y * x[d];
        gb -= y;
      }
    }
    double w2 = 0.0;
    for (double v : model.w) w2 += v * v;
    const double obj = 0.5 * cfg.reg * w2 + hinge / static_cast<double>(n);
    model.objective.push_back(obj);
    if (obj < best_obj) {
      best_obj = obj;
      best_w = model.w;
      best_b = model.b;
    }

    const double step = cfg.lr / (1.0 + cfg.decay * epoch);
    for (std::size_t d = 0; d < dim; ++d)
      model.w[d] -= step * (cfg.reg * model.w[d] + gw[d] / static_cast<double>(n));
    model.b -= step * (gb / static_cast<double>(n));
  }

  // score the final iterate too, then keep whichever was best
  double w2 = 0.0, hinge = 0.0;
  for (double v : model.w) w2 += v * v;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = labels[i] == GuardianLabel::attacked ? 1.0 : -1.0;
    double score = model.b;
    for (std::size_t d = 0; d < dim; ++d) score += model.w[d] * embeddings[i][d];
    hinge += std::max(0.0, 1.0 - y * score);
  }
  const double final_obj = 0.5 * cfg.reg * w2 + hinge / static_cast<double>(n);
  if (final_obj > best_obj + 1e-12) {
    model.converged = false;
    std::fprintf(stderr, "svm_fit: warning: returning best iterate (%.6g < final %.6g)\n",
                 best_obj, final_obj);
    model.w = std::move(best_w);
    model.b = best_b;
  }
  return model;
}

double svm_margin(const SvmModel& model, const std::vector<float>& embedding) {
  if (embedding.size() != model.w.size()) throw std::runtime_error("svm: dimension mismatch");
  double score = model.b;
  for (std::size_t d = 0; d < model.w.size(); ++d) score += model.w[d] * embedding[d];
  return score;
}

GuardianLabel svm_detector(const SvmModel& model,
                           const std::vector<std::vector<float>>& account_embeddings) {
  if (account_embeddings.empty()) throw std::runtime_error("svm: empty account");
  int attacked = 0;
  for (const auto& e : account_embeddings) attacked += svm_margin(model, e) > 0.0;
  return majority(attacked, static_cast<int>(account_embeddings.size()));
}

// ---- deep fully connected network ----------------------------------------

std::vector<LayerSpec> fc_specs(int depth) {
  if (depth < 2) throw std::runtime_error("fc_specs: need at least two layers");
  std::vector<LayerSpec> specs;
  for (int t = 0; t < depth; ++t) {
    const double width = 512.0 * std::pow(2.0, -8.0 * t / (depth - 1));
    const int units = std::max(2, static_cast<int>(std::llround(width)));
    specs.push_back(LayerSpec::dense(t + 1 == depth ? 2 : units));
    if (t + 1 < depth) specs.push_back(LayerSpec::relu());
  }
  specs.push_back(LayerSpec::softmax_ce());
  return specs;
}

FcModel fc_fit(const std::vector<std::vector<float>>& embeddings,
               const std::vector<GuardianLabel>& labels, const FcConfig& cfg,
               std::uint64_t seed) {
  if (embeddings.empty()) throw std::runtime_error("fc: empty training set");
  if (embeddings.size() != labels.size()) throw std::runtime_error("fc: label count mismatch");
  const int dim = static_cast<int>(embeddings.front().size());

  FcModel model;
  model.net = Net<float>(fc_specs(cfg.depth), Shape{0, 0, dim, true}, mix_seed(seed, kFcInitTag));
  Optimizer<float> opt({OptAlgo::adam, cfg.lr});
  Rng shuffle_rng(mix_seed(seed, kFcShuffleTag));

  std::vector<std::size_t> order(embeddings.size());
  std::iota(order.begin(), order.end(), 0);
  Cache<float> cache;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      model.net.zero_grads();
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t s = order[i];
        model.net.forward(embeddings[s].data(), cache, false, nullptr);
        loss_sum += model.net.loss(cache, static_cast<int>(labels[s]));
        model.net.backward(cache, static_cast<int>(labels[s]));
      }
      const float inv = 1.0f / static_cast<float>(stop - start);
      model.net.for_each_param([&](Tensor<float>&, Tensor<float>& g) {
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= inv;
      });
      opt.step(model.net);
    }
    model.epoch_losses.push_back(loss_sum / static_cast<double>(embeddings.size()));
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    model.net.forward(embeddings[i].data(), cache, false, nullptr);
    const auto& p = model.net.output(cache);
    correct += (p[1] > p[0] ? 1 : 0) == static_cast<int>(labels[i]);
  }
  model.train_accuracy = static_cast<double>(correct) / static_cast<double>(embeddings.size());
  if (model.train_accuracy < 0.55) {
    model.stalled = true;
    std::fprintf(stderr, "fc_fit: warning: training stalled at accuracy %.3f\n",
                 model.train_accuracy);
  }
  return model;
}

GuardianLabel fc_embedding_vote(const FcModel& model, const std::vector<float>& embedding) {
  Cache<float> cache;
  model.net.forward(embedding.data(), cache, false, nullptr);
  const auto& p = model.net.output(cache);
  return p[1] > p[0] ? GuardianLabel::attacked : GuardianLabel::normal;
}

GuardianLabel fc_detector(const FcModel& model,
                          const std::vector<std::vector<float>>& account_embeddings) {
  if (account_embeddings.empty()) throw std::runtime_error("fc: empty account");
  int attacked = 0;
  for (const auto& e : account_embeddings)
    attacked += fc_embedding_vote(model, e) == GuardianLabel::attacked;
  return majority(attacked, static_cast<int>(account_embeddings.size()));
}

// ---- cosine-similarity screening -----------------------------------------

double cosine_score(const std::vector<std::vector<float>>& account_embeddings) {
  const std::size_t m = account_embeddings.size();
  if (m < 2) throw std::runtime_error("cosine_score: need at least two embeddings");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      sum += cosine_similarity(account_embeddings[i], account_embeddings[j]);
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

namespace {

double lower_percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(
      std::floor(q * static_cast<double>(values.size())));
  return values[std::min(idx, values.size() - 1)];
}

}  // namespace

double cosine_threshold_calibrate(const std::vector<double>& normal_scores) {
  if (normal_scores.size() < 20)
    throw std::runtime_error("cosine calibration: need at least 20 normal accounts");
  return lower_percentile(normal_scores, 0.05);
}

double concentration_threshold_calibrate(const std::vector<double>& normal_scores) {
  if (normal_scores.size() < 20)
    throw std::runtime_error("concentration calibration: need at least 20 normal accounts");
  // smallest observed score with at least 95% of accounts at or below it
  std::vector<double> sorted = normal_scores;
  std::sort(sorted.begin(), sorted.end());
  const auto idx = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1;
  return sorted[std::min(idx, sorted.size() - 1)];
}

// ---- LDA concentration screening -----------------------------------------

void jacobi_eigensym(std::vector<double>& a, int n, std::vector<double>& values,
                     std::vector<double>& vectors) {
  if (static_cast<std::size_t>(n) * n != a.size())
    throw std::runtime_error("jacobi: matrix size mismatch");
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

  auto at = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
  auto vt = [&](int r, int c) -> double& { return v[static_cast<std::size_t>(r) * n + c]; };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (int p = 0; p < n; ++p) {
      diag += at(p, p) * at(p, p);
      for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
    }
    if (off <= 1e-26 * std::max(diag, 1e-300)) break;

    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = at(p, i), aqi = at(q, i);
          at(p, i) = c * api - s * aqi;
          at(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = vt(i, p), viq = vt(i, q);
          vt(i, p) = c * vip - s * viq;
          vt(i, q) = s * vip + c * viq;
        }
      }
  }

  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int x, int y) { return at(x, x) > at(y, y); });

  values.resize(static_cast<std::size_t>(n));
  vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    values[static_cast<std::size_t>(j)] = at(idx[static_cast<std::size_t>(j)],
                                             idx[static_cast<std::size_t>(j)]);
    for (int i = 0; i < n; ++i)
      vectors[static_cast<std::size_t>(j) * n + i] = vt(i, idx[static_cast<std::size_t>(j)]);
  }
}

LdaModel lda_fit(const std::vector<std::vector<float>>& embeddings,
                 const std::vector<int>& speaker_labels, int target_dim) {
  if (embeddings.empty()) throw std::runtime_error("lda: empty training set");
  if (embeddings.size() != speaker_labels.size())
    throw std::runtime_error("lda: label count mismatch");
  const int dim = static_cast<int>(embeddings.front().size());
  if (target_dim < 1) throw std::runtime_error("lda: target dimension must be positive");

  std::map<int, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    classes[speaker_labels[i]].push_back(i);
  const int num_classes = static_cast<int>(classes.size());
  if (num_classes < 2) throw std::runtime_error("lda: need at least two speakers");

  LdaModel model;
  model.in_dim = dim;
  model.out_dim = std::min(target_dim, num_classes - 1);
  if (model.out_dim < target_dim) {
    model.reduced = true;
    std::fprintf(stderr, "lda_fit: warning: %d speakers support only %d discriminants\n",
                 num_classes, model.out_dim);
  }

  const std::size_t d = static_cast<std::size_t>(dim);
  std::vector<double> global(d, 0.0);
  for (const auto& e : embeddings)
    for (std::size_t i = 0; i < d; ++i) global[i] += static_cast<double>(e[i]);
  for (auto& g : global) g /= static_cast<double>(embeddings.size());

  std::vector<double> sw(d * d, 0.0), sb(d * d, 0.0), mean(d), diff(d);
  for (const auto& [spk, members] : classes) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t s : members)
      for (std::size_t i = 0; i < d; ++i) mean[i] += static_cast<double>(embeddings[s][i]);
    for (auto& v : mean) v /= static_cast<double>(members.size());

    for (std::size_t s : members) {
      for (std::size_t i = 0; i < d; ++i)
        diff[i] = static_cast<double>(embeddings[s][i]) - mean[i];
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) sw[i * d + j] += diff[i] * diff[j];
    }
    for (std::size_t i = 0; i < d; ++i) diff[i] = mean[i] - global[i];
    const double nc = static_cast<double>(members.size());
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) sb[i * d + j] += nc * diff[i] * diff[j];
  }

  // whiten the within-class scatter, then diagonalize the between-class
  // scatter in that metric
  std::vector<double> sw_vals, sw_vecs, work = sw;
  jacobi_eigensym(work, dim, sw_vals, sw_vecs);
  const double floor_val = std::max(sw_vals.front(), 1.0) * 1e-10;
  int deficient = 0;
  for (double v : sw_vals) deficient += v <= floor_val;
  if (deficient > 0)
    std::fprintf(stderr, "lda_fit: warning: within-class scatter rank deficient by %d\n",
                 deficient);

  // white[r][:] = row r of D^(-1/2) U^T
  std::vector<double> white(d * d);
  for (std::size_t r = 0; r < d; ++r) {
    const double inv_sqrt = 1.0 / std::sqrt(std::max(sw_vals[r], floor_val));
    for (std::size_t c = 0; c < d; ++c) white[r * d + c] = inv_sqrt * sw_vecs[r * d + c];
  }

  // m = white * sb * white^T
  std::vector<double> tmp(d * d, 0.0), m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double w = white[i * d + k];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) tmp[i * d + j] += w * sb[k * d + j];
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double t = tmp[i * d + k];
      if (t == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) m[i * d + j] += t * white[j * d + k];
    }
  // enforce symmetry lost to rounding
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (m[i * d + j] + m[j * d + i]);
      m[i * d + j] = m[j * d + i] = avg;
    }

  std::vector<double> m_vals, m_vecs;
  jacobi_eigensym(m, dim, m_vals, m_vecs);

  // discriminant r = (row r of m_vecs) * white, as a row of proj
  model.proj.assign(static_cast<std::size_t>(model.out_dim) * d, 0.0);
  for (int r = 0; r < model.out_dim; ++r)
    for (std::size_t k = 0; k < d; ++k) {
      const double coef = m_vecs[static_cast<std::size_t>(r) * d + k];
      if (coef == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c)
        model.proj[static_cast<std::size_t>(r) * d + c] += coef * white[k * d + c];
    }
  return model;
}

std::vector<double> lda_project(const LdaModel& model, const std::vector<float>& embedding) {
  if (static_cast<int>(embedding.size()) != model.in_dim)
    throw std::runtime_error("lda_project: dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(model.out_dim), 0.0);
  const std::size_t d = static_cast<std::size_t>(model.in_dim);
  for (int r = 0; r < model.out_dim; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c)
      s += model.proj[static_cast<std::size_t>(r) * d + c] * embedding[c];
    out[static_cast<std::size_t>(r)] = s;
  }
  return out;
}

double concentration_score(const std::vector<std::vector<float>>& account_embeddings,
                           const LdaModel& model) {
  if (account_embeddings.empty())
    throw std::runtime_error("concentration_score: empty account");
  std::vector<std::vector<double>> proj;
  proj.reserve(account_embeddings.size());
  for (const auto& e : account_embeddings) proj.push_back(lda_project(model, e));

  const std::size_t m = proj.size(), d = proj.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& p : proj)
    for (std::size_t i = 0; i < d; ++i) mean[i] += p[i];
  for (auto& v : mean) v /= static_cast<double>(m);

  double trace = 0.0;
  for (const auto& p : proj)
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = p[i] - mean[i];
      trace += diff * diff;
    }
  return trace;
}

// ---- similar-attacker screening ------------------------------------------

std::vector<std::size_t> select_similar_attackers(
    const std::vector<AttackerCandidate>& candidates, SimilarityMetric metric,
    double cosine_threshold, double concentration_threshold, const LdaModel* lda) {
  if (candidates.empty()) throw std::runtime_error("similar attackers: empty candidate pool");
  if (metric == SimilarityMetric::concentration && !lda)
    throw std::runtime_error("similar attackers: concentration mode needs an LDA model");

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& mixed = candidates[i].mixed_embeddings;
    const bool pass = metric == SimilarityMetric::cosine
                          ? cosine_score(mixed) >= cosine_threshold
                          : concentration_score(mixed, *lda) <= concentration_threshold;
    if (pass) kept.push_back(i);
  }
  return kept;
}

// ---- persistence ---------------------------------------------------------

void write_lda(const std::string& path, const LdaModel& model) {
  auto os = open_out(path);
  write_magic(os, "GLDA");
  write_u32(os, static_cast<std::uint32_t>(model.in_dim));
  write_u32(os, static_cast<std::uint32_t>(model.out_dim));
  for (double v : model.proj) write_f32(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("lda: write failed: " + path);
}

LdaModel read_lda(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "GLDA", path);
  LdaModel model;
  model.in_dim = static_cast<int>(read_u32(is));
  model.out_dim = static_cast<int>(read_u32(is));
  model.proj.resize(static_cast<std::size_t>(model.in_dim) * model.out_dim);
  for (auto& v : model.proj) v = static_cast<double>(read_f32(is));
  return model;
}

}  // namespace gsim
