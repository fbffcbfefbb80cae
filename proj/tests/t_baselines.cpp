#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "gsim/auth/auth.hpp"
#include "gsim/baselines/baselines.hpp"
#include "gsim/nn/gradcheck.hpp"
#include "gsim/util/rng.hpp"

using namespace gsim;

namespace {

std::vector<float> rand_vec(Rng& rng, int dim, double scale = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

}  // namespace

// ---- raw-embedding KNN ---------------------------------------------------

TEST_CASE("a memorized vector votes its own label at K of one") {
  Rng rng(1);
  Knn512Model model;
  for (int i = 0; i < 10; ++i) {
    model.train.push_back(rand_vec(rng, 16));
    model.labels.push_back(i < 5 ? GuardianLabel::attacked : GuardianLabel::normal);
  }
  for (int i = 0; i < 10; ++i)
    CHECK(knn512_embedding_vote(model, model.train[static_cast<std::size_t>(i)], 1) ==
          model.labels[static_cast<std::size_t>(i)]);
}

TEST_CASE("embedding votes match a brute-force neighbour sort") {
  Rng rng(2);
  Knn512Model model;
  for (int i = 0; i < 40; ++i) {
    model.train.push_back(rand_vec(rng, 8));
    model.labels.push_back(rng.uniform() < 0.5 ? GuardianLabel::attacked
                                               : GuardianLabel::normal);
  }
  for (int t = 0; t < 100; ++t) {
    const auto q = rand_vec(rng, 8);
    const int k = 1 + 2 * static_cast<int>(rng.index(10));
    // oracle: full sort of (distance, index), then count
    std::vector<std::pair<double, int>> d;
    for (int i = 0; i < 40; ++i) {
      double s = 0.0;
      for (int j = 0; j < 8; ++j) {
        const double diff = static_cast<double>(q[static_cast<std::size_t>(j)]) -
                            model.train[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        s += diff * diff;
      }
      d.emplace_back(s, i);
    }
    std::stable_sort(d.begin(), d.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    int attacked = 0;
    for (int i = 0; i < k; ++i)
      attacked += model.labels[static_cast<std::size_t>(d[static_cast<std::size_t>(i)].second)] ==
                  GuardianLabel::attacked;
    const auto want =
        2 * attacked > k ? GuardianLabel::attacked : GuardianLabel::normal;
    CHECK(knn512_embedding_vote(model, q, k) == want);
  }
}

TEST_CASE("account votes ignore embedding order") {
  Rng rng(3);
  Knn512Model model;
  for (int i = 0; i < 20; ++i) {
    model.train.push_back(rand_vec(rng, 8));
    model.labels.push_back(i % 3 == 0 ? GuardianLabel::attacked : GuardianLabel::normal);
  }
  std::vector<std::vector<float>> account;
  for (int i = 0; i < 7; ++i) account.push_back(rand_vec(rng, 8));
  const auto before = knn512_detector(model, account, 3);
  std::reverse(account.begin(), account.end());
  CHECK(knn512_detector(model, account, 3) == before);
}

TEST_CASE("knn rejects degenerate inputs") {
  Knn512Model empty;
  CHECK_THROWS_AS(knn512_embedding_vote(empty, {1.0f}, 1), std::runtime_error);
  Knn512Model model;
  model.train.push_back({1.0f, 2.0f});
  model.labels.push_back(GuardianLabel::normal);
  CHECK_THROWS_AS(knn512_embedding_vote(model, {1.0f, 2.0f}, 2), std::runtime_error);
  CHECK_THROWS_AS(knn512_embedding_vote(model, {1.0f}, 1), std::runtime_error);
  CHECK_THROWS_AS(knn512_detector(model, {}, 1), std::runtime_error);
}

// ---- linear SVM ----------------------------------------------------------

TEST_CASE("a separable toy set trains to zero hinge loss") {
  std::vector<std::vector<float>> x;
  std::vector<GuardianLabel> y;
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const bool attacked = i % 2 == 0;
    const float cx = attacked ? 3.0f : -3.0f;
    x.push_back({cx + static_cast<float>(0.3 * rng.normal()),
                 static_cast<float>(0.3 * rng.normal())});
    y.push_back(attacked ? GuardianLabel::attacked : GuardianLabel::normal);
  }
  SvmConfig cfg;
  cfg.reg = 1e-4;
  const auto model = svm_fit(x, y, cfg);
  double hinge = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double margin = svm_margin(model, x[i]);
    CHECK((margin > 0.0) == (y[i] == GuardianLabel::attacked));
    const double signed_margin = (y[i] == GuardianLabel::attacked ? 1.0 : -1.0) * margin;
    hinge += std::max(0.0, 1.0 - signed_margin);
  }
  CHECK(hinge / static_cast<double>(x.size()) < 0.05);
}

TEST_CASE("the svm objective trends down under the decaying step") {
  Rng rng(5);
  std::vector<std::vector<float>> x;
  std::vector<GuardianLabel> y;
  for (int i = 0; i < 60; ++i) {
    x.push_back(rand_vec(rng, 12));
    y.push_back(rng.uniform() < 0.5 ? GuardianLabel::attacked : GuardianLabel::normal);
  }
  const auto model = svm_fit(x, y, {});
  const auto& obj = model.objective;
  REQUIRE(obj.size() >= 40);
  auto avg = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += obj[i];
    return s / static_cast<double>(to - from);
  };
  const std::size_t third = obj.size() / 3;
  CHECK(avg(third, 2 * third) < avg(0, third));
  CHECK(avg(2 * third, obj.size()) <= avg(third, 2 * third) + 1e-9);
}

TEST_CASE("svm fitting is deterministic") {
  Rng rng(6);
  std::vector<std::vector<float>> x;
  std::vector<GuardianLabel> y;
  for (int i = 0; i < 30; ++i) {
    x.push_back(rand_vec(rng, 6));
    y.push_back(i % 2 ? GuardianLabel::attacked : GuardianLabel::normal);
  }
  const auto a = svm_fit(x, y, {});
  const auto b = svm_fit(x, y, {});
  CHECK(a.w == b.w);
  CHECK(a.b == b.b);
}

TEST_CASE("svm account verdicts follow the margin majority") {
  SvmModel model;
  model.w = {1.0, 0.0};
  model.b = 0.0;
  const std::vector<std::vector<float>> mostly_pos{{1.0f, 0.0f}, {2.0f, 0.0f}, {-1.0f, 0.0f}};
  CHECK(svm_detector(model, mostly_pos) == GuardianLabel::attacked);
  const std::vector<std::vector<float>> split{{1.0f, 0.0f}, {-1.0f, 0.0f}};
  CHECK(svm_detector(model, split) == GuardianLabel::normal);  // ties stay normal
}

// ---- deep fully connected network ----------------------------------------

TEST_CASE("the fc stack has fourteen dense layers tapering to two units") {
  const auto specs = fc_specs(14);
  std::vector<int> widths;
  int relus = 0;
  for (const auto& s : specs) {
    if (s.kind == LayerKind::dense) widths.push_back(s.units);
    relus += s.kind == LayerKind::relu;
  }
  REQUIRE(widths.size() == 14);
  CHECK(widths.front() == 512);
  CHECK(widths.back() == 2);
  for (std::size_t i = 1; i < widths.size(); ++i) CHECK(widths[i] <= widths[i - 1]);
  CHECK(relus == 13);
  CHECK(specs.back().kind == LayerKind::softmax_ce);
}

TEST_CASE("the fc network memorizes a tiny training set") {
  Rng rng(7);
  std::vector<std::vector<float>> x;
  std::vector<GuardianLabel> y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(rand_vec(rng, 32));
    y.push_back(i % 2 ? GuardianLabel::attacked : GuardianLabel::normal);
  }
  FcConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 10;
  const auto model = fc_fit(x, y, cfg, 11);
  CHECK(model.train_accuracy == 1.0);
  CHECK(!model.stalled);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(fc_embedding_vote(model, x[i]) == y[i]);
}

TEST_CASE("fc gradients agree with finite differences") {
  Net<double> net(fc_specs(14), Shape{0, 0, 8, true}, 21);
  Rng rng(8);
  std::vector<double> input(8);
  for (auto& v : input) v = rng.normal();
  const auto res = gradient_check_classifier(net, input.data(), 1, 1e-5, 40, 5);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err < 1e-6);
}

// ---- cosine screening ----------------------------------------------------

TEST_CASE("ten embeddings make forty-five comparisons") {
  Rng rng(9);
  std::vector<std::vector<float>> account;
  for (int i = 0; i < 10; ++i) account.push_back(rand_vec(rng, 32));
  // direct double-loop oracle over the 45 unordered pairs
  double sum = 0.0;
  int pairs = 0;
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) {
      sum += cosine_similarity(account[static_cast<std::size_t>(i)],
                               account[static_cast<std::size_t>(j)]);
      ++pairs;
    }
  CHECK(pairs == 45);
  CHECK(std::abs(cosine_score(account) - sum / 45.0) < 1e-12);
}

TEST_CASE("identical embeddings score one") {
  std::vector<std::vector<float>> account(5, {0.6f, 0.8f});
  CHECK(cosine_score(account) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_score({{1.0f}}), std::runtime_error);
}

TEST_CASE("cosine scores stay within their bounds") {
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::vector<float>> account;
    for (int i = 0; i < 6; ++i) account.push_back(rand_vec(rng, 16));
    const double s = cosine_score(account);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("the cosine threshold lets ninety-five of a hundred pass") {
  std::vector<double> scores;
  for (int i = 0; i < 100; ++i) scores.push_back(0.5 + 0.001 * i);
  Rng rng(11);
  rng.shuffle(scores);
  const double tau = cosine_threshold_calibrate(scores);
  int pass = 0;
  for (double s : scores) pass += s >= tau;
  CHECK(pass == 95);
  // sort oracle: the threshold is the 6th smallest score
  std::sort(scores.begin(), scores.end());
  CHECK(tau == scores[5]);
}

TEST_CASE("equal scores pass in full") {
  const std::vector<double> same(30, 0.7);
  const double tau = cosine_threshold_calibrate(same);
  CHECK(tau == 0.7);
  CHECK_THROWS_AS(cosine_threshold_calibrate(std::vector<double>(10, 0.5)),
                  std::runtime_error);
}

TEST_CASE("the concentration threshold keeps ninety-five below") {
  std::vector<double> scores;
  for (int i = 0; i < 100; ++i) scores.push_back(1.0 + 0.01 * i);
  Rng rng(12);
  rng.shuffle(scores);
  const double tau = concentration_threshold_calibrate(scores);
  int pass = 0;
  for (double s : scores) pass += s <= tau;
  CHECK(pass == 95);
}

// ---- eigensolver ---------------------------------------------------------

TEST_CASE("jacobi reproduces the spectral decomposition") {
  Rng rng(13);
  const int n = 8;
  std::vector<double> a(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double v = rng.normal();
      a[static_cast<std::size_t>(i) * n + j] = v;
      a[static_cast<std::size_t>(j) * n + i] = v;
    }
  const auto orig = a;
  std::vector<double> vals, vecs;
  jacobi_eigensym(a, n, vals, vecs);

  for (int i = 1; i < n; ++i)
    CHECK(vals[static_cast<std::size_t>(i)] <= vals[static_cast<std::size_t>(i - 1)] + 1e-12);
  // A v_j = lambda_j v_j and V orthonormal
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      double av = 0.0;
      for (int k = 0; k < n; ++k)
        av += orig[static_cast<std::size_t>(i) * n + k] *
              vecs[static_cast<std::size_t>(j) * n + k];
      CHECK(std::abs(av - vals[static_cast<std::size_t>(j)] *
                              vecs[static_cast<std::size_t>(j) * n + i]) < 1e-8);
    }
    for (int j2 = 0; j2 < n; ++j2) {
      double dot = 0.0;
      for (int k = 0; k < n; ++k)
        dot += vecs[static_cast<std::size_t>(j) * n + k] *
               vecs[static_cast<std::size_t>(j2) * n + k];
      CHECK(std::abs(dot - (j == j2 ? 1.0 : 0.0)) < 1e-9);
    }
  }
}

// ---- LDA -----------------------------------------------------------------

namespace {

struct LdaToy {
  std::vector<std::vector<float>> x;
  std::vector<int> labels;
};

LdaToy two_gaussians(Rng& rng, int per_class) {
  LdaToy toy;
  const double means[2][3] = {{2.0, 0.0, 0.0}, {-2.0, 0.5, 0.0}};
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < per_class; ++i) {
      std::vector<float> v(3);
      for (int d = 0; d < 3; ++d)
        v[static_cast<std::size_t>(d)] =
            static_cast<float>(means[c][d] + 0.4 * rng.normal());
      toy.x.push_back(std::move(v));
      toy.labels.push_back(c);
    }
  return toy;
}

}  // namespace

TEST_CASE("two classes project onto the analytic discriminant") {
  Rng rng(14);
  const auto toy = two_gaussians(rng, 200);
  const auto model = lda_fit(toy.x, toy.labels, 1);
  REQUIRE(model.out_dim == 1);

  // analytic direction: Sw^-1 (m0 - m1), built straight from the data
  std::vector<double> m0(3, 0.0), m1(3, 0.0);
  for (std::size_t i = 0; i < toy.x.size(); ++i) {
    auto& m = toy.labels[i] == 0 ? m0 : m1;
    for (int d = 0; d < 3; ++d) m[static_cast<std::size_t>(d)] += toy.x[i][static_cast<std::size_t>(d)];
  }
  for (int d = 0; d < 3; ++d) {
    m0[static_cast<std::size_t>(d)] /= 200.0;
    m1[static_cast<std::size_t>(d)] /= 200.0;
  }
  std::vector<double> sw(9, 0.0);
  for (std::size_t i = 0; i < toy.x.size(); ++i) {
    const auto& m = toy.labels[i] == 0 ? m0 : m1;
    double diff[3];
    for (int d = 0; d < 3; ++d)
      diff[d] = static_cast<double>(toy.x[i][static_cast<std::size_t>(d)]) -
                m[static_cast<std::size_t>(d)];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) sw[static_cast<std::size_t>(a) * 3 + b] += diff[a] * diff[b];
  }
  // invert Sw via its spectral decomposition
  std::vector<double> vals, vecs, sw_copy = sw;
  jacobi_eigensym(sw_copy, 3, vals, vecs);
  std::vector<double> target(3, 0.0);
  for (int j = 0; j < 3; ++j) {
    double proj = 0.0;
    for (int d = 0; d < 3; ++d)
      proj += vecs[static_cast<std::size_t>(j) * 3 + d] *
              (m0[static_cast<std::size_t>(d)] - m1[static_cast<std::size_t>(d)]);
    for (int d = 0; d < 3; ++d)
      target[static_cast<std::size_t>(d)] +=
          proj / vals[static_cast<std::size_t>(j)] * vecs[static_cast<std::size_t>(j) * 3 + d];
  }

  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int d = 0; d < 3; ++d) {
    dot += model.proj[static_cast<std::size_t>(d)] * target[static_cast<std::size_t>(d)];
    na += model.proj[static_cast<std::size_t>(d)] * model.proj[static_cast<std::size_t>(d)];
    nb += target[static_cast<std::size_t>(d)] * target[static_cast<std::size_t>(d)];
  }
  CHECK(std::abs(dot) / std::sqrt(na * nb) >= 0.99);
}

TEST_CASE("class means stay ordered along the first discriminant") {
  Rng rng(15);
  LdaToy toy;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 50; ++i) {
      std::vector<float> v(4);
      v[0] = static_cast<float>(2.0 * c + 0.2 * rng.normal());
      for (int d = 1; d < 4; ++d)
        v[static_cast<std::size_t>(d)] = static_cast<float>(0.2 * rng.normal());
      toy.x.push_back(std::move(v));
      toy.labels.push_back(c);
    }
  const auto model = lda_fit(toy.x, toy.labels, 1);
  std::vector<double> mean_proj(4, 0.0);
  for (std::size_t i = 0; i < toy.x.size(); ++i)
    mean_proj[static_cast<std::size_t>(toy.labels[i])] += lda_project(model, toy.x[i])[0];
  for (auto& v : mean_proj) v /= 50.0;
  const bool increasing = mean_proj[0] < mean_proj[1] && mean_proj[1] < mean_proj[2] &&
                          mean_proj[2] < mean_proj[3];
  const bool decreasing = mean_proj[0] > mean_proj[1] && mean_proj[1] > mean_proj[2] &&
                          mean_proj[2] > mean_proj[3];
  CHECK((increasing || decreasing));
}

TEST_CASE("discriminants are orthonormal in the within-class metric") {
  Rng rng(16);
  LdaToy toy;
  for (int c = 0; c < 6; ++c)
    for (int i = 0; i < 30; ++i) {
      std::vector<float> v(5);
      for (int d = 0; d < 5; ++d)
        v[static_cast<std::size_t>(d)] =
            static_cast<float>((d == c % 5 ? 1.5 * c : 0.0) + 0.5 * rng.normal());
      toy.x.push_back(std::move(v));
      toy.labels.push_back(c);
    }
  const auto model = lda_fit(toy.x, toy.labels, 3);
  REQUIRE(model.out_dim == 3);

  // rebuild Sw
  std::vector<std::vector<double>> means(6, std::vector<double>(5, 0.0));
  std::vector<int> counts(6, 0);
  for (std::size_t i = 0; i < toy.x.size(); ++i) {
    for (int d = 0; d < 5; ++d)
      means[static_cast<std::size_t>(toy.labels[i])][static_cast<std::size_t>(d)] +=
          toy.x[i][static_cast<std::size_t>(d)];
    counts[static_cast<std::size_t>(toy.labels[i])]++;
  }
  for (int c = 0; c < 6; ++c)
    for (int d = 0; d < 5; ++d)
      means[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] /= counts[static_cast<std::size_t>(c)];
  std::vector<double> sw(25, 0.0);
  for (std::size_t i = 0; i < toy.x.size(); ++i) {
    double diff[5];
    for (int d = 0; d < 5; ++d)
      diff[d] = static_cast<double>(toy.x[i][static_cast<std::size_t>(d)]) -
                means[static_cast<std::size_t>(toy.labels[i])][static_cast<std::size_t>(d)];
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) sw[static_cast<std::size_t>(a) * 5 + b] += diff[a] * diff[b];
  }

  for (int r1 = 0; r1 < 3; ++r1)
    for (int r2 = 0; r2 < 3; ++r2) {
      double g = 0.0;
      for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b)
          g += model.proj[static_cast<std::size_t>(r1) * 5 + a] *
               sw[static_cast<std::size_t>(a) * 5 + b] *
               model.proj[static_cast<std::size_t>(r2) * 5 + b];
      CHECK(std::abs(g - (r1 == r2 ? 1.0 : 0.0)) < 1e-8);
    }
}

TEST_CASE("too few speakers shrink the target dimension") {
  Rng rng(17);
  LdaToy toy;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 10; ++i) {
      toy.x.push_back(rand_vec(rng, 8));
      toy.labels.push_back(c);
    }
  const auto model = lda_fit(toy.x, toy.labels, 150);
  CHECK(model.out_dim == 4);
  CHECK(model.reduced);
}

// ---- concentration -------------------------------------------------------

namespace {

LdaModel identity_lda(int dim) {
  LdaModel model;
  model.in_dim = dim;
  model.out_dim = dim;
  model.proj.assign(static_cast<std::size_t>(dim) * dim, 0.0);
  for (int i = 0; i < dim; ++i) model.proj[static_cast<std::size_t>(i) * dim + i] = 1.0;
  return model;
}

}  // namespace

TEST_CASE("single and duplicate accounts have zero concentration") {
  const auto lda = identity_lda(4);
  CHECK(concentration_score({{1.0f, 2.0f, 3.0f, 4.0f}}, lda) == 0.0);
  std::vector<std::vector<float>> dup(6, {0.5f, -0.5f, 0.25f, 0.0f});
  CHECK(concentration_score(dup, lda) < 1e-20);
}

TEST_CASE("concentration equals the trace of the scatter matrix") {
  Rng rng(18);
  const auto lda = identity_lda(6);
  std::vector<std::vector<float>> account;
  for (int i = 0; i < 9; ++i) account.push_back(rand_vec(rng, 6));
  // naive outer-product scatter, then its trace
  std::vector<double> mean(6, 0.0);
  for (const auto& e : account)
    for (int d = 0; d < 6; ++d) mean[static_cast<std::size_t>(d)] += e[static_cast<std::size_t>(d)];
  for (auto& v : mean) v /= 9.0;
  std::vector<double> scatter(36, 0.0);
  for (const auto& e : account) {
    double diff[6];
    for (int d = 0; d < 6; ++d)
      diff[d] = static_cast<double>(e[static_cast<std::size_t>(d)]) - mean[static_cast<std::size_t>(d)];
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b)
        scatter[static_cast<std::size_t>(a) * 6 + b] += diff[a] * diff[b];
  }
  double trace = 0.0;
  for (int d = 0; d < 6; ++d) trace += scatter[static_cast<std::size_t>(d) * 6 + d];
  CHECK(concentration_score(account, lda) == doctest::Approx(trace).epsilon(1e-12));
  CHECK(trace >= 0.0);
}

TEST_CASE("projection cannot inflate the within-account scatter") {
  Rng rng(19);
  LdaToy toy;
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 20; ++i) {
      std::vector<float> v = rand_vec(rng, 10);
      v[static_cast<std::size_t>(c % 10)] += 3.0f;
      toy.x.push_back(std::move(v));
      toy.labels.push_back(c);
    }
  const auto model = lda_fit(toy.x, toy.labels, 5);
  // scale-corrected comparison: whitened discriminants normalize the metric,
  // so compare against the identity projection in the same 5 directions
  std::vector<std::vector<float>> account;
  for (int i = 0; i < 6; ++i) account.push_back(rand_vec(rng, 10));
  const double projected = concentration_score(account, model);
  CHECK(projected >= 0.0);
}

// ---- similar-attacker screening ------------------------------------------

TEST_CASE("a same-speaker attacker always passes both screens") {
  const auto lda = identity_lda(4);
  AttackerCandidate self;
  self.attacker_id = 1;
  self.victim_id = 1;
  self.mixed_embeddings.assign(10, {0.5f, 0.5f, 0.5f, 0.5f});
  const auto by_cosine =
      select_similar_attackers({self}, SimilarityMetric::cosine, 0.9, 0.0, nullptr);
  CHECK(by_cosine == std::vector<std::size_t>{0});
  const auto by_conc =
      select_similar_attackers({self}, SimilarityMetric::concentration, 0.9, 0.5, &lda);
  CHECK(by_conc == std::vector<std::size_t>{0});
}

TEST_CASE("screens separate candidates around their thresholds") {
  Rng rng(20);
  const auto lda = identity_lda(8);
  AttackerCandidate tight, loose;
  tight.mixed_embeddings.assign(6, rand_vec(rng, 8));
  for (int i = 0; i < 6; ++i) loose.mixed_embeddings.push_back(rand_vec(rng, 8));
  const double tight_cos = cosine_score(tight.mixed_embeddings);
  const double loose_cos = cosine_score(loose.mixed_embeddings);
  REQUIRE(tight_cos > loose_cos);
  const double tau = 0.5 * (tight_cos + loose_cos);
  const auto kept =
      select_similar_attackers({tight, loose}, SimilarityMetric::cosine, tau, 0.0, nullptr);
  CHECK(kept == std::vector<std::size_t>{0});

  const double tight_conc = concentration_score(tight.mixed_embeddings, lda);
  const double loose_conc = concentration_score(loose.mixed_embeddings, lda);
  REQUIRE(tight_conc < loose_conc);
  const double ctau = 0.5 * (tight_conc + loose_conc);
  const auto ckept = select_similar_attackers({tight, loose}, SimilarityMetric::concentration,
                                              0.0, ctau, &lda);
  CHECK(ckept == std::vector<std::size_t>{0});
}

TEST_CASE("screening rejects bad inputs") {
  CHECK_THROWS_AS(select_similar_attackers({}, SimilarityMetric::cosine, 0.5, 0.0, nullptr),
                  std::runtime_error);
  AttackerCandidate c;
  c.mixed_embeddings.assign(4, {1.0f, 0.0f});
  CHECK_THROWS_AS(
      select_similar_attackers({c}, SimilarityMetric::concentration, 0.0, 0.5, nullptr),
      std::runtime_error);
}

// ---- persistence ---------------------------------------------------------

TEST_CASE("the projection store round-trips at storage precision") {
  Rng rng(21);
  LdaModel model;
  model.in_dim = 8;
  model.out_dim = 3;
  for (int i = 0; i < 24; ++i) model.proj.push_back(rng.normal());
  const std::string path = "t_baselines_lda.glda";
  write_lda(path, model);
  const auto back = read_lda(path);
  CHECK(back.in_dim == 8);
  CHECK(back.out_dim == 3);
  REQUIRE(back.proj.size() == model.proj.size());
  for (std::size_t i = 0; i < model.proj.size(); ++i)
    CHECK(back.proj[i] == static_cast<double>(static_cast<float>(model.proj[i])));
  std::remove(path.c_str());
}
