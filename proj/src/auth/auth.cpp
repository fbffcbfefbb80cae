#include "gsim/auth/auth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gsim/util/binio.hpp"
#include "gsim/util/parallel.hpp"

namespace gsim {

AccountRecord register_account(int id, std::vector<std::vector<float>> embeddings,
                               AccountStatus status,
                               std::vector<std::uint8_t> attacker_origin) {
  if (embeddings.size() < 2)
    throw std::runtime_error("register: need at least 2 embeddings");
  const std::size_t dim = embeddings.front().size();
  for (const auto& e : embeddings)
    if (e.size() != dim) throw std::runtime_error("register: inconsistent embedding sizes");
  if (!attacker_origin.empty() && attacker_origin.size() != embeddings.size())
    throw std::runtime_error("register: provenance length mismatch");

  std::vector<double> mean(dim, 0.0);
  for (const auto& e : embeddings)
    for (std::size_t i = 0; i < dim; ++i) mean[i] += static_cast<double>(e[i]);
  double n2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    mean[i] /= static_cast<double>(embeddings.size());
    n2 += mean[i] * mean[i];
  }
  const double norm = std::sqrt(n2);
  if (norm < 1e-9)
    throw std::runtime_error("register: degenerate registration (zero mean embedding)");

  AccountRecord rec;
  rec.id = id;
  rec.embeddings = std::move(embeddings);
  rec.status = status;
  rec.attacker_origin = std::move(attacker_origin);
  rec.average.resize(dim);
  for (std::size_t i = 0; i < dim; ++i)
    rec.average[i] = static_cast<float>(mean[i] / norm);
  return rec;
}

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw std::runtime_error("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::runtime_error("cosine: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

bool authenticate(const AccountRecord& account, const std::vector<float>& probe,
                  const AuthConfig& cfg) {
  return cosine_similarity(probe, account.average) >= cfg.tau;
}

AuthConfig calibrate_threshold(const std::vector<double>& genuine,
                               const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty())
    throw std::runtime_error("calibrate: both similarity sets must be nonempty");

  // Exhaustive sweep over every decision boundary (accept iff score >=
  // tau): each observed value and the first representable value above it,
  // so the lower-tau tie break can settle just above the top impostor.
  std::vector<double> cuts;
  cuts.reserve(2 * (genuine.size() + impostor.size()));
  for (double v : genuine) {
    cuts.push_back(v);
    cuts.push_back(std::nextafter(v, 2.0));
  }
  for (double v : impostor) {
    cuts.push_back(v);
    cuts.push_back(std::nextafter(v, 2.0));
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  double best_tau = cuts.front();
  double best_gap = 2.0;
  double best_eer = 1.0;
  for (double tau : cuts) {
    std::size_t fr = 0, fa = 0;
    for (double g : genuine)
      if (g < tau) ++fr;
    for (double im : impostor)
      if (im >= tau) ++fa;
    const double frr = static_cast<double>(fr) / static_cast<double>(genuine.size());
    const double far = static_cast<double>(fa) / static_cast<double>(impostor.size());
    const double gap = std::abs(frr - far);
    if (gap < best_gap) {  // ties keep the first (lowest) tau
      best_gap = gap;
      best_tau = tau;
      best_eer = 0.5 * (frr + far);
    }
  }

  AuthConfig cfg;
  cfg.tau = best_tau;
  cfg.calibrated = true;
  cfg.eer = best_eer;
  cfg.overlap_warning = best_eer >= 0.5;
  return cfg;
}

VerificationMetrics verification_accuracy(const EmbedderModel& model, const Corpus& corpus,
                                          const std::vector<int>& eval_speakers,
                                          const AuthConfig& cfg, int probes_per_speaker) {
  if (eval_speakers.size() < 2)
    throw std::runtime_error("verification: need at least 2 eval speakers");
  const int m = corpus.files_per_speaker();
  const std::size_t n = eval_speakers.size();

  // Per-speaker work is independent; results land in per-index slots.
  std::vector<int> genuine_ok(n, 0), impostor_ok(n, 0);
  parallel_for(n, [&](std::size_t si) {
    const int spk = eval_speakers[si];
    std::vector<std::vector<float>> regs;
    regs.reserve(static_cast<std::size_t>(m));
    for (int f = 0; f < m; ++f) regs.push_back(embed(model, corpus.features(spk, f)));
    const AccountRecord acct =
        register_account(spk, std::move(regs), AccountStatus::normal);
    const int impostor_spk = eval_speakers[(si + 1) % n];
    for (int p = 0; p < probes_per_speaker; ++p) {
      const auto gp = embed(model, corpus.probe_features(spk, p));
      if (authenticate(acct, gp, cfg)) ++genuine_ok[si];
      const auto ip = embed(model, corpus.probe_features(impostor_spk, probes_per_speaker + p));
      if (!authenticate(acct, ip, cfg)) ++impostor_ok[si];
    }
  });

  VerificationMetrics vm;
  vm.genuine_trials = static_cast<int>(n) * probes_per_speaker;
  vm.impostor_trials = vm.genuine_trials;
  long ga = 0, ir = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ga += genuine_ok[i];
    ir += impostor_ok[i];
  }
  vm.genuine_accept = static_cast<double>(ga) / vm.genuine_trials;
  vm.impostor_reject = static_cast<double>(ir) / vm.impostor_trials;
  vm.accuracy = static_cast<double>(ga + ir) / (vm.genuine_trials + vm.impostor_trials);
  return vm;
}

void write_embeddings(const std::string& path, const std::vector<std::vector<float>>& e) {
  if (e.empty()) throw std::runtime_error("embeddings: nothing to write to " + path);
  std::ofstream os = open_out(path);
  write_magic(os, "GEMB");
  write_u32(os, 1);
  write_u32(os, static_cast<std::uint32_t>(e.size()));
  write_u32(os, static_cast<std::uint32_t>(e.front().size()));
  for (const auto& row : e) {
    if (row.size() != e.front().size())
      throw std::runtime_error("embeddings: ragged rows in " + path);
    for (float v : row) write_f32(os, v);
  }
  if (!os) throw std::runtime_error("embeddings: write failed: " + path);
}

std::vector<std::vector<float>> read_embeddings(const std::string& path) {
  std::ifstream is = open_in(path);
  expect_magic(is, "GEMB", path);
  if (read_u32(is) != 1) throw std::runtime_error("embeddings: unsupported version in " + path);
  const std::uint32_t count = read_u32(is);
  const std::uint32_t dim = read_u32(is);
  std::vector<std::vector<float>> out(count, std::vector<float>(dim));
  for (auto& row : out)
    for (float& v : row) v = read_f32(is);
  return out;
}

void write_account_store(const std::string& path,
                         const std::vector<AccountStoreEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("account store: cannot open for write: " + path);
  for (const auto& e : entries)
    os << e.account_id << ' '
       << (e.status == AccountStatus::attacked ? "attacked" : "normal") << ' '
       << e.embedding_path << '\n';
  if (!os) throw std::runtime_error("account store: write failed: " + path);
}

std::vector<AccountStoreEntry> read_account_store(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("account store: cannot open for read: " + path);
  std::vector<AccountStoreEntry> out;
  std::string line, status;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    AccountStoreEntry e;
    if (!(ss >> e.account_id >> status >> e.embedding_path) ||
        (status != "normal" && status != "attacked"))
      throw std::runtime_error("account store: malformed line in " + path + ": " + line);
    e.status = status == "attacked" ? AccountStatus::attacked : AccountStatus::normal;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace gsim
