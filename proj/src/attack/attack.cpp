#include "gsim/attack/attack.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gsim/util/parallel.hpp"
#include "gsim/util/rng.hpp"

namespace gsim {

namespace {
constexpr std::uint64_t kMitmTag = 0x6D69746D706C616EULL;
}

MitmPlan make_mitm_plan(int victim_id, int attacker_id, int m, std::uint64_t seed) {
  if (m < 2) throw std::runtime_error("mitm plan: need m >= 2");
  if (victim_id == attacker_id)
    throw std::runtime_error("mitm plan: attacker cannot target itself");
  MitmPlan plan;
  plan.victim_id = victim_id;
  plan.attacker_id = attacker_id;
  Rng rng(mix_seed(seed, kMitmTag, static_cast<std::uint64_t>(victim_id),
                   static_cast<std::uint64_t>(attacker_id)));
  auto picks = rng.sample_indices(static_cast<std::size_t>(m),
                                  static_cast<std::size_t>(m / 2));
  plan.replaced_files.assign(picks.begin(), picks.end());
  std::sort(plan.replaced_files.begin(), plan.replaced_files.end());
  return plan;
}

MixedRegistration apply_mitm(const std::vector<std::vector<float>>& victim_files,
                             const std::vector<std::vector<float>>& attacker_files,
                             const MitmPlan& plan) {
  const int m = static_cast<int>(victim_files.size());
  const int replace = static_cast<int>(plan.replaced_files.size());
  if (static_cast<int>(attacker_files.size()) < replace)
    throw std::runtime_error("apply_mitm: attacker has too few files");
  for (int idx : plan.replaced_files)
    if (idx < 0 || idx >= m)
      throw std::runtime_error("apply_mitm: replaced index out of range");

  MixedRegistration out;
  for (int f = 0; f < m; ++f) {
    if (std::find(plan.replaced_files.begin(), plan.replaced_files.end(), f) !=
        plan.replaced_files.end())
      continue;
    out.files.push_back(victim_files[static_cast<std::size_t>(f)]);
    out.attacker_origin.push_back(0);
  }
  for (int f = 0; f < replace; ++f) {
    out.files.push_back(attacker_files[static_cast<std::size_t>(f)]);
    out.attacker_origin.push_back(1);
  }
  return out;
}

AttackOutcome attack_success_rate(const std::vector<AccountRecord>& attacked_accounts,
                                  const std::vector<std::vector<float>>& attacker_probe_features,
                                  const EmbedderModel& model, const AuthConfig& cfg) {
  if (attacker_probe_features.empty())
    throw std::runtime_error("attack_success_rate: no held-out probes");

  std::vector<std::vector<float>> probes(attacker_probe_features.size());
  parallel_for(probes.size(), [&](std::size_t i) {
    probes[i] = embed(model, attacker_probe_features[i]);
  });

  AttackOutcome out;
  out.victim_success.assign(attacked_accounts.size(), 0);
  std::vector<int> accepted(attacked_accounts.size(), 0);
  parallel_for(attacked_accounts.size(), [&](std::size_t v) {
    for (const auto& p : probes)
      if (authenticate(attacked_accounts[v], p, cfg)) ++accepted[v];
    out.victim_success[v] = accepted[v] > 0 ? 1 : 0;
  });

  long succ = 0, acc = 0;
  for (std::size_t v = 0; v < attacked_accounts.size(); ++v) {
    succ += out.victim_success[v];
    acc += accepted[v];
  }
  const auto nv = static_cast<double>(attacked_accounts.size());
  out.success_rate = attacked_accounts.empty() ? 0.0 : static_cast<double>(succ) / nv;
  out.per_probe_rate = attacked_accounts.empty()
                           ? 0.0
                           : static_cast<double>(acc) / (nv * probes.size());
  return out;
}

void write_attack_plans(const std::string& path, const std::vector<MitmPlan>& plans) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("attack plans: cannot open for write: " + path);
  for (const auto& p : plans) {
    os << p.victim_id << ' ' << p.attacker_id << ' ';
    for (std::size_t i = 0; i < p.replaced_files.size(); ++i) {
      if (i) os << ',';
      os << p.replaced_files[i];
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("attack plans: write failed: " + path);
}

std::vector<MitmPlan> read_attack_plans(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("attack plans: cannot open for read: " + path);
  std::vector<MitmPlan> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MitmPlan p;
    std::string idx_list;
    if (!(ss >> p.victim_id >> p.attacker_id >> idx_list))
      throw std::runtime_error("attack plans: malformed line in " + path + ": " + line);
    std::istringstream il(idx_list);
    std::string tok;
    while (std::getline(il, tok, ',')) p.replaced_files.push_back(std::stoi(tok));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace gsim
