#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsim/auth/auth.hpp"
#include "gsim/speech/embedder.hpp"

namespace gsim {

// Registration substitution: half of the victim's files are replaced by
// the attacker's at enrollment.
struct MitmPlan {
  int victim_id = -1;
  int attacker_id = -1;
  double fraction = 0.5;            // fixed 1/2 in the threat model
  std::vector<int> replaced_files;  // victim file indices dropped, floor(m/2) of them
};

MitmPlan make_mitm_plan(int victim_id, int attacker_id, int m, std::uint64_t seed);

struct MixedRegistration {
  std::vector<std::vector<float>> files;      // exactly m entries
  std::vector<std::uint8_t> attacker_origin;  // 1 where the file is the attacker's
};

// Output = the victim files not listed in the plan (ascending) followed by
// the first floor(m/2) attacker files; remaining attacker files stay held
// out for probing.
MixedRegistration apply_mitm(const std::vector<std::vector<float>>& victim_files,
                             const std::vector<std::vector<float>>& attacker_files,
                             const MitmPlan& plan);

struct AttackOutcome {
  std::vector<std::uint8_t> victim_success;  // >=1 attacker probe accepted
  double success_rate = 0.0;                 // successes / victims
  double per_probe_rate = 0.0;               // accepted probes / all probes
};

AttackOutcome attack_success_rate(const std::vector<AccountRecord>& attacked_accounts,
                                  const std::vector<std::vector<float>>& attacker_probe_features,
                                  const EmbedderModel& model, const AuthConfig& cfg);

// Attack plan record: "victim_id attacker_id i,j,k" (replaced indices).
void write_attack_plans(const std::string& path, const std::vector<MitmPlan>& plans);
std::vector<MitmPlan> read_attack_plans(const std::string& path);

}  // namespace gsim
