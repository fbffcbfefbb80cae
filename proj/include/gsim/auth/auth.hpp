#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsim/speech/embedder.hpp"

namespace gsim {

enum class AccountStatus : std::uint8_t { normal = 0, attacked = 1 };

struct AccountRecord {
  int id = 0;
  std::vector<std::vector<float>> embeddings;  // m stored 512-vectors
  std::vector<float> average;                  // normalized mean of the stored set
  AccountStatus status = AccountStatus::normal;
  // Provenance per stored embedding (1 = attacker-origin); nonempty only
  // for attacked accounts. The defense training stage needs it.
  std::vector<std::uint8_t> attacker_origin;
};

// average = normalize(mean of embeddings), accumulated in 64-bit. A zero
// mean (antipodal registrations) has no direction and is rejected.
AccountRecord register_account(int id, std::vector<std::vector<float>> embeddings,
                               AccountStatus status,
                               std::vector<std::uint8_t> attacker_origin = {});

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

struct AuthConfig {
  double tau = 0.0;
  bool calibrated = false;
  double eer = 0.0;
  bool overlap_warning = false;  // set when the calibrated EER is >= 0.5
};

// accept iff cosine(probe, account average) >= tau
bool authenticate(const AccountRecord& account, const std::vector<float>& probe,
                  const AuthConfig& cfg);

// tau at the equal-error-rate point of the two empirical similarity
// distributions (accept iff score >= tau); ties broken toward the lower
// tau.
AuthConfig calibrate_threshold(const std::vector<double>& genuine,
                               const std::vector<double>& impostor);

struct VerificationMetrics {
  double accuracy = 0.0;        // correct accept/reject over all trials
  double genuine_accept = 0.0;  // genuine trials accepted
  double impostor_reject = 0.0; // impostor trials rejected
  int genuine_trials = 0;
  int impostor_trials = 0;
};

// Balanced genuine/impostor trials over held-out speakers: each speaker's
// account is registered from its m corpus files; genuine probes are fresh
// recordings, impostor probes come from the next speaker in the list.
VerificationMetrics verification_accuracy(const EmbedderModel& model, const Corpus& corpus,
                                          const std::vector<int>& eval_speakers,
                                          const AuthConfig& cfg, int probes_per_speaker);

// Embedding block ("GEMB"): magic, u32 version, u32 count, u32 dim=512,
// little-endian 32-bit reals, row-major.
void write_embeddings(const std::string& path, const std::vector<std::vector<float>>& e);
std::vector<std::vector<float>> read_embeddings(const std::string& path);

// Account store: one line per account, "account_id status embedding_path".
struct AccountStoreEntry {
  int account_id = 0;
  AccountStatus status = AccountStatus::normal;
  std::string embedding_path;
};

void write_account_store(const std::string& path, const std::vector<AccountStoreEntry>& entries);
std::vector<AccountStoreEntry> read_account_store(const std::string& path);

}  // namespace gsim
