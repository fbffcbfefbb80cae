#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsim/attack/attack.hpp"
#include "gsim/auth/auth.hpp"
#include "gsim/baselines/baselines.hpp"
#include "gsim/defense/guardian.hpp"
#include "gsim/speech/corpus.hpp"
#include "gsim/speech/embedder.hpp"

namespace gsim {

// Reproducible end-to-end runner: one config fixes the corpus, the deployed
// and in-house embedders, the attack populations, the detector builds, and
// every derived seed, so a rerun regenerates identical bytes.

struct ExperimentConfig {
  // corpus and speaker roles; roles are contiguous index ranges in the
  // order train, val, eval, attackers
  int speakers = 655;
  int files_per_speaker = 10;
  double noise = 0.35;
  std::uint64_t corpus_seed = 7;
  int train_speakers = 200;
  int val_speakers = 50;
  int eval_speakers = 400;
  int attacker_speakers = 5;

  // embedder poisoning rate and the rebalance multiplier; the in-house
  // model count is round(1 / (epsilon * lambda))
  double lambda = 0.05;
  double epsilon = 5.0;

  TripletConfig triplet;
  GuardianConfig guardian;

  // deployed-model authentication; when auth.calibrated is false the runner
  // calibrates tau per deployed model on the validation speakers
  AuthConfig auth;
  int probes_per_speaker = 2;

  // attacked share of the evaluation populations; the high-share victim set
  // extends the low-share one
  double eval_attacked_low = 0.05;
  double eval_attacked_high = 0.10;

  bool ablate_bias = false;      // keep the raw in-house pool (no rebalance)
  bool ablate_augment = false;   // single 512-d grids instead of pairs
  bool ablate_ensemble = false;  // one pair thresholded at 1/2, no KNN step

  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";

  void validate() const;
};

// Flat key=value text, one entry per line, '#' comments and blank lines
// allowed. Unknown and duplicate keys are rejected; doubles round-trip
// losslessly.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

// FNV-1a over the serialized form.
std::uint64_t config_hash(const ExperimentConfig& cfg);

struct MetricsReport {
  std::string scenario;
  int true_attacked = 0;   // attacked accounts flagged attacked
  int false_normal = 0;    // attacked accounts missed
  int false_attacked = 0;  // normal accounts flagged attacked
  int true_normal = 0;     // normal accounts passed
  double accuracy = 0.0;   // correct verdicts / all accounts
  double recall = 0.0;     // flagged attacked / all attacked
  double fpr = 0.0;        // flagged normal / all normal
  double attack_success = 0.0;  // victim-level MiTM login success, 0 if n/a
  std::uint64_t seed = 0;
  double runtime_seconds = 0.0;  // informational; never serialized
};

// Vacuously perfect classes (no attacked / no normal accounts) report
// recall 1 and fpr 0.
MetricsReport compute_metrics(const std::vector<GuardianLabel>& predicted,
                              const std::vector<GuardianLabel>& truth);

enum class ReportFormat { csv, jsonl };

// csv: fixed header scenario,accuracy,recall,fpr,attack_success,seed.
// jsonl: one object per line, fixed key order, confusion counts included.
// Doubles print as shortest-exact %.17g, so a parse-back is lossless.
std::string format_reports(const std::vector<MetricsReport>& reports, ReportFormat fmt);
void emit_report(const std::vector<MetricsReport>& reports, ReportFormat fmt,
                 const std::string& path);
std::vector<MetricsReport> parse_report_csv(const std::string& text);

// Binary PGM (P5, maxval 255, one byte per cell). Grids in [0,1] scale by
// 255; grids with values above 1 must lie in [0,255] and round directly.
void emit_heatmap(const std::vector<double>& grid, int rows, int cols,
                  const std::string& path);

// A stage failure carries the stage name; partial artifacts stay on disk.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error(stage_name + ": " + what), stage(std::move(stage_name)) {}
};

// ---- pipeline stages (exposed so heavyweight suites can share one build) --

struct SpeakerRoles {
  std::vector<int> train, val, eval, attackers;
};
SpeakerRoles speaker_roles(const ExperimentConfig& cfg);

struct DeployedModel {
  EmbedderModel model;
  AuthConfig auth;
  VerificationMetrics verification;  // filled only when verify was requested
};

// Trains one embedder (poison may be null) and calibrates tau on the
// validation speakers unless cfg.auth arrives pre-calibrated.
DeployedModel train_deployed(const ExperimentConfig& cfg, const Corpus& corpus,
                             const SpeakerRoles& roles, const PoisonMap* poison,
                             std::uint64_t seed, bool verify);

struct EvalPopulation {
  std::vector<AccountRecord> accounts;  // registered through the deployed model
  std::vector<GuardianLabel> truth;     // parallel to accounts
  std::vector<MitmPlan> plans;          // one per attacked account
  AttackOutcome attack;                 // attacker probe success on the victims
};

// share of accounts attacked; victims are a prefix of one seeded permutation
// of the eval speakers, so a larger share extends a smaller one's victim set.
EvalPopulation build_eval_population(const ExperimentConfig& cfg, const Corpus& corpus,
                                     const SpeakerRoles& roles, const DeployedModel& deployed,
                                     double share);

struct InhouseBuild {
  std::vector<EmbedderModel> embedders;
  std::vector<PoisonMap> poisons;     // parallel to embedders
  std::vector<ModelAccounts> models;  // registered accounts per embedder
  std::vector<AccountRecord> balanced;
};

// round(1/(eps*lambda)) embedders, each poisoned at lambda with disjoint
// victim sets and its own attacker speaker, then the rebalanced account set
// (pass-through when ablate_bias).
InhouseBuild build_inhouse(const ExperimentConfig& cfg, const Corpus& corpus,
                           const SpeakerRoles& roles);

struct GuardianBuild {
  GuardianTrainResult trained;
  std::vector<ProbabilityPoint> references;
  GuardianConfig cfg;  // the effective per-variant settings
};

GuardianBuild build_guardian(const ExperimentConfig& cfg,
                             const std::vector<AccountRecord>& balanced);

MetricsReport evaluate_guardian(const ExperimentConfig& cfg, const GuardianBuild& guardian,
                                const EvalPopulation& population, const std::string& scenario);

struct BaselineBuild {
  Knn512Model knn;
  SvmModel svm;
  FcModel fc;
  int knn_k = 11;
};

// Per-embedding training set from the same account split, rebalanced 1:1
// (every attacked-account embedding, equally many sampled normal ones).
BaselineBuild build_baselines(const ExperimentConfig& cfg,
                              const std::vector<AccountRecord>& balanced);

MetricsReport evaluate_baseline(const ExperimentConfig& cfg, const BaselineBuild& baselines,
                                DetectorKind kind, const EvalPopulation& population,
                                const std::string& scenario);

struct ExperimentResult {
  std::vector<MetricsReport> reports;  // filled only by the evaluation phase
  std::uint64_t config_hash_value = 0;
  std::string out_dir;
};

// Phase masks; later phases pull in what they depend on.
enum RunPhases : unsigned {
  kRunEmbedder = 1u << 0,                // deployed clean + poisoned embedders
  kRunAttack = (1u << 1) | kRunEmbedder,  // attack populations and plans
  kRunGuardian = 1u << 2,                // in-house build + Guardian training
  kRunEvaluate = (1u << 3) | kRunAttack | kRunGuardian,
};

// Deterministic pipeline with persistence into cfg.out_dir; holds an
// exclusive lock there. Every selected phase recomputes its inputs from the
// config, so any phase subset of the same config writes identical bytes.
ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned phases = kRunEvaluate);

// Materializes the corpus to out_dir/features plus an utterance manifest
// whose account labels name the speaker roles.
void synth_data(const ExperimentConfig& cfg);

}  // namespace gsim
