#include "gsim/exp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gsim/nn/checkpoint.hpp"
#include "gsim/util/parallel.hpp"
#include "gsim/util/rng.hpp"

namespace fs = std::filesystem;

namespace gsim {

namespace {

constexpr std::uint64_t kDeployCleanTag = 0x6465706C636C6EULL;
constexpr std::uint64_t kDeployPoisonTag = 0x6465706C706F69ULL;
constexpr std::uint64_t kDeployPlanTag = 0x6465706C706C6EULL;
constexpr std::uint64_t kEvalVictimTag = 0x6576766963ULL;
constexpr std::uint64_t kEvalMitmTag = 0x65766D69746DULL;
constexpr std::uint64_t kInhouseVictimTag = 0x6968766963ULL;
constexpr std::uint64_t kInhouseTrainTag = 0x696874726EULL;
constexpr std::uint64_t kInhouseMitmTag = 0x69686D69746DULL;
constexpr std::uint64_t kBalanceTag = 0x62616C616E6365ULL;
constexpr std::uint64_t kGuardianTrainTag = 0x677264747261696EULL;
constexpr std::uint64_t kBaselineTag = 0x6273726562616CULL;
constexpr std::uint64_t kFcTag = 0x62736663313400ULL;

// shortest decimal form that parses back to the same double
std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

double parse_double_str(const std::string& s, const std::string& key) {
  if (s.empty()) throw std::runtime_error("config: empty value for " + key);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    throw std::runtime_error("config: bad number '" + s + "' for " + key);
  return v;
}

int parse_int_str(const std::string& s, const std::string& key) {
  const double v = parse_double_str(s, key);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    throw std::runtime_error("config: expected integer for " + key);
  return i;
}

std::uint64_t parse_u64_str(const std::string& s, const std::string& key) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw std::runtime_error("config: expected unsigned integer for " + key);
  return std::strtoull(s.c_str(), nullptr, 10);
}

bool parse_bool_str(const std::string& s, const std::string& key) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw std::runtime_error("config: expected 0 or 1 for " + key);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (speakers < 1 || train_speakers < 2 || val_speakers < 2 || eval_speakers < 2 ||
      attacker_speakers < 1)
    throw std::runtime_error("config: speaker role counts must be positive");
  if (train_speakers + val_speakers + eval_speakers + attacker_speakers > speakers)
    throw std::runtime_error("config: speaker roles exceed the corpus");
  if (files_per_speaker < 2) throw std::runtime_error("config: need at least two files per speaker");
  if (!(noise > 0.0)) throw std::runtime_error("config: noise must be positive");
  if (probes_per_speaker < 1) throw std::runtime_error("config: need at least one probe");

  const BiasReductionConfig bias{lambda, epsilon};
  bias.validate();
  if (attacker_speakers < 1 + bias.num_models())
    throw std::runtime_error("config: need one attacker per in-house model plus the deployed one");
  if (std::llround(lambda * train_speakers) < 1)
    throw std::runtime_error("config: lambda rounds to zero victims per model");
  if (bias.num_models() * std::llround(lambda * train_speakers) > train_speakers)
    throw std::runtime_error("config: disjoint victim sets exceed the training speakers");

  if (!(eval_attacked_low > 0.0) || !(eval_attacked_high < 1.0) ||
      eval_attacked_low > eval_attacked_high)
    throw std::runtime_error("config: attacked shares must satisfy 0 < low <= high < 1");
  if (std::llround(eval_attacked_low * eval_speakers) < 1)
    throw std::runtime_error("config: low attacked share rounds to zero accounts");
  if (std::llround(eval_attacked_high * eval_speakers) >= eval_speakers)
    throw std::runtime_error("config: high attacked share leaves no normal accounts");

  if (guardian.k < 1 || guardian.k % 2 == 0)
    throw std::runtime_error("config: guardian K must be odd and positive");
  if (guardian.epochs < 1 || guardian.batch_size < 1 || !(guardian.lr > 0.0))
    throw std::runtime_error("config: bad guardian training settings");
  if (guardian.dropout_rate < 0.0 || guardian.dropout_rate >= 1.0)
    throw std::runtime_error("config: dropout must be in [0,1)");
  if (triplet.epochs < 1 || triplet.batch_accounts < 2 || triplet.utterances_per_account < 2 ||
      triplet.negatives_per_anchor < 1 || !(triplet.lr > 0.0) || !(triplet.alpha > 0.0))
    throw std::runtime_error("config: bad embedder training settings");
  if (out_dir.empty()) throw std::runtime_error("config: output directory must be set");
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "corpus.speakers=" << c.speakers << "\n"
     << "corpus.files_per_speaker=" << c.files_per_speaker << "\n"
     << "corpus.noise=" << fmt_double(c.noise) << "\n"
     << "corpus.seed=" << c.corpus_seed << "\n"
     << "roles.train=" << c.train_speakers << "\n"
     << "roles.val=" << c.val_speakers << "\n"
     << "roles.eval=" << c.eval_speakers << "\n"
     << "roles.attackers=" << c.attacker_speakers << "\n"
     << "poison.lambda=" << fmt_double(c.lambda) << "\n"
     << "poison.epsilon=" << fmt_double(c.epsilon) << "\n"
     << "triplet.alpha=" << fmt_double(c.triplet.alpha) << "\n"
     << "triplet.batch_accounts=" << c.triplet.batch_accounts << "\n"
     << "triplet.utterances_per_account=" << c.triplet.utterances_per_account << "\n"
     << "triplet.negatives_per_anchor=" << c.triplet.negatives_per_anchor << "\n"
     << "triplet.epochs=" << c.triplet.epochs << "\n"
     << "triplet.lr=" << fmt_double(c.triplet.lr) << "\n"
     << "guardian.k=" << c.guardian.k << "\n"
     << "guardian.epochs=" << c.guardian.epochs << "\n"
     << "guardian.batch_size=" << c.guardian.batch_size << "\n"
     << "guardian.lr=" << fmt_double(c.guardian.lr) << "\n"
     << "guardian.dropout=" << fmt_double(c.guardian.dropout_rate) << "\n"
     << "guardian.expected_attack_fraction=" << fmt_double(c.guardian.expected_attack_fraction)
     << "\n"
     << "guardian.pairing_seed=" << c.guardian.pairing_seed << "\n"
     << "guardian.norm_mode="
     << (c.guardian.norm_mode == NormalizationMode::joint ? "joint" : "per_vector") << "\n"
     << "guardian.use_interleave=" << (c.guardian.use_interleave ? 1 : 0) << "\n"
     << "auth.tau=" << fmt_double(c.auth.tau) << "\n"
     << "auth.calibrated=" << (c.auth.calibrated ? 1 : 0) << "\n"
     << "auth.probes_per_speaker=" << c.probes_per_speaker << "\n"
     << "eval.attacked_low=" << fmt_double(c.eval_attacked_low) << "\n"
     << "eval.attacked_high=" << fmt_double(c.eval_attacked_high) << "\n"
     << "ablate.bias=" << (c.ablate_bias ? 1 : 0) << "\n"
     << "ablate.augment=" << (c.ablate_augment ? 1 : 0) << "\n"
     << "ablate.ensemble=" << (c.ablate_ensemble ? 1 : 0) << "\n"
     << "run.seed=" << c.seed << "\n"
     << "run.out_dir=" << c.out_dir << "\n";
  return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw std::runtime_error("config: missing '=' in: " + t);
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (!seen.insert(key).second) throw std::runtime_error("config: duplicate key " + key);

    if (key == "corpus.speakers") c.speakers = parse_int_str(val, key);
    else if (key == "corpus.files_per_speaker") c.files_per_speaker = parse_int_str(val, key);
    else if (key == "corpus.noise") c.noise = parse_double_str(val, key);
    else if (key == "corpus.seed") c.corpus_seed = parse_u64_str(val, key);
    else if (key == "roles.train") c.train_speakers = parse_int_str(val, key);
    else if (key == "roles.val") c.val_speakers = parse_int_str(val, key);
    else if (key == "roles.eval") c.eval_speakers = parse_int_str(val, key);
    else if (key == "roles.attackers") c.attacker_speakers = parse_int_str(val, key);
    else if (key == "poison.lambda") c.lambda = parse_double_str(val, key);
    else if (key == "poison.epsilon") c.epsilon = parse_double_str(val, key);
    else if (key == "triplet.alpha") c.triplet.alpha = parse_double_str(val, key);
    else if (key == "triplet.batch_accounts") c.triplet.batch_accounts = parse_int_str(val, key);
    else if (key == "triplet.utterances_per_account")
      c.triplet.utterances_per_account = parse_int_str(val, key);
    else if (key == "triplet.negatives_per_anchor")
      c.triplet.negatives_per_anchor = parse_int_str(val, key);
    else if (key == "triplet.epochs") c.triplet.epochs = parse_int_str(val, key);
    else if (key == "triplet.lr") c.triplet.lr = parse_double_str(val, key);
    else if (key == "guardian.k") c.guardian.k = parse_int_str(val, key);
    else if (key == "guardian.epochs") c.guardian.epochs = parse_int_str(val, key);
    else if (key == "guardian.batch_size") c.guardian.batch_size = parse_int_str(val, key);
    else if (key == "guardian.lr") c.guardian.lr = parse_double_str(val, key);
    else if (key == "guardian.dropout") c.guardian.dropout_rate = parse_double_str(val, key);
    else if (key == "guardian.expected_attack_fraction")
      c.guardian.expected_attack_fraction = parse_double_str(val, key);
    else if (key == "guardian.pairing_seed") c.guardian.pairing_seed = parse_u64_str(val, key);
    else if (key == "guardian.norm_mode") {
      if (val == "joint") c.guardian.norm_mode = NormalizationMode::joint;
      else if (val == "per_vector") c.guardian.norm_mode = NormalizationMode::per_vector;
      else throw std::runtime_error("config: norm_mode must be joint or per_vector");
    } else if (key == "guardian.use_interleave")
      c.guardian.use_interleave = parse_bool_str(val, key);
    else if (key == "auth.tau") c.auth.tau = parse_double_str(val, key);
    else if (key == "auth.calibrated") c.auth.calibrated = parse_bool_str(val, key);
    else if (key == "auth.probes_per_speaker") c.probes_per_speaker = parse_int_str(val, key);
    else if (key == "eval.attacked_low") c.eval_attacked_low = parse_double_str(val, key);
    else if (key == "eval.attacked_high") c.eval_attacked_high = parse_double_str(val, key);
    else if (key == "ablate.bias") c.ablate_bias = parse_bool_str(val, key);
    else if (key == "ablate.augment") c.ablate_augment = parse_bool_str(val, key);
    else if (key == "ablate.ensemble") c.ablate_ensemble = parse_bool_str(val, key);
    else if (key == "run.seed") c.seed = parse_u64_str(val, key);
    else if (key == "run.out_dir") c.out_dir = val;
    else throw std::runtime_error("config: unknown key " + key);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_config(os.str());
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string s = serialize_config(cfg);
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

MetricsReport compute_metrics(const std::vector<GuardianLabel>& predicted,
                              const std::vector<GuardianLabel>& truth) {
  if (predicted.empty()) throw std::runtime_error("metrics: empty label sequences");
  if (predicted.size() != truth.size())
    throw std::runtime_error("metrics: length mismatch");

  MetricsReport r;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool attacked = truth[i] == GuardianLabel::attacked;
    const bool flagged = predicted[i] == GuardianLabel::attacked;
    r.true_attacked += attacked && flagged;
    r.false_normal += attacked && !flagged;
    r.false_attacked += !attacked && flagged;
    r.true_normal += !attacked && !flagged;
  }
  const int attacked_total = r.true_attacked + r.false_normal;
  const int normal_total = r.false_attacked + r.true_normal;
  r.accuracy = static_cast<double>(r.true_attacked + r.true_normal) /
               static_cast<double>(predicted.size());
  r.recall = attacked_total == 0
                 ? 1.0
                 : static_cast<double>(r.true_attacked) / static_cast<double>(attacked_total);
  r.fpr = normal_total == 0
              ? 0.0
              : static_cast<double>(r.false_attacked) / static_cast<double>(normal_total);
  return r;
}

std::string format_reports(const std::vector<MetricsReport>& reports, ReportFormat fmt) {
  std::ostringstream os;
  if (fmt == ReportFormat::csv) os << "scenario,accuracy,recall,fpr,attack_success,seed\n";
  for (const auto& r : reports) {
    if (r.scenario.find_first_of(",\"\n") != std::string::npos)
      throw std::runtime_error("report: scenario name must not contain commas or newlines");
    if (fmt == ReportFormat::csv) {
      os << r.scenario << ',' << fmt_double(r.accuracy) << ',' << fmt_double(r.recall) << ','
         << fmt_double(r.fpr) << ',' << fmt_double(r.attack_success) << ',' << r.seed << "\n";
    } else {
      os << "{\"scenario\":\"" << r.scenario << "\",\"accuracy\":" << fmt_double(r.accuracy)
         << ",\"recall\":" << fmt_double(r.recall) << ",\"fpr\":" << fmt_double(r.fpr)
         << ",\"attack_success\":" << fmt_double(r.attack_success) << ",\"seed\":" << r.seed
         << ",\"true_attacked\":" << r.true_attacked << ",\"false_normal\":" << r.false_normal
         << ",\"false_attacked\":" << r.false_attacked << ",\"true_normal\":" << r.true_normal
         << "}\n";
    }
  }
  return os.str();
}

void emit_report(const std::vector<MetricsReport>& reports, ReportFormat fmt,
                 const std::string& path) {
  const std::string body = format_reports(reports, fmt);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("report: cannot open " + path);
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw std::runtime_error("report: write failed: " + path);
}

std::vector<MetricsReport> parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "scenario,accuracy,recall,fpr,attack_success,seed")
    throw std::runtime_error("report: bad csv header");

  std::vector<MetricsReport> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw std::runtime_error("report: bad csv row: " + line);
    MetricsReport r;
    r.scenario = fields[0];
    r.accuracy = parse_double_str(fields[1], "accuracy");
    r.recall = parse_double_str(fields[2], "recall");
    r.fpr = parse_double_str(fields[3], "fpr");
    r.attack_success = parse_double_str(fields[4], "attack_success");
    r.seed = parse_u64_str(fields[5], "seed");
    out.push_back(std::move(r));
  }
  return out;
}

void emit_heatmap(const std::vector<double>& grid, int rows, int cols,
                  const std::string& path) {
  if (rows < 1 || cols < 1 ||
      grid.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
    throw std::runtime_error("heatmap: grid size does not match rows x cols");
  double mx = 0.0;
  for (double v : grid) {
    if (!std::isfinite(v) || v < 0.0 || v > 255.0)
      throw std::runtime_error("heatmap: values must lie in [0,1] or [0,255]");
    mx = std::max(mx, v);
  }
  const bool byte_scaled = mx > 1.0;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("heatmap: cannot open " + path);
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (double v : grid) {
    const auto byte =
        static_cast<unsigned char>(std::llround(byte_scaled ? v : v * 255.0));
    os.put(static_cast<char>(byte));
  }
  if (!os) throw std::runtime_error("heatmap: write failed: " + path);
}

// ---- pipeline stages ------------------------------------------------------

SpeakerRoles speaker_roles(const ExperimentConfig& cfg) {
  SpeakerRoles roles;
  int next = 0;
  for (int i = 0; i < cfg.train_speakers; ++i) roles.train.push_back(next++);
  for (int i = 0; i < cfg.val_speakers; ++i) roles.val.push_back(next++);
  for (int i = 0; i < cfg.eval_speakers; ++i) roles.eval.push_back(next++);
  for (int i = 0; i < cfg.attacker_speakers; ++i) roles.attackers.push_back(next++);
  return roles;
}

DeployedModel train_deployed(const ExperimentConfig& cfg, const Corpus& corpus,
                             const SpeakerRoles& roles, const PoisonMap* poison,
                             std::uint64_t seed, bool verify) {
  DeployedModel out;
  out.model = train_embedder(corpus, roles.train, cfg.triplet, poison, seed);
  if (out.model.diverged)
    std::fprintf(stderr, "train_deployed: warning: embedder training diverged\n");

  if (cfg.auth.calibrated) {
    out.auth = cfg.auth;
  } else {
    const int probes = cfg.probes_per_speaker;
    std::vector<std::vector<double>> gen(roles.val.size()), imp(roles.val.size());
    parallel_for(roles.val.size(), [&](std::size_t i) {
      const int spk = roles.val[i];
      std::vector<std::vector<float>> regs;
      regs.reserve(static_cast<std::size_t>(corpus.files_per_speaker()));
      for (int f = 0; f < corpus.files_per_speaker(); ++f)
        regs.push_back(embed(out.model, corpus.features(spk, f)));
      const auto acct = register_account(spk, std::move(regs), AccountStatus::normal);
      const int other = roles.val[(i + 1) % roles.val.size()];
      for (int p = 0; p < probes; ++p) {
        gen[i].push_back(cosine_similarity(
            embed(out.model, corpus.probe_features(spk, p)), acct.average));
        // the impostor recording indices stay clear of the genuine ones
        imp[i].push_back(cosine_similarity(
            embed(out.model, corpus.probe_features(other, probes + p)), acct.average));
      }
    });
    std::vector<double> genuine, impostor;
    for (std::size_t i = 0; i < roles.val.size(); ++i) {
      genuine.insert(genuine.end(), gen[i].begin(), gen[i].end());
      impostor.insert(impostor.end(), imp[i].begin(), imp[i].end());
    }
    out.auth = calibrate_threshold(genuine, impostor);
  }

  if (verify)
    out.verification = verification_accuracy(out.model, corpus, roles.eval, out.auth,
                                             cfg.probes_per_speaker);
  return out;
}

EvalPopulation build_eval_population(const ExperimentConfig& cfg, const Corpus& corpus,
                                     const SpeakerRoles& roles, const DeployedModel& deployed,
                                     double share) {
  const std::size_t n = roles.eval.size();
  const auto attacked_n = static_cast<std::size_t>(std::llround(share * static_cast<double>(n)));
  if (attacked_n < 1 || attacked_n >= n)
    throw std::runtime_error("population: attacked share out of range");

  // one permutation for every share keeps smaller victim sets prefixes of
  // larger ones
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng victim_rng(mix_seed(cfg.seed, kEvalVictimTag));
  victim_rng.shuffle(order);
  std::set<int> victims;
  for (std::size_t i = 0; i < attacked_n; ++i)
    victims.insert(roles.eval[order[i]]);

  const int attacker = roles.attackers.front();
  const int m = corpus.files_per_speaker();
  std::vector<std::vector<float>> attacker_files;
  for (int f = 0; f < m; ++f) attacker_files.push_back(corpus.features(attacker, f));

  EvalPopulation pop;
  pop.accounts.resize(n);
  pop.truth.resize(n);
  std::vector<MitmPlan> plan_slot(n);
  parallel_for(n, [&](std::size_t i) {
    const int spk = roles.eval[i];
    std::vector<std::vector<float>> files;
    files.reserve(static_cast<std::size_t>(m));
    for (int f = 0; f < m; ++f) files.push_back(corpus.features(spk, f));

    if (victims.count(spk)) {
      const auto plan = make_mitm_plan(spk, attacker, m, mix_seed(cfg.seed, kEvalMitmTag));
      const auto mixed = apply_mitm(files, attacker_files, plan);
      std::vector<std::vector<float>> regs;
      regs.reserve(mixed.files.size());
      for (const auto& f : mixed.files) regs.push_back(embed(deployed.model, f));
      pop.accounts[i] =
          register_account(spk, std::move(regs), AccountStatus::attacked, mixed.attacker_origin);
      pop.truth[i] = GuardianLabel::attacked;
      plan_slot[i] = plan;
    } else {
      std::vector<std::vector<float>> regs;
      regs.reserve(files.size());
      for (const auto& f : files) regs.push_back(embed(deployed.model, f));
      pop.accounts[i] = register_account(spk, std::move(regs), AccountStatus::normal);
      pop.truth[i] = GuardianLabel::normal;
    }
  });

  std::vector<AccountRecord> attacked_accounts;
  for (std::size_t i = 0; i < n; ++i)
    if (pop.truth[i] == GuardianLabel::attacked) {
      pop.plans.push_back(plan_slot[i]);
      attacked_accounts.push_back(pop.accounts[i]);
    }

  std::vector<std::vector<float>> probes;
  for (int p = 0; p < cfg.probes_per_speaker; ++p)
    probes.push_back(corpus.probe_features(attacker, p));
  pop.attack = attack_success_rate(attacked_accounts, probes, deployed.model, deployed.auth);
  return pop;
}

InhouseBuild build_inhouse(const ExperimentConfig& cfg, const Corpus& corpus,
                           const SpeakerRoles& roles) {
  const BiasReductionConfig bias{cfg.lambda, cfg.epsilon};
  const int n_models = bias.num_models();
  const auto per_model =
      static_cast<std::size_t>(std::llround(cfg.lambda * static_cast<double>(roles.train.size())));

  // disjoint victim sets come from one seeded draw split into chunks
  Rng victim_rng(mix_seed(cfg.seed, kInhouseVictimTag));
  const auto picks = victim_rng.sample_indices(roles.train.size(),
                                               per_model * static_cast<std::size_t>(n_models));

  const int m = corpus.files_per_speaker();
  InhouseBuild build;
  for (int model_i = 0; model_i < n_models; ++model_i) {
    const int attacker = roles.attackers[static_cast<std::size_t>(1 + model_i)];
    PoisonMap poison;
    poison.attacker_id = attacker;
    poison.lambda = cfg.lambda;
    for (std::size_t v = 0; v < per_model; ++v)
      poison.victims.insert(
          roles.train[picks[static_cast<std::size_t>(model_i) * per_model + v]]);

    EmbedderModel model = train_embedder(
        corpus, roles.train, cfg.triplet, &poison,
        mix_seed(cfg.seed, kInhouseTrainTag, static_cast<std::uint64_t>(model_i)));

    std::vector<std::vector<float>> attacker_files;
    for (int f = 0; f < m; ++f) attacker_files.push_back(corpus.features(attacker, f));

    ModelAccounts accounts;
    accounts.victim_ids = poison.victims;
    accounts.accounts.resize(roles.train.size());
    parallel_for(roles.train.size(), [&](std::size_t i) {
      const int spk = roles.train[i];
      std::vector<std::vector<float>> files;
      for (int f = 0; f < m; ++f) files.push_back(corpus.features(spk, f));
      if (poison.victims.count(spk)) {
        const auto plan = make_mitm_plan(spk, attacker, m, mix_seed(cfg.seed, kInhouseMitmTag));
        const auto mixed = apply_mitm(files, attacker_files, plan);
        std::vector<std::vector<float>> regs;
        for (const auto& f : mixed.files) regs.push_back(embed(model, f));
        accounts.accounts[i] =
            register_account(spk, std::move(regs), AccountStatus::attacked, mixed.attacker_origin);
      } else {
        std::vector<std::vector<float>> regs;
        for (const auto& f : files) regs.push_back(embed(model, f));
        accounts.accounts[i] = register_account(spk, std::move(regs), AccountStatus::normal);
      }
    });

    build.embedders.push_back(std::move(model));
    build.poisons.push_back(std::move(poison));
    build.models.push_back(std::move(accounts));
  }

  const BiasReductionConfig used =
      cfg.ablate_bias ? BiasReductionConfig{cfg.lambda, 1.0} : bias;
  build.balanced = build_balanced_dataset(build.models, used, mix_seed(cfg.seed, kBalanceTag));
  return build;
}

GuardianBuild build_guardian(const ExperimentConfig& cfg,
                             const std::vector<AccountRecord>& balanced) {
  GuardianBuild out;
  out.cfg = cfg.guardian;
  out.cfg.use_interleave = cfg.guardian.use_interleave && !cfg.ablate_augment;
  // keep the imbalance check aligned with the set actually trained on
  out.cfg.expected_attack_fraction =
      cfg.ablate_bias ? cfg.lambda : cfg.epsilon * cfg.lambda;

  const auto samples = make_training_samples(balanced, out.cfg);
  out.trained = train_guardian(samples, out.cfg, mix_seed(cfg.seed, kGuardianTrainTag));

  out.references.resize(balanced.size());
  parallel_for(balanced.size(), [&](std::size_t i) {
    auto pt = account_point(out.trained.net, balanced[i].embeddings, out.cfg, balanced[i].id);
    pt.label = balanced[i].status == AccountStatus::attacked ? GuardianLabel::attacked
                                                             : GuardianLabel::normal;
    pt.labeled = true;
    out.references[i] = std::move(pt);
  });
  return out;
}

MetricsReport evaluate_guardian(const ExperimentConfig& cfg, const GuardianBuild& guardian,
                                const EvalPopulation& population, const std::string& scenario) {
  std::vector<GuardianLabel> predicted(population.accounts.size());
  parallel_for(population.accounts.size(), [&](std::size_t i) {
    const auto& acct = population.accounts[i];
    const auto verdict =
        cfg.ablate_ensemble
            ? guardian_verdict_no_ensemble(guardian.trained.net, acct.embeddings, guardian.cfg,
                                           acct.id)
            : guardian_verdict(guardian.trained.net, acct.embeddings, guardian.references,
                               guardian.cfg, acct.id);
    predicted[i] = verdict.verdict;
  });
  MetricsReport r = compute_metrics(predicted, population.truth);
  r.scenario = scenario;
  r.attack_success = population.attack.success_rate;
  r.seed = cfg.seed;
  return r;
}

BaselineBuild build_baselines(const ExperimentConfig& cfg,
                              const std::vector<AccountRecord>& balanced) {
  std::vector<std::vector<float>> attacked, normal_pool;
  for (const auto& acct : balanced) {
    auto& dst = acct.status == AccountStatus::attacked ? attacked : normal_pool;
    for (const auto& e : acct.embeddings) dst.push_back(e);
  }
  if (attacked.empty() || normal_pool.empty())
    throw std::runtime_error("baselines: need both account classes in the training split");

  // 1:1 rebalance keeps every attacked-account embedding
  BaselineBuild b;
  b.knn_k = cfg.guardian.k;
  for (const auto& e : attacked) {
    b.knn.train.push_back(e);
    b.knn.labels.push_back(GuardianLabel::attacked);
  }
  Rng rng(mix_seed(cfg.seed, kBaselineTag));
  const std::size_t keep = std::min(normal_pool.size(), attacked.size());
  const auto picks = rng.sample_indices(normal_pool.size(), keep);
  for (auto idx : picks) {
    b.knn.train.push_back(normal_pool[idx]);
    b.knn.labels.push_back(GuardianLabel::normal);
  }

  b.svm = svm_fit(b.knn.train, b.knn.labels, SvmConfig{});
  b.fc = fc_fit(b.knn.train, b.knn.labels, FcConfig{}, mix_seed(cfg.seed, kFcTag));
  return b;
}

MetricsReport evaluate_baseline(const ExperimentConfig& cfg, const BaselineBuild& baselines,
                                DetectorKind kind, const EvalPopulation& population,
                                const std::string& scenario) {
  std::vector<GuardianLabel> predicted(population.accounts.size());
  parallel_for(population.accounts.size(), [&](std::size_t i) {
    const auto& e = population.accounts[i].embeddings;
    switch (kind) {
      case DetectorKind::knn512:
        predicted[i] = knn512_detector(baselines.knn, e, baselines.knn_k);
        break;
      case DetectorKind::svm:
        predicted[i] = svm_detector(baselines.svm, e);
        break;
      case DetectorKind::fc14:
        predicted[i] = fc_detector(baselines.fc, e);
        break;
      default:
        throw std::runtime_error("baselines: detector has no account-level evaluation");
    }
  });
  MetricsReport r = compute_metrics(predicted, population.truth);
  r.scenario = scenario;
  r.attack_success = population.attack.success_rate;
  r.seed = cfg.seed;
  return r;
}

// ---- full runner ----------------------------------------------------------

namespace {

struct DirLock {
  std::string path;
  explicit DirLock(const std::string& dir) : path(dir + "/LOCK") {
    std::FILE* f = std::fopen(path.c_str(), "wx");
    if (!f)
      throw StageError("lock", "output directory is locked by another run: " + dir);
    std::fputs("locked\n", f);
    std::fclose(f);
  }
  ~DirLock() { std::remove(path.c_str()); }
};

struct Manifest {
  std::ofstream os;
  std::uint64_t hash;
  Manifest(const std::string& dir, std::uint64_t h)
      : os(dir + "/MANIFEST.txt", std::ios::trunc), hash(h) {
    if (!os) throw StageError("manifest", "cannot open manifest in " + dir);
  }
  void log(const std::string& rel, std::uint64_t seed) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
    os << rel << " seed=" << seed << " config=" << hex << "\n";
    os.flush();
  }
};

void write_text(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string poison_text(const PoisonMap& p) {
  std::ostringstream os;
  os << "attacker=" << p.attacker_id << "\nlambda=" << fmt_double(p.lambda) << "\nvictims=";
  bool first = true;
  for (int v : p.victims) {
    if (!first) os << ',';
    os << v;
    first = false;
  }
  os << "\n";
  return os.str();
}

template <typename Fn>
auto run_stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned phases) {
  cfg.validate();
  if (phases & (1u << 3)) phases |= (1u << 1) | (1u << 2);
  if (phases & (1u << 1)) phases |= 1u << 0;
  const bool want_embedder = phases & (1u << 0);
  const bool want_attack = phases & (1u << 1);
  const bool want_guardian = phases & (1u << 2);
  const bool want_evaluate = phases & (1u << 3);
  fs::create_directories(cfg.out_dir);
  DirLock lock(cfg.out_dir);

  ExperimentResult result;
  result.out_dir = cfg.out_dir;
  result.config_hash_value = config_hash(cfg);
  Manifest manifest(cfg.out_dir, result.config_hash_value);
  const auto path = [&](const std::string& rel) { return cfg.out_dir + "/" + rel; };

  run_stage("config", [&] {
    write_text(path("config.txt"), serialize_config(cfg));
    manifest.log("config.txt", cfg.seed);
  });

  const Corpus corpus = run_stage("corpus", [&] {
    CorpusConfig cc;
    cc.num_speakers = cfg.speakers;
    cc.files_per_speaker = cfg.files_per_speaker;
    cc.noise_scale = cfg.noise;
    cc.seed = cfg.corpus_seed;
    return Corpus(cc);
  });
  const SpeakerRoles roles = speaker_roles(cfg);

  DeployedModel clean, poisoned;
  if (want_embedder) run_stage("deploy", [&] {
    clean = train_deployed(cfg, corpus, roles, nullptr, mix_seed(cfg.seed, kDeployCleanTag),
                           true);
    save_net(clean.model.net, path("deploy_clean.gnet"));
    manifest.log("deploy_clean.gnet", mix_seed(cfg.seed, kDeployCleanTag));

    const auto plan = make_poison_plan(roles.train, cfg.lambda, roles.attackers.front(),
                                       mix_seed(cfg.seed, kDeployPlanTag));
    poisoned = train_deployed(cfg, corpus, roles, &plan,
                              mix_seed(cfg.seed, kDeployPoisonTag), true);
    save_net(poisoned.model.net, path("deploy_poison.gnet"));
    manifest.log("deploy_poison.gnet", mix_seed(cfg.seed, kDeployPoisonTag));
    write_text(path("poison_deploy.txt"), poison_text(plan));
    manifest.log("poison_deploy.txt", mix_seed(cfg.seed, kDeployPlanTag));

    std::ostringstream auth;
    auth << "clean tau=" << fmt_double(clean.auth.tau) << " eer=" << fmt_double(clean.auth.eer)
         << " overlap=" << (clean.auth.overlap_warning ? 1 : 0) << "\n"
         << "poison tau=" << fmt_double(poisoned.auth.tau)
         << " eer=" << fmt_double(poisoned.auth.eer)
         << " overlap=" << (poisoned.auth.overlap_warning ? 1 : 0) << "\n";
    write_text(path("auth.txt"), auth.str());
    manifest.log("auth.txt", cfg.seed);

    std::ostringstream ver;
    ver << "clean accuracy=" << fmt_double(clean.verification.accuracy)
        << " genuine=" << fmt_double(clean.verification.genuine_accept)
        << " impostor=" << fmt_double(clean.verification.impostor_reject) << "\n"
        << "poison accuracy=" << fmt_double(poisoned.verification.accuracy)
        << " genuine=" << fmt_double(poisoned.verification.genuine_accept)
        << " impostor=" << fmt_double(poisoned.verification.impostor_reject) << "\n";
    write_text(path("verification.txt"), ver.str());
    manifest.log("verification.txt", cfg.seed);
  });

  EvalPopulation pop_low, pop_high, pop_clean;
  if (want_attack) run_stage("attack", [&] {
    pop_low = build_eval_population(cfg, corpus, roles, poisoned, cfg.eval_attacked_low);
    pop_high = build_eval_population(cfg, corpus, roles, poisoned, cfg.eval_attacked_high);
    pop_clean = build_eval_population(cfg, corpus, roles, clean, cfg.eval_attacked_low);

    write_attack_plans(path("attack_poison_low.plan"), pop_low.plans);
    manifest.log("attack_poison_low.plan", mix_seed(cfg.seed, kEvalMitmTag));
    write_attack_plans(path("attack_poison_high.plan"), pop_high.plans);
    manifest.log("attack_poison_high.plan", mix_seed(cfg.seed, kEvalMitmTag));
    write_attack_plans(path("attack_clean_low.plan"), pop_clean.plans);
    manifest.log("attack_clean_low.plan", mix_seed(cfg.seed, kEvalMitmTag));

    std::ostringstream sum;
    sum << "poison_low victim_success=" << fmt_double(pop_low.attack.success_rate)
        << " per_probe=" << fmt_double(pop_low.attack.per_probe_rate) << "\n"
        << "poison_high victim_success=" << fmt_double(pop_high.attack.success_rate)
        << " per_probe=" << fmt_double(pop_high.attack.per_probe_rate) << "\n"
        << "clean_low victim_success=" << fmt_double(pop_clean.attack.success_rate)
        << " per_probe=" << fmt_double(pop_clean.attack.per_probe_rate) << "\n";
    write_text(path("attack_summary.txt"), sum.str());
    manifest.log("attack_summary.txt", cfg.seed);
  });

  InhouseBuild inhouse;
  if (want_guardian) run_stage("inhouse", [&] {
    inhouse = build_inhouse(cfg, corpus, roles);
    for (std::size_t i = 0; i < inhouse.embedders.size(); ++i) {
      const std::string net_name = "inhouse" + std::to_string(i) + ".gnet";
      save_net(inhouse.embedders[i].net, path(net_name));
      manifest.log(net_name, mix_seed(cfg.seed, kInhouseTrainTag, i));
      const std::string poison_name = "poison_inhouse" + std::to_string(i) + ".txt";
      write_text(path(poison_name), poison_text(inhouse.poisons[i]));
      manifest.log(poison_name, mix_seed(cfg.seed, kInhouseVictimTag));
    }

    fs::create_directories(path("guardian_train"));
    std::vector<AccountStoreEntry> entries;
    for (const auto& acct : inhouse.balanced) {
      const std::string rel = "guardian_train/acct" + std::to_string(acct.id) + ".gemb";
      write_embeddings(path(rel), acct.embeddings);
      manifest.log(rel, cfg.seed);
      entries.push_back({acct.id, acct.status, rel});
    }
    write_account_store(path("guardian_train/store.txt"), entries);
    manifest.log("guardian_train/store.txt", cfg.seed);
  });

  GuardianBuild guardian;
  if (want_guardian) run_stage("guardian", [&] {
    guardian = build_guardian(cfg, inhouse.balanced);
    save_net(guardian.trained.net, path("guardian.gnet"));
    manifest.log("guardian.gnet", mix_seed(cfg.seed, kGuardianTrainTag));
    write_reference_points(path("references.gref"), guardian.references);
    manifest.log("references.gref", mix_seed(cfg.seed, kGuardianTrainTag));
  });

  if (!want_evaluate) return result;

  const BaselineBuild baselines =
      run_stage("baselines", [&] { return build_baselines(cfg, inhouse.balanced); });

  run_stage("evaluate", [&] {
    result.reports.push_back(evaluate_guardian(cfg, guardian, pop_low, "guardian_poison_low"));
    result.reports.push_back(evaluate_guardian(cfg, guardian, pop_high, "guardian_poison_high"));
    result.reports.push_back(evaluate_guardian(cfg, guardian, pop_clean, "guardian_clean_low"));
    result.reports.push_back(evaluate_baseline(cfg, baselines, DetectorKind::knn512, pop_low,
                                               "knn512_poison_low"));
    result.reports.push_back(
        evaluate_baseline(cfg, baselines, DetectorKind::svm, pop_low, "svm_poison_low"));
    result.reports.push_back(
        evaluate_baseline(cfg, baselines, DetectorKind::fc14, pop_low, "fc14_poison_low"));
  });

  run_stage("report", [&] {
    emit_report(result.reports, ReportFormat::csv, path("report.csv"));
    manifest.log("report.csv", cfg.seed);
    emit_report(result.reports, ReportFormat::jsonl, path("report.jsonl"));
    manifest.log("report.jsonl", cfg.seed);
  });

  return result;
}

void synth_data(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  DirLock lock(cfg.out_dir);
  Manifest manifest(cfg.out_dir, config_hash(cfg));
  const auto path = [&](const std::string& rel) { return cfg.out_dir + "/" + rel; };

  run_stage("config", [&] {
    write_text(path("config.txt"), serialize_config(cfg));
    manifest.log("config.txt", cfg.seed);
  });

  run_stage("synth", [&] {
    CorpusConfig cc;
    cc.num_speakers = cfg.speakers;
    cc.files_per_speaker = cfg.files_per_speaker;
    cc.noise_scale = cfg.noise;
    cc.seed = cfg.corpus_seed;
    const Corpus corpus(cc);

    auto role_of = [&](int spk) -> std::string {
      if (spk < cfg.train_speakers) return "train";
      if (spk < cfg.train_speakers + cfg.val_speakers) return "val";
      if (spk < cfg.train_speakers + cfg.val_speakers + cfg.eval_speakers) return "eval";
      if (spk <
          cfg.train_speakers + cfg.val_speakers + cfg.eval_speakers + cfg.attacker_speakers)
        return "attacker";
      return "unused";
    };

    fs::create_directories(path("features"));
    std::vector<ManifestEntry> entries;
    for (int spk = 0; spk < cfg.speakers; ++spk)
      for (int f = 0; f < cfg.files_per_speaker; ++f) {
        const std::string rel =
            "features/s" + std::to_string(spk) + "_f" + std::to_string(f) + ".gftr";
        write_features(path(rel), corpus.features(spk, f));
        entries.push_back({spk, f, rel, role_of(spk)});
      }
    write_manifest(path("manifest.txt"), entries);
    manifest.log("manifest.txt", cfg.corpus_seed);
  });
}

}  // namespace gsim
