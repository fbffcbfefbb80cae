#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsim/exp/experiment.hpp"
#include "gsim/nn/checkpoint.hpp"
#include "gsim/util/rng.hpp"

using namespace gsim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// small enough to run the full pipeline in a few seconds
ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig c;
  c.speakers = 31;
  c.files_per_speaker = 6;
  c.noise = 0.3;
  c.corpus_seed = 11;
  c.train_speakers = 12;
  c.val_speakers = 6;
  c.eval_speakers = 8;
  c.attacker_speakers = 5;
  c.triplet.epochs = 2;
  c.guardian.epochs = 3;
  c.eval_attacked_low = 0.25;
  c.eval_attacked_high = 0.5;
  c.seed = 5;
  c.out_dir = out_dir;
  return c;
}

}  // namespace

// ---- configuration -------------------------------------------------------

TEST_CASE("the default configuration is valid and round-trips") {
  ExperimentConfig c;
  c.validate();
  const std::string s = serialize_config(c);
  const auto back = parse_config(s);
  CHECK(serialize_config(back) == s);
}

TEST_CASE("awkward doubles survive the text form exactly") {
  ExperimentConfig c;
  c.noise = 0.1 + 0.2;
  c.lambda = 1.0 / 3.0;
  c.epsilon = 2.0;  // keeps validate() satisfiable irrelevant here; parsing only
  c.triplet.lr = 7.0 / 11.0;
  c.eval_attacked_low = std::nextafter(0.05, 1.0);
  const auto back = parse_config(serialize_config(c));
  CHECK(back.noise == c.noise);
  CHECK(back.lambda == c.lambda);
  CHECK(back.triplet.lr == c.triplet.lr);
  CHECK(back.eval_attacked_low == c.eval_attacked_low);
}

TEST_CASE("every field of a fully customized config survives parsing") {
  ExperimentConfig c = tiny_config("some/dir");
  c.guardian.norm_mode = NormalizationMode::per_vector;
  c.guardian.use_interleave = false;
  c.guardian.pairing_seed = 99;
  c.auth.tau = 0.25;
  c.auth.calibrated = true;
  c.ablate_bias = true;
  c.ablate_ensemble = true;
  const auto back = parse_config(serialize_config(c));
  CHECK(back.guardian.norm_mode == NormalizationMode::per_vector);
  CHECK(!back.guardian.use_interleave);
  CHECK(back.guardian.pairing_seed == 99);
  CHECK(back.auth.tau == 0.25);
  CHECK(back.auth.calibrated);
  CHECK(back.ablate_bias);
  CHECK(back.ablate_ensemble);
  CHECK(back.out_dir == "some/dir");
  CHECK(serialize_config(back) == serialize_config(c));
}

TEST_CASE("comments and blank lines are ignored, junk is not") {
  const auto c = parse_config("# a comment\n\nrun.seed=42\n");
  CHECK(c.seed == 42);
  CHECK_THROWS_AS(parse_config("bogus.key=1\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("run.seed=1\nrun.seed=2\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("run.seed\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("run.seed=abc\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("guardian.norm_mode=diagonal\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("ablate.bias=2\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("corpus.speakers=2.5\n"), std::runtime_error);
}

TEST_CASE("validation walls off inconsistent settings") {
  auto c = tiny_config("x");
  c.validate();

  auto bad = c;
  bad.train_speakers = 30;  // roles no longer fit the corpus
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);

  bad = c;
  bad.attacker_speakers = 4;  // one per in-house model plus deployed needs 5
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);

  bad = c;
  bad.lambda = 0.01;  // rounds to zero victims on 12 training speakers
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);

  bad = c;
  bad.eval_attacked_low = 0.01;  // rounds to zero attacked accounts
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);

  bad = c;
  bad.eval_attacked_high = 0.97;  // rounds to the whole population
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);

  bad = c;
  bad.guardian.k = 10;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);

  bad = c;
  bad.guardian.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);

  bad = c;
  bad.files_per_speaker = 1;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
}

TEST_CASE("the config hash tracks content") {
  ExperimentConfig a, b;
  CHECK(config_hash(a) == config_hash(b));
  b.seed = 2;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.out_dir = "elsewhere";
  CHECK(config_hash(a) != config_hash(b));
}

// ---- metrics -------------------------------------------------------------

TEST_CASE("ninety correct out of a hundred scores point nine") {
  std::vector<GuardianLabel> truth(100, GuardianLabel::normal), pred(100, GuardianLabel::normal);
  for (int i = 0; i < 30; ++i) truth[static_cast<std::size_t>(i)] = GuardianLabel::attacked;
  for (int i = 0; i < 25; ++i) pred[static_cast<std::size_t>(i)] = GuardianLabel::attacked;
  for (int i = 95; i < 100; ++i) pred[static_cast<std::size_t>(i)] = GuardianLabel::attacked;
  const auto r = compute_metrics(pred, truth);
  CHECK(r.true_attacked == 25);
  CHECK(r.false_normal == 5);
  CHECK(r.false_attacked == 5);
  CHECK(r.true_normal == 65);
  CHECK(r.accuracy == 0.9);
  CHECK(r.recall == 25.0 / 30.0);
  CHECK(r.fpr == 5.0 / 70.0);
}

TEST_CASE("perfect detection has full recall and no false positives") {
  std::vector<GuardianLabel> truth{GuardianLabel::attacked, GuardianLabel::normal,
                                   GuardianLabel::attacked};
  const auto r = compute_metrics(truth, truth);
  CHECK(r.accuracy == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.fpr == 0.0);
}

TEST_CASE("randomized confusions match a hand count") {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const int n = 50 + static_cast<int>(rng.index(200));
    std::vector<GuardianLabel> truth, pred;
    for (int i = 0; i < n; ++i) {
      truth.push_back(rng.uniform() < 0.3 ? GuardianLabel::attacked : GuardianLabel::normal);
      pred.push_back(rng.uniform() < 0.4 ? GuardianLabel::attacked : GuardianLabel::normal);
    }
    int ta = 0, fn = 0, fa = 0, tn = 0;
    for (int i = 0; i < n; ++i) {
      const bool at = truth[static_cast<std::size_t>(i)] == GuardianLabel::attacked;
      const bool fl = pred[static_cast<std::size_t>(i)] == GuardianLabel::attacked;
      ta += at && fl;
      fn += at && !fl;
      fa += !at && fl;
      tn += !at && !fl;
    }
    const auto r = compute_metrics(pred, truth);
    CHECK(r.true_attacked == ta);
    CHECK(r.false_normal == fn);
    CHECK(r.false_attacked == fa);
    CHECK(r.true_normal == tn);
    CHECK(r.accuracy == static_cast<double>(ta + tn) / n);
    if (ta + fn > 0) CHECK(r.recall == static_cast<double>(ta) / (ta + fn));
    if (fa + tn > 0) CHECK(r.fpr == static_cast<double>(fa) / (fa + tn));
  }
}

TEST_CASE("vacuous classes and bad input are handled") {
  const std::vector<GuardianLabel> normals(5, GuardianLabel::normal);
  const auto r = compute_metrics(normals, normals);
  CHECK(r.recall == 1.0);
  const std::vector<GuardianLabel> attacked(5, GuardianLabel::attacked);
  const auto r2 = compute_metrics(attacked, attacked);
  CHECK(r2.fpr == 0.0);
  CHECK_THROWS_AS(compute_metrics({}, {}), std::runtime_error);
  CHECK_THROWS_AS(compute_metrics(normals, attacked.empty() ? normals : std::vector<GuardianLabel>(3, GuardianLabel::normal)),
                  std::runtime_error);
}

// ---- reports -------------------------------------------------------------

namespace {
std::vector<MetricsReport> sample_reports() {
  MetricsReport a;
  a.scenario = "alpha";
  a.true_attacked = 9;
  a.false_normal = 1;
  a.false_attacked = 2;
  a.true_normal = 88;
  a.accuracy = 97.0 / 100.0;
  a.recall = 0.9;
  a.fpr = 1.0 / 45.0;
  a.attack_success = 1.0 / 3.0;
  a.seed = 77;
  MetricsReport b;
  b.scenario = "beta";
  b.accuracy = 0.5;
  b.recall = 1.0;
  b.seed = 78;
  return {a, b};
}
}  // namespace

TEST_CASE("the csv report keeps its fixed header and parses back exactly") {
  const auto reports = sample_reports();
  const std::string csv = format_reports(reports, ReportFormat::csv);
  CHECK(csv.rfind("scenario,accuracy,recall,fpr,attack_success,seed\n", 0) == 0);
  CHECK(format_reports(reports, ReportFormat::csv) == csv);  // byte-stable

  const auto back = parse_report_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back[0].scenario == "alpha");
  CHECK(back[0].accuracy == reports[0].accuracy);
  CHECK(back[0].recall == reports[0].recall);
  CHECK(back[0].fpr == reports[0].fpr);
  CHECK(back[0].attack_success == reports[0].attack_success);
  CHECK(back[0].seed == 77);
  CHECK(back[1].scenario == "beta");
  CHECK(back[1].accuracy == 0.5);
}

TEST_CASE("the jsonl report carries the confusion counts") {
  const auto reports = sample_reports();
  const std::string jsonl = format_reports(reports, ReportFormat::jsonl);
  std::istringstream is(jsonl);
  std::string line;
  REQUIRE(std::getline(is, line));
  const auto j = nlohmann::json::parse(line);
  CHECK(j["scenario"] == "alpha");
  CHECK(j["accuracy"].get<double>() == reports[0].accuracy);
  CHECK(j["recall"].get<double>() == reports[0].recall);
  CHECK(j["fpr"].get<double>() == reports[0].fpr);
  CHECK(j["attack_success"].get<double>() == reports[0].attack_success);
  CHECK(j["seed"].get<std::uint64_t>() == 77);
  CHECK(j["true_attacked"] == 9);
  CHECK(j["false_normal"] == 1);
  CHECK(j["false_attacked"] == 2);
  CHECK(j["true_normal"] == 88);
  REQUIRE(std::getline(is, line));
  CHECK(nlohmann::json::parse(line)["scenario"] == "beta");
}

TEST_CASE("report writing defends its format") {
  auto reports = sample_reports();
  reports[0].scenario = "has,comma";
  CHECK_THROWS_AS(format_reports(reports, ReportFormat::csv), std::runtime_error);
  CHECK_THROWS_AS(parse_report_csv("wrong,header\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_report_csv("scenario,accuracy,recall,fpr,attack_success,seed\na,b\n"),
                  std::runtime_error);
  CHECK_THROWS_AS(
      emit_report(sample_reports(), ReportFormat::csv, "/nonexistent_dir_zz/r.csv"),
      std::runtime_error);
}

// ---- heatmaps ------------------------------------------------------------

TEST_CASE("an all-zero grid becomes a zero image with the documented header") {
  const std::string path = "t_exp_zero.pgm";
  emit_heatmap(std::vector<double>(32 * 32, 0.0), 32, 32, path);
  const std::string bytes = slurp(path);
  const std::string header = "P5\n32 32\n255\n";
  REQUIRE(bytes.size() == header.size() + 1024);
  CHECK(bytes.rfind(header, 0) == 0);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == '\0');
  fs::remove(path);
}

TEST_CASE("unit-scaled cells parse back as their rounded byte value") {
  Rng rng(41);
  std::vector<double> grid(16 * 32);
  for (auto& v : grid) v = rng.uniform();
  const std::string path = "t_exp_rand.pgm";
  emit_heatmap(grid, 16, 32, path);
  const std::string bytes = slurp(path);
  const std::string header = "P5\n32 16\n255\n";
  REQUIRE(bytes.size() == header.size() + grid.size());
  CHECK(bytes.rfind(header, 0) == 0);
  for (std::size_t i = 0; i < grid.size(); ++i)
    CHECK(static_cast<unsigned char>(bytes[header.size() + i]) == std::llround(grid[i] * 255.0));
  fs::remove(path);
}

TEST_CASE("byte-scaled grids round directly") {
  const std::vector<double> grid{0.0, 200.4, 255.0, 17.5};
  const std::string path = "t_exp_byte.pgm";
  emit_heatmap(grid, 2, 2, path);
  const std::string bytes = slurp(path);
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 200);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 18);
  fs::remove(path);
}

TEST_CASE("heatmaps reject malformed input") {
  CHECK_THROWS_AS(emit_heatmap({0.5, 0.5}, 2, 2, "x.pgm"), std::runtime_error);
  CHECK_THROWS_AS(emit_heatmap({-0.1, 0.0, 0.0, 0.0}, 2, 2, "x.pgm"), std::runtime_error);
  CHECK_THROWS_AS(emit_heatmap({256.0, 0.0, 0.0, 0.0}, 2, 2, "x.pgm"), std::runtime_error);
  CHECK_THROWS_AS(
      emit_heatmap({std::nan(""), 0.0, 0.0, 0.0}, 2, 2, "x.pgm"), std::runtime_error);
}

// ---- roles and the full runner -------------------------------------------

TEST_CASE("speaker roles tile the corpus in order") {
  const auto cfg = tiny_config("x");
  const auto roles = speaker_roles(cfg);
  CHECK(roles.train.size() == 12);
  CHECK(roles.val.front() == 12);
  CHECK(roles.eval.front() == 18);
  CHECK(roles.attackers.front() == 26);
  CHECK(roles.attackers.back() == 30);
}

TEST_CASE("a locked output directory refuses a second run") {
  const std::string dir = "t_exp_locked";
  fs::create_directories(dir);
  { std::ofstream(dir + "/LOCK") << "held\n"; }
  auto cfg = tiny_config(dir);
  bool threw = false;
  try {
    run_experiment(cfg);
  } catch (const StageError& e) {
    threw = true;
    CHECK(e.stage == "lock");
  }
  CHECK(threw);
  fs::remove_all(dir);
}

TEST_CASE("the tiny pipeline runs, persists its artifacts, and reruns identically") {
  const std::string dir_a = "t_exp_run_a";
  const std::string dir_b = "t_exp_run_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  auto cfg = tiny_config(dir_a);
  const auto res = run_experiment(cfg);

  // six scenarios in fixed order
  const std::vector<std::string> want{"guardian_poison_low", "guardian_poison_high",
                                      "guardian_clean_low",  "knn512_poison_low",
                                      "svm_poison_low",      "fc14_poison_low"};
  REQUIRE(res.reports.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(res.reports[i].scenario == want[i]);
    CHECK(res.reports[i].accuracy >= 0.0);
    CHECK(res.reports[i].accuracy <= 1.0);
    CHECK(res.reports[i].seed == cfg.seed);
    CHECK(res.reports[i].true_attacked + res.reports[i].false_normal +
              res.reports[i].false_attacked + res.reports[i].true_normal ==
          cfg.eval_speakers);
  }

  // the lock is gone and the core artifacts exist
  CHECK(!fs::exists(dir_a + "/LOCK"));
  for (const std::string rel :
       {"config.txt", "MANIFEST.txt", "deploy_clean.gnet", "deploy_poison.gnet", "auth.txt",
        "verification.txt", "poison_deploy.txt", "attack_poison_low.plan",
        "attack_poison_high.plan", "attack_clean_low.plan", "attack_summary.txt",
        "inhouse0.gnet", "inhouse3.gnet", "poison_inhouse0.txt", "guardian_train/store.txt",
        "guardian.gnet", "references.gref", "report.csv", "report.jsonl"})
    CHECK(fs::exists(dir_a + "/" + rel));

  // the stored config reproduces the hash recorded in the manifest
  const auto stored = load_config(dir_a + "/config.txt");
  CHECK(config_hash(stored) == res.config_hash_value);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(res.config_hash_value));
  const std::string manifest = slurp(dir_a + "/MANIFEST.txt");
  CHECK(manifest.find(std::string("config=") + hex) != std::string::npos);
  {  // every manifest entry points at a real file
    std::istringstream is(manifest);
    std::string line;
    int entries = 0;
    while (std::getline(is, line)) {
      const auto sp = line.find(' ');
      REQUIRE(sp != std::string::npos);
      CHECK(fs::exists(dir_a + "/" + line.substr(0, sp)));
      ++entries;
    }
    CHECK(entries >= 19);
  }

  // the smaller victim set is a prefix of the larger one
  const auto plans_low = read_attack_plans(dir_a + "/attack_poison_low.plan");
  const auto plans_high = read_attack_plans(dir_a + "/attack_poison_high.plan");
  CHECK(plans_low.size() == 2);
  CHECK(plans_high.size() == 4);
  std::set<int> victims_low, victims_high;
  for (const auto& p : plans_low) victims_low.insert(p.victim_id);
  for (const auto& p : plans_high) victims_high.insert(p.victim_id);
  for (int v : victims_low) CHECK(victims_high.count(v) == 1);
  const auto plans_clean = read_attack_plans(dir_a + "/attack_clean_low.plan");
  std::set<int> victims_clean;
  for (const auto& p : plans_clean) victims_clean.insert(p.victim_id);
  CHECK(victims_clean == victims_low);

  // balanced build: 4 attacked accounts against 12 sampled normals
  const auto store = read_account_store(dir_a + "/guardian_train/store.txt");
  int attacked = 0, normal = 0;
  for (const auto& e : store) {
    (e.status == AccountStatus::attacked ? attacked : normal)++;
    const auto emb = read_embeddings(dir_a + "/" + e.embedding_path);
    CHECK(emb.size() == static_cast<std::size_t>(cfg.files_per_speaker));
  }
  CHECK(attacked == 4);
  CHECK(normal == 12);

  // references load back labeled and sized to the balanced set
  const auto refs = read_reference_points(dir_a + "/references.gref");
  CHECK(refs.size() == store.size());
  for (const auto& r : refs) CHECK(r.labeled);

  // report files agree with the returned metrics
  const auto csv_back = parse_report_csv(slurp(dir_a + "/report.csv"));
  REQUIRE(csv_back.size() == res.reports.size());
  for (std::size_t i = 0; i < csv_back.size(); ++i) {
    CHECK(csv_back[i].scenario == res.reports[i].scenario);
    CHECK(csv_back[i].accuracy == res.reports[i].accuracy);
    CHECK(csv_back[i].recall == res.reports[i].recall);
    CHECK(csv_back[i].fpr == res.reports[i].fpr);
    CHECK(csv_back[i].attack_success == res.reports[i].attack_success);
  }

  // an independent run of the same config produces identical bytes
  auto cfg_b = cfg;
  cfg_b.out_dir = dir_b;
  const auto res_b = run_experiment(cfg_b);
  REQUIRE(res_b.reports.size() == res.reports.size());
  CHECK(slurp(dir_a + "/report.csv") == slurp(dir_b + "/report.csv"));
  CHECK(slurp(dir_a + "/report.jsonl") == slurp(dir_b + "/report.jsonl"));
  CHECK(slurp(dir_a + "/guardian.gnet") == slurp(dir_b + "/guardian.gnet"));
  CHECK(slurp(dir_a + "/references.gref") == slurp(dir_b + "/references.gref"));
  CHECK(slurp(dir_a + "/deploy_poison.gnet") == slurp(dir_b + "/deploy_poison.gnet"));

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}
