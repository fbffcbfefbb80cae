#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gsim {

inline constexpr int kFeatureRows = 160;
inline constexpr int kFeatureCols = 64;
inline constexpr int kFeatureSize = kFeatureRows * kFeatureCols;
inline constexpr int kLatentDim = 32;

struct Speaker {
  int id = 0;
  std::vector<float> latent;  // kLatentDim values, drawn once, never mutated
};

struct CorpusConfig {
  int num_speakers = 200;
  int files_per_speaker = 10;
  double noise_scale = 0.35;
  std::uint64_t seed = 1;
};

// Synthetic speaker corpus. An utterance is g(latent + noise) where g is a
// fixed seeded two-layer expansion (32 -> 64 tanh -> 160x64) shared by all
// speakers of one corpus. Features are synthesized on demand; nothing the
// size of the full feature set is ever held in memory.
class Corpus {
 public:
  explicit Corpus(CorpusConfig cfg);

  const CorpusConfig& config() const { return cfg_; }
  int num_speakers() const { return cfg_.num_speakers; }
  int files_per_speaker() const { return cfg_.files_per_speaker; }
  const Speaker& speaker(int id) const { return speakers_.at(static_cast<std::size_t>(id)); }

  // 160x64 features of one utterance, row-major; deterministic per
  // (corpus seed, speaker, file index).
  std::vector<float> features(int speaker_id, int file_index) const;

  // Fresh login-time recording of a speaker, disjoint from the m stored
  // files (independent noise stream, same generator).
  std::vector<float> probe_features(int speaker_id, int probe_index) const;

 private:
  std::vector<float> synth(int speaker_id, std::uint64_t noise_seed) const;

  CorpusConfig cfg_;
  std::vector<Speaker> speakers_;
  std::vector<float> w1_, b1_;  // 32 -> 64
  std::vector<float> w2_, b2_;  // 64 -> 160x64
};

// Feature file ("GFTR"): magic, u32 rows=160, u32 cols=64, little-endian
// 32-bit reals, row-major.
void write_features(const std::string& path, const std::vector<float>& features);
std::vector<float> read_features(const std::string& path);

// Corpus manifest: one line per utterance,
// "speaker_id file_index feature_file_path account_label".
struct ManifestEntry {
  int speaker_id = 0;
  int file_index = 0;
  std::string path;
  std::string account_label;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace gsim
