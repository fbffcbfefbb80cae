#include "gsim/speech/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gsim/util/binio.hpp"
#include "gsim/util/rng.hpp"

namespace gsim {

namespace {
constexpr std::uint64_t kGenTag = 0x67656E6572617430ULL;  // generator params
constexpr std::uint64_t kSpkTag = 0x7370656172736565ULL;  // speaker latents
constexpr std::uint64_t kUttTag = 0x75747465726E6F69ULL;  // per-utterance noise
constexpr std::uint64_t kProbeTag = 0x70726F6265730000ULL;  // login probe noise
constexpr int kHidden = 64;
}  // namespace

Corpus::Corpus(CorpusConfig cfg) : cfg_(cfg) {
  if (cfg_.num_speakers < 2) throw std::runtime_error("corpus: need at least 2 speakers");
  if (cfg_.files_per_speaker < 2)
    throw std::runtime_error("corpus: need at least 2 files per speaker");

  Rng gen(mix_seed(cfg_.seed, kGenTag));
  w1_.resize(static_cast<std::size_t>(kLatentDim) * kHidden);
  b1_.resize(kHidden);
  w2_.resize(static_cast<std::size_t>(kHidden) * kFeatureSize);
  b2_.resize(kFeatureSize);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(kLatentDim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
  for (auto& v : w1_) v = static_cast<float>(gen.normal() * s1);
  for (auto& v : b1_) v = static_cast<float>(gen.normal() * 0.1);
  for (auto& v : w2_) v = static_cast<float>(gen.normal() * s2);
  for (auto& v : b2_) v = static_cast<float>(gen.normal() * 0.1);

  speakers_.resize(static_cast<std::size_t>(cfg_.num_speakers));
  for (int s = 0; s < cfg_.num_speakers; ++s) {
    Rng sr(mix_seed(cfg_.seed, kSpkTag, static_cast<std::uint64_t>(s)));
    speakers_[static_cast<std::size_t>(s)].id = s;
    auto& lat = speakers_[static_cast<std::size_t>(s)].latent;
    lat.resize(kLatentDim);
    for (auto& v : lat) v = static_cast<float>(sr.normal());
  }
}

std::vector<float> Corpus::features(int speaker_id, int file_index) const {
  if (file_index < 0 || file_index >= cfg_.files_per_speaker)
    throw std::runtime_error("corpus: file index out of range");
  return synth(speaker_id, mix_seed(cfg_.seed, kUttTag, static_cast<std::uint64_t>(speaker_id),
                                    static_cast<std::uint64_t>(file_index)));
}

std::vector<float> Corpus::probe_features(int speaker_id, int probe_index) const {
  if (probe_index < 0) throw std::runtime_error("corpus: probe index out of range");
  return synth(speaker_id,
               mix_seed(cfg_.seed, kProbeTag, static_cast<std::uint64_t>(speaker_id),
                        static_cast<std::uint64_t>(probe_index)));
}

std::vector<float> Corpus::synth(int speaker_id, std::uint64_t noise_seed) const {
  if (speaker_id < 0 || speaker_id >= cfg_.num_speakers)
    throw std::runtime_error("corpus: speaker id out of range");

  const auto& lat = speakers_[static_cast<std::size_t>(speaker_id)].latent;
  Rng noise(noise_seed);
  float z[kLatentDim];
  for (int i = 0; i < kLatentDim; ++i)
    z[i] = lat[static_cast<std::size_t>(i)] +
           static_cast<float>(noise.normal() * cfg_.noise_scale);

  float h[kHidden];
  for (int j = 0; j < kHidden; ++j) {
    float acc = b1_[static_cast<std::size_t>(j)];
    for (int i = 0; i < kLatentDim; ++i)
      acc += z[i] * w1_[static_cast<std::size_t>(i) * kHidden + j];
    h[j] = std::tanh(acc);
  }

  std::vector<float> out(kFeatureSize);
  for (int k = 0; k < kFeatureSize; ++k) out[k] = b2_[static_cast<std::size_t>(k)];
  for (int j = 0; j < kHidden; ++j) {
    const float hj = h[j];
    const float* wr = w2_.data() + static_cast<std::size_t>(j) * kFeatureSize;
    for (int k = 0; k < kFeatureSize; ++k) out[static_cast<std::size_t>(k)] += hj * wr[k];
  }
  return out;
}

void write_features(const std::string& path, const std::vector<float>& features) {
  if (features.size() != static_cast<std::size_t>(kFeatureSize))
    throw std::runtime_error("features: wrong size for " + path);
  std::ofstream os = open_out(path);
  write_magic(os, "GFTR");
  write_u32(os, kFeatureRows);
  write_u32(os, kFeatureCols);
  for (float v : features) write_f32(os, v);
  if (!os) throw std::runtime_error("features: write failed: " + path);
}

std::vector<float> read_features(const std::string& path) {
  std::ifstream is = open_in(path);
  expect_magic(is, "GFTR", path);
  const std::uint32_t rows = read_u32(is);
  const std::uint32_t cols = read_u32(is);
  if (rows != kFeatureRows || cols != kFeatureCols)
    throw std::runtime_error("features: unexpected dimensions in " + path);
  std::vector<float> out(static_cast<std::size_t>(rows) * cols);
  for (float& v : out) v = read_f32(is);
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("manifest: cannot open for write: " + path);
  for (const auto& e : entries)
    os << e.speaker_id << ' ' << e.file_index << ' ' << e.path << ' ' << e.account_label
       << '\n';
  if (!os) throw std::runtime_error("manifest: write failed: " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("manifest: cannot open for read: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    if (!(ss >> e.speaker_id >> e.file_index >> e.path >> e.account_label))
      throw std::runtime_error("manifest: malformed line in " + path + ": " + line);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace gsim
