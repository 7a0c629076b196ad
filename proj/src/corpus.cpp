// SPDX-License-Identifier: Apache-2.0
#include "smad/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "smad/errors.hpp"

namespace smad {

namespace {

constexpr char kArchiveMagic[8] = {'S', 'M', 'A', 'D', 'F', 'T', '0', '1'};

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("feature archive: truncated file");
  return v;
}

std::vector<std::vector<double>> make_prototypes(std::size_t letters,
                                                 std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> protos(letters);
  for (auto& p : protos) {
    p.resize(dim);
    for (double& v : p) v = rng.normal();
  }
  return protos;
}

}  // namespace

std::vector<std::vector<double>> generator_prototypes(
    const GeneratorConfig& cfg) {
  Rng rng(cfg.seed);
  const Vocab vocab = Vocab::make_letters(cfg.vocab_size);
  return make_prototypes(vocab.n_letters(), cfg.feature_dim, rng);
}

Corpus generate_corpus(const GeneratorConfig& cfg) {
  if (cfg.vocab_size < 4) {
    throw ConfigError("generate: vocab_size must be >= 4");
  }
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) {
    throw ConfigError("generate: invalid length range");
  }
  Rng rng(cfg.seed);
  Corpus corpus;
  corpus.vocab = Vocab::make_letters(cfg.vocab_size);
  corpus.feature_dim = cfg.feature_dim;
  const std::size_t letters = corpus.vocab.n_letters();
  const auto protos = make_prototypes(letters, cfg.feature_dim, rng);

  corpus.utts.reserve(cfg.n_utterances);
  for (std::size_t u = 0; u < cfg.n_utterances; ++u) {
    Utterance utt;
    {
      std::ostringstream id;
      id << "utt" << std::setw(5) << std::setfill('0') << u;
      utt.id = id.str();
    }
    utt.dim = cfg.feature_dim;
    const std::size_t len =
        cfg.min_len + rng.uniform_int(cfg.max_len - cfg.min_len + 1);
    utt.tokens.reserve(len);
    int prev = -1;
    for (std::size_t i = 0; i < len; ++i) {
      int letter;
      do {
        letter = Vocab::kNumSpecials + static_cast<int>(rng.uniform_int(letters));
      } while (letter == prev && letters > 1);
      prev = letter;
      utt.tokens.push_back(letter);
      const std::size_t duration = 4 + rng.uniform_int(5);  // 4..8 frames
      const auto& proto = protos[static_cast<std::size_t>(
          letter - Vocab::kNumSpecials)];
      for (std::size_t f = 0; f < duration; ++f) {
        for (std::size_t d = 0; d < cfg.feature_dim; ++d) {
          double v = proto[d];
          if (cfg.noise > 0.0) v += cfg.noise * rng.normal();
          utt.features.push_back(v);
        }
      }
      utt.frames += duration;
    }
    corpus.utts.push_back(std::move(utt));
  }
  return corpus;
}

CorpusSplits split_corpus(const Corpus& corpus, std::uint64_t seed) {
  std::vector<std::size_t> order(corpus.utts.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x5b17ace5ULL);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  }
  const std::size_t n = order.size();
  const std::size_t n_dev = n / 10;
  const std::size_t n_test = n / 10;
  const std::size_t n_train = n - n_dev - n_test;
  CorpusSplits splits;
  for (Corpus* c : {&splits.train, &splits.dev, &splits.test}) {
    c->vocab = corpus.vocab;
    c->feature_dim = corpus.feature_dim;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Utterance& u = corpus.utts[order[i]];
    if (i < n_train) {
      splits.train.utts.push_back(u);
    } else if (i < n_train + n_dev) {
      splits.dev.utts.push_back(u);
    } else {
      splits.test.utts.push_back(u);
    }
  }
  return splits;
}

NormStats compute_norm_stats(const Corpus& train, bool scale_variance) {
  if (train.utts.empty()) throw DataError("norm stats: empty training split");
  const std::size_t dim = train.feature_dim;
  NormStats stats;
  stats.mean.assign(dim, 0.0);
  stats.scale.assign(dim, 1.0);
  stats.variance_scaled = scale_variance;
  std::size_t total = 0;
  for (const auto& u : train.utts) {
    for (std::size_t f = 0; f < u.frames; ++f) {
      for (std::size_t d = 0; d < dim; ++d)
        stats.mean[d] += u.features[f * dim + d];
    }
    total += u.frames;
  }
  for (double& m : stats.mean) m /= static_cast<double>(total);
  if (scale_variance) {
    std::vector<double> var(dim, 0.0);
    for (const auto& u : train.utts) {
      for (std::size_t f = 0; f < u.frames; ++f) {
        for (std::size_t d = 0; d < dim; ++d) {
          const double x = u.features[f * dim + d] - stats.mean[d];
          var[d] += x * x;
        }
      }
    }
    for (std::size_t d = 0; d < dim; ++d) {
      var[d] /= static_cast<double>(total);
      stats.scale[d] = 1.0 / std::sqrt(var[d] + 1e-12);
    }
  }
  return stats;
}

void apply_normalization(Corpus& corpus, const NormStats& stats) {
  if (stats.mean.size() != corpus.feature_dim) {
    throw DataError("normalize: stats dim " + std::to_string(stats.mean.size()) +
                    " does not match corpus dim " +
                    std::to_string(corpus.feature_dim));
  }
  const std::size_t dim = corpus.feature_dim;
  for (auto& u : corpus.utts) {
    for (std::size_t f = 0; f < u.frames; ++f) {
      for (std::size_t d = 0; d < dim; ++d) {
        double& x = u.features[f * dim + d];
        x = (x - stats.mean[d]) * stats.scale[d];
      }
    }
  }
}

void NormStats::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "smad-stats-v1";
  j["mean"] = mean;
  j["scale"] = scale;
  j["variance_scaled"] = variance_scaled;
  std::ofstream os(path);
  if (!os) throw DataError("stats: cannot write " + path.string());
  os << j.dump(2) << "\n";
}

NormStats NormStats::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw UsageError("stats: missing normalization file " + path.string() +
                     " (eval data must reuse training statistics)");
  }
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("stats: bad json: " + std::string(e.what()));
  }
  if (j.value("format", "") != "smad-stats-v1") {
    throw DataError("stats: unsupported format in " + path.string());
  }
  NormStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  s.variance_scaled = j.value("variance_scaled", false);
  return s;
}

void spec_mask(std::vector<double>& features, std::size_t frames,
               std::size_t dim, const SpecMaskConfig& cfg, Rng& rng) {
  if (!cfg.enabled()) return;
  if (cfg.max_time_width > frames || cfg.max_freq_width > dim) {
    throw ConfigError("spec_mask: mask width exceeds feature dims");
  }
  std::vector<double> col_mean(dim, 0.0);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t d = 0; d < dim; ++d) col_mean[d] += features[f * dim + d];
  for (double& m : col_mean) m /= static_cast<double>(frames);

  for (std::size_t k = 0; k < cfg.n_time_masks; ++k) {
    const std::size_t w = rng.uniform_int(cfg.max_time_width + 1);
    const std::size_t start = rng.uniform_int(frames - w + 1);
    for (std::size_t f = start; f < start + w; ++f)
      for (std::size_t d = 0; d < dim; ++d) features[f * dim + d] = col_mean[d];
  }
  for (std::size_t k = 0; k < cfg.n_freq_masks; ++k) {
    const std::size_t w = rng.uniform_int(cfg.max_freq_width + 1);
    const std::size_t start = rng.uniform_int(dim - w + 1);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t d = start; d < start + w; ++d)
        features[f * dim + d] = col_mean[d];
  }
}

// ---------------------------------------------------------------------------
// Disk formats
// ---------------------------------------------------------------------------

namespace {

void save_split(const std::filesystem::path& dir, const std::string& name,
                const Corpus& corpus) {
  {
    std::ofstream os(dir / ("manifest_" + name + ".tsv"));
    if (!os) throw DataError("manifest: cannot write in " + dir.string());
    os << "# smad-manifest v1\n";
    os << "# feature_dim " << corpus.feature_dim << "\n";
    os << "# count " << corpus.utts.size() << "\n";
    for (const auto& u : corpus.utts) {
      os << u.id << '\t' << u.frames << '\t';
      for (std::size_t i = 0; i < u.tokens.size(); ++i) {
        if (i) os << ' ';
        os << u.tokens[i];
      }
      os << '\n';
    }
  }
  std::ofstream os(dir / ("feats_" + name + ".bin"), std::ios::binary);
  if (!os) throw DataError("feature archive: cannot write in " + dir.string());
  os.write(kArchiveMagic, sizeof(kArchiveMagic));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(corpus.utts.size()));
  for (const auto& u : corpus.utts) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(u.id.size()));
    os.write(u.id.data(), static_cast<std::streamsize>(u.id.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(u.frames));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(u.dim));
    os.write(reinterpret_cast<const char*>(u.features.data()),
             static_cast<std::streamsize>(u.features.size() * sizeof(double)));
  }
}

}  // namespace

void save_corpus_dir(const std::filesystem::path& dir,
                     const CorpusSplits& splits, const NormStats& stats,
                     const GeneratorConfig& cfg) {
  std::filesystem::create_directories(dir);
  splits.train.vocab.save(dir / "vocab.json");
  stats.save(dir / "stats.json");
  {
    nlohmann::json meta;
    meta["format"] = "smad-corpus-v1";
    meta["seed"] = cfg.seed;
    meta["n_utterances"] = cfg.n_utterances;
    meta["vocab_size"] = cfg.vocab_size;
    meta["min_len"] = cfg.min_len;
    meta["max_len"] = cfg.max_len;
    meta["feature_dim"] = cfg.feature_dim;
    meta["noise"] = cfg.noise;
    std::ofstream os(dir / "meta.json");
    os << meta.dump(2) << "\n";
  }
  save_split(dir, "train", splits.train);
  save_split(dir, "dev", splits.dev);
  save_split(dir, "test", splits.test);
}

Corpus load_corpus_split(const std::filesystem::path& dir,
                         const std::string& split, bool normalize) {
  Corpus corpus;
  corpus.vocab = Vocab::load(dir / "vocab.json");

  const auto manifest_path = dir / ("manifest_" + split + ".tsv");
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("manifest: cannot open " + manifest_path.string());
  struct Entry {
    std::string id;
    std::size_t frames;
    std::vector<int> tokens;
  };
  std::vector<Entry> entries;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "feature_dim") hs >> corpus.feature_dim;
      continue;
    }
    std::istringstream ls(line);
    Entry e;
    std::string tok_field;
    if (!std::getline(ls, e.id, '\t')) {
      throw DataError("manifest: malformed line: " + line);
    }
    std::string frames_field;
    std::getline(ls, frames_field, '\t');
    e.frames = std::stoull(frames_field);
    std::getline(ls, tok_field);
    std::istringstream ts(tok_field);
    int t;
    while (ts >> t) e.tokens.push_back(t);
    if (e.tokens.empty()) {
      throw DataError("manifest: utterance without tokens: " + e.id);
    }
    entries.push_back(std::move(e));
  }
  if (corpus.feature_dim == 0) {
    throw DataError("manifest: missing feature_dim header");
  }

  const auto archive_path = dir / ("feats_" + split + ".bin");
  std::ifstream af(archive_path, std::ios::binary);
  if (!af) throw DataError("feature archive: cannot open " + archive_path.string());
  char magic[8];
  af.read(magic, sizeof(magic));
  if (!af || std::memcmp(magic, kArchiveMagic, sizeof(kArchiveMagic)) != 0) {
    throw DataError("feature archive: bad magic in " + archive_path.string());
  }
  const auto count = read_pod<std::uint32_t>(af);
  if (count != entries.size()) {
    throw DataError("feature archive: record count does not match manifest");
  }
  corpus.utts.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Utterance u;
    const auto id_len = read_pod<std::uint32_t>(af);
    u.id.resize(id_len);
    af.read(u.id.data(), id_len);
    u.frames = read_pod<std::uint32_t>(af);
    u.dim = read_pod<std::uint32_t>(af);
    if (u.id != entries[i].id || u.frames != entries[i].frames ||
        u.dim != corpus.feature_dim) {
      throw DataError("feature archive: record " + u.id +
                      " disagrees with manifest");
    }
    u.features.resize(u.frames * u.dim);
    af.read(reinterpret_cast<char*>(u.features.data()),
            static_cast<std::streamsize>(u.features.size() * sizeof(double)));
    if (!af) throw DataError("feature archive: truncated payload for " + u.id);
    u.tokens = entries[i].tokens;
    corpus.utts.push_back(std::move(u));
  }

  if (normalize) {
    const NormStats stats = NormStats::load(dir / "stats.json");
    apply_normalization(corpus, stats);
  }
  return corpus;
}

}  // namespace smad
