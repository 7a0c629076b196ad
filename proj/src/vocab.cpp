// SPDX-License-Identifier: Apache-2.0
#include "smad/vocab.hpp"

#include <fstream>

#include <json.hpp>

#include "smad/errors.hpp"

namespace smad {

Vocab::Vocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.size() < kNumSpecials + 1) {
    throw ConfigError("vocab: needs the 3 specials plus at least one letter");
  }
}

Vocab Vocab::make_letters(std::size_t vocab_size) {
  if (vocab_size < kNumSpecials + 1) {
    throw ConfigError("vocab: vocab_size must be >= 4, got " +
                      std::to_string(vocab_size));
  }
  std::vector<std::string> syms = {"<pad>", "<sos>", "<eos>"};
  const std::size_t letters = vocab_size - kNumSpecials;
  for (std::size_t i = 0; i < letters; ++i) {
    std::string name;
    std::size_t v = i;
    // a..z, aa, ab, ... (bijective base 26)
    do {
      name.insert(name.begin(), static_cast<char>('a' + v % 26));
      v = v / 26;
    } while (v-- > 0);
    syms.push_back(name);
  }
  return Vocab(std::move(syms));
}

const std::string& Vocab::symbol(int id) const {
  if (id < 0 || id >= static_cast<int>(symbols_.size())) {
    throw DataError("vocab: id " + std::to_string(id) + " out of range");
  }
  return symbols_[static_cast<std::size_t>(id)];
}

int Vocab::id_of(const std::string& symbol) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i] == symbol) return static_cast<int>(i);
  }
  return -1;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += symbol(ids[i]);
  }
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "smad-vocab-v1";
  j["symbols"] = symbols_;
  std::ofstream os(path);
  if (!os) throw DataError("vocab: cannot write " + path.string());
  os << j.dump(2) << "\n";
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("vocab: cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("vocab: bad json in " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "smad-vocab-v1") {
    throw DataError("vocab: unsupported format in " + path.string());
  }
  return Vocab(j.at("symbols").get<std::vector<std::string>>());
}

}  // namespace smad
