// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace smad {

// Token inventory. Ids 0..2 are reserved specials; letters follow. The CTC
// blank is not a row of the table: it is the extra trailing class of the CTC
// head (id == size()). PAD never scores in losses, EOS terminates every
// target, BLANK never appears in attention-decoder targets.
class Vocab {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kSosId = 1;
  static constexpr int kEosId = 2;
  static constexpr int kNumSpecials = 3;

  Vocab() = default;
  explicit Vocab(std::vector<std::string> symbols);

  // vocab_size includes the specials; letters are synthesized as "a", "b",
  // ... "z", "aa", ...
  static Vocab make_letters(std::size_t vocab_size);

  std::size_t size() const { return symbols_.size(); }
  std::size_t n_letters() const { return symbols_.size() - kNumSpecials; }
  int blank_id() const { return static_cast<int>(symbols_.size()); }

  const std::string& symbol(int id) const;
  int id_of(const std::string& symbol) const;  // -1 when unknown
  bool is_letter(int id) const {
    return id >= kNumSpecials && id < static_cast<int>(symbols_.size());
  }

  std::string detokenize(const std::vector<int>& ids) const;  // space-joined

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> symbols_;
};

}  // namespace smad
