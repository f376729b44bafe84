#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pren/errors.hpp"

namespace pren {

/// Symbol table: alphabet characters, then <eos>, <pad>, and <sos>.
/// <sos> is a decoder input only; output classes stop at <pad>.
class Vocabulary {
 public:
  explicit Vocabulary(std::string alphabet) : alphabet_(std::move(alphabet)) {
    for (std::size_t i = 0; i < alphabet_.size(); ++i) {
      if (!index_.emplace(alphabet_[i], static_cast<int>(i)).second)
        throw ConfigError(std::string("vocabulary: duplicate symbol '") + alphabet_[i] + "'");
    }
  }

  /// The first `size` lowercase letters.
  static Vocabulary toy(std::size_t size) {
    if (size == 0 || size > 26) throw ConfigError("vocabulary: toy alphabet size must be 1..26");
    std::string a;
    for (std::size_t i = 0; i < size; ++i) a.push_back(static_cast<char>('a' + i));
    return Vocabulary(a);
  }

  const std::string& alphabet() const { return alphabet_; }
  std::size_t alphabet_size() const { return alphabet_.size(); }
  int eos() const { return static_cast<int>(alphabet_.size()); }
  int pad() const { return eos() + 1; }
  int sos() const { return eos() + 2; }
  /// Output classes K: alphabet + <eos> + <pad>.
  std::size_t num_classes() const { return alphabet_.size() + 2; }
  /// Decoder input symbols: output classes + <sos>.
  std::size_t num_inputs() const { return alphabet_.size() + 3; }

  bool contains(char c) const { return index_.count(c) > 0; }

  int index(char c) const {
    auto it = index_.find(c);
    if (it == index_.end()) throw UsageError(std::string("symbol '") + c + "' not in vocabulary");
    return it->second;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(index(c));
    return out;
  }

  /// Maps indices back to text; stops at the first <eos>, skips other specials.
  std::string decode(const std::vector<int>& ids) const {
    std::string s;
    for (int i : ids) {
      if (i == eos()) break;
      if (i >= 0 && static_cast<std::size_t>(i) < alphabet_.size()) s.push_back(alphabet_[static_cast<std::size_t>(i)]);
    }
    return s;
  }

 private:
  std::string alphabet_;
  std::unordered_map<char, int> index_;
};

}  // namespace pren
