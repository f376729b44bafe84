#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pren/errors.hpp"
#include "pren/vocab.hpp"

namespace pren {

/// Label expanded to L positions: g_1..g_l, <eos>, then <pad>. The loss
/// mask is true on the first l+1 positions.
struct TargetSeq {
  std::vector<int> ids;
  std::vector<bool> mask;
  /// Decoder input for teacher forcing: <sos> followed by ids[0 .. L-2].
  std::vector<int> decoder_input;
  std::size_t length = 0;  // l
};

inline TargetSeq make_targets(std::string_view text, const Vocabulary& vocab, std::size_t L,
                              std::string_view sample_id = {}) {
  if (L < 2) throw ConfigError("make_targets: L must be >= 2");
  if (text.size() + 1 > L) {
    throw UsageError("make_targets: text of length " + std::to_string(text.size()) +
                     (sample_id.empty() ? std::string() : " (sample " + std::string(sample_id) + ")") +
                     " leaves no room for <eos> within L=" + std::to_string(L));
  }
  TargetSeq t;
  t.length = text.size();
  t.ids = vocab.encode(text);
  t.ids.push_back(vocab.eos());
  t.mask.assign(t.ids.size(), true);
  t.ids.resize(L, vocab.pad());
  t.mask.resize(L, false);
  t.decoder_input.reserve(L);
  t.decoder_input.push_back(vocab.sos());
  t.decoder_input.insert(t.decoder_input.end(), t.ids.begin(), t.ids.end() - 1);
  return t;
}

}  // namespace pren
