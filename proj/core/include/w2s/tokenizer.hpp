#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace w2s {

/// Fixed byte-level tokenizer shared by every domain: token id = byte value.
/// Id 0 (NUL) is reserved for padding and never produced by `encode`.
struct ByteTokenizer {
  static constexpr int kVocabSize = 256;
  static constexpr int kPadId = 0;

  /// NUL bytes in `text` are dropped.
  static std::vector<int> encode(std::string_view text);
  /// Pad ids are skipped.
  static std::string decode(const std::vector<int>& tokens);
};

}  // namespace w2s
