#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "urlguard/error.hpp"
#include "urlguard/url.hpp"

namespace urlguard {

inline constexpr std::size_t kSeqLen = 200;
inline constexpr std::size_t kVocabSymbols = 70;
inline constexpr std::uint8_t kPadIndex = 0;
inline constexpr std::uint8_t kUnknownIndex = 71;
inline constexpr std::size_t kEmbeddingRows = 72;

// a-z -> 1..26, 0-9 -> 27..36, then the specials -> 37..70.
inline constexpr std::string_view kDefaultVocab =
    "abcdefghijklmnopqrstuvwxyz0123456789"
    "-._~:/?#[]@!$&'()*+,;=%<>\"{}|\\^ `\t";
static_assert(kDefaultVocab.size() == kVocabSymbols);

class CharVocab {
 public:
  CharVocab() : CharVocab(kDefaultVocab) {}

  explicit CharVocab(std::string_view symbols) : symbols_(symbols) {
    if (symbols.size() != kVocabSymbols) {
      fail(Errc::kSchemaMismatch, "vocabulary must hold exactly 70 symbols");
    }
    table_.fill(kUnknownIndex);
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      auto& slot = table_[static_cast<unsigned char>(symbols[i])];
      if (slot != kUnknownIndex) {
        fail(Errc::kSchemaMismatch, "duplicate vocabulary symbol");
      }
      slot = static_cast<std::uint8_t>(i + 1);
    }
  }

  std::uint8_t index_of(char c) const {
    return table_[static_cast<unsigned char>(c)];
  }

  const std::string& symbols() const { return symbols_; }

  bool operator==(const CharVocab& other) const {
    return symbols_ == other.symbols_;
  }

 private:
  std::string symbols_;
  std::array<std::uint8_t, 256> table_{};
};

// Content is right-aligned: long inputs keep their last `seq_len` bytes and
// short inputs are zero-padded on the left.
template <std::size_t N = kSeqLen>
using CharSequenceN = std::array<std::uint8_t, N>;
using CharSequence = CharSequenceN<kSeqLen>;

template <std::size_t N = kSeqLen>
CharSequenceN<N> encode_text(std::string_view text, const CharVocab& vocab) {
  CharSequenceN<N> seq{};
  if (text.size() > N) text = text.substr(text.size() - N);
  const std::size_t offset = N - text.size();
  for (std::size_t i = 0; i < text.size(); ++i) {
    seq[offset + i] = vocab.index_of(text[i]);
  }
  return seq;
}

inline std::vector<std::uint8_t> encode_text(std::string_view text,
                                             const CharVocab& vocab,
                                             std::size_t seq_len) {
  std::vector<std::uint8_t> seq(seq_len, kPadIndex);
  if (text.size() > seq_len) text = text.substr(text.size() - seq_len);
  const std::size_t offset = seq_len - text.size();
  for (std::size_t i = 0; i < text.size(); ++i) {
    seq[offset + i] = vocab.index_of(text[i]);
  }
  return seq;
}

inline CharSequence encode(const ParsedUrl& p, const CharVocab& vocab = CharVocab{}) {
  return encode_text<kSeqLen>(p.normalized, vocab);
}

}  // namespace urlguard
