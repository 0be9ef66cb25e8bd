#pragma once

// Corpus-derived vocabulary: whole-herb tokens, whole symptom words,
// digit-level dosages and the prompt template markers.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rxlora/corpus.hpp"

namespace rxlora {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kFirstFreeId = 4;

enum class TokenKind : std::uint8_t { kReserved, kHerb, kWord, kMarker, kChar, kNewline };

class Vocabulary {
 public:
  static constexpr int kFormatVersion = 1;

  // Builds from explicit token sets; ids follow sorted token order.
  Vocabulary(const std::vector<std::string>& herbs, const std::vector<std::string>& words);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  TokenKind kind(TokenId id) const;
  // -1 when absent.
  TokenId id_of(std::string_view token) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.kinds_ == b.kinds_;
  }

 private:
  friend TokenSequence encode(const Vocabulary&, std::string_view);
  Vocabulary() = default;
  void index();

  std::vector<std::string> tokens_;
  std::vector<TokenKind> kinds_;
  std::unordered_map<std::string, TokenId> ids_;
  std::size_t max_token_length_ = 1;
};

// Prompt template markers, in template order.
const std::vector<std::string>& template_markers();

Vocabulary build_vocab(const Corpus& c);

TokenSequence encode(const Vocabulary& v, std::string_view s);
std::string decode(const Vocabulary& v, const TokenSequence& t);

}  // namespace rxlora
