#include "rxlora/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rxlora/error.hpp"

namespace rxlora {
namespace {

const std::vector<std::string> kReservedTokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
const std::vector<std::string> kCharTokens = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".", "g", ","};

bool is_blank(char c) { return c == ' ' || c == '\t' || c == '\r'; }
bool is_numeric(char c) { return (c >= '0' && c <= '9') || c == '.'; }
bool is_boundary(std::string_view s, std::size_t end) {
  return end >= s.size() || is_blank(s[end]) || s[end] == '\n' || s[end] == ',';
}

std::string_view kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::kReserved: return "reserved";
    case TokenKind::kHerb: return "herb";
    case TokenKind::kWord: return "word";
    case TokenKind::kMarker: return "marker";
    case TokenKind::kChar: return "char";
    case TokenKind::kNewline: return "newline";
  }
  return "word";
}

TokenKind kind_from_name(std::string_view name) {
  for (auto k : {TokenKind::kReserved, TokenKind::kHerb, TokenKind::kWord, TokenKind::kMarker, TokenKind::kChar,
                 TokenKind::kNewline}) {
    if (kind_name(k) == name) return k;
  }
  throw Error(ErrorKind::kSchema, "unknown token kind '" + std::string(name) + "'");
}

}  // namespace

const std::vector<std::string>& template_markers() {
  static const std::vector<std::string> markers = {"Symptoms:", "|", "History:", "Tongue:", "Prescription:"};
  return markers;
}

Vocabulary::Vocabulary(const std::vector<std::string>& herbs, const std::vector<std::string>& words) {
  std::map<std::string, TokenKind> free;
  const std::set<std::string> reserved(kReservedTokens.begin(), kReservedTokens.end());
  const auto add = [&](const std::string& t, TokenKind k) {
    if (t.empty() || reserved.count(t)) return;
    free.try_emplace(t, k);
  };
  // Insertion order sets precedence when one string has several roles.
  for (const auto& h : herbs) add(h, TokenKind::kHerb);
  add("\n", TokenKind::kNewline);
  for (const auto& c : kCharTokens) add(c, TokenKind::kChar);
  for (const auto& m : template_markers()) add(m, m == "|" ? TokenKind::kWord : TokenKind::kMarker);
  for (const auto& w : words) add(w, TokenKind::kWord);

  tokens_ = kReservedTokens;
  kinds_.assign(tokens_.size(), TokenKind::kReserved);
  for (const auto& [t, k] : free) {
    tokens_.push_back(t);
    kinds_.push_back(k);
  }
  index();
}

void Vocabulary::index() {
  ids_.clear();
  max_token_length_ = 1;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    ids_.emplace(tokens_[i], static_cast<TokenId>(i));
    max_token_length_ = std::max(max_token_length_, tokens_[i].size());
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorKind::kInvalidTokenId, "token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenKind Vocabulary::kind(TokenId id) const {
  token(id);
  return kinds_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id_of(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? -1 : it->second;
}

std::string Vocabulary::to_json() const {
  nlohmann::json tokens = nlohmann::json::object();
  nlohmann::json kinds = nlohmann::json::object();
  for (std::size_t i = kFirstFreeId; i < tokens_.size(); ++i) {
    tokens[tokens_[i]] = i;
    kinds[tokens_[i]] = kind_name(kinds_[i]);
  }
  nlohmann::json j = {{"format", "rxlora-vocab"}, {"version", kFormatVersion}, {"tokens", tokens}, {"kinds", kinds}};
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kSchema, std::string("vocabulary: ") + e.what());
  }
  if (j.value("format", "") != "rxlora-vocab" || j.value("version", 0) != kFormatVersion) {
    throw Error(ErrorKind::kSchema, "vocabulary: unsupported format or version");
  }
  Vocabulary v;
  const auto& tokens = j.at("tokens");
  const auto& kinds = j.at("kinds");
  v.tokens_.assign(kFirstFreeId + tokens.size(), std::string());
  v.kinds_.assign(v.tokens_.size(), TokenKind::kReserved);
  for (std::size_t i = 0; i < kReservedTokens.size(); ++i) v.tokens_[i] = kReservedTokens[i];
  for (const auto& [t, id_json] : tokens.items()) {
    const auto id = id_json.get<std::size_t>();
    if (id < static_cast<std::size_t>(kFirstFreeId) || id >= v.tokens_.size() || !v.tokens_[id].empty()) {
      throw Error(ErrorKind::kSchema, "vocabulary: ids are not a bijection onto [4, size)");
    }
    v.tokens_[id] = t;
    v.kinds_[id] = kind_from_name(kinds.at(t).get<std::string>());
  }
  v.index();
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Vocabulary build_vocab(const Corpus& c) {
  if (c.empty()) throw Error(ErrorKind::kEmptyCorpus, "cannot build a vocabulary from an empty corpus");
  std::vector<std::string> herbs;
  for (const auto& h : c.herb_vocabulary()) herbs.push_back(h.str());
  std::set<std::string> words;
  const auto add_words = [&](const std::string& text) {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && (is_blank(text[i]) || text[i] == '\n')) ++i;
      std::size_t j = i;
      while (j < text.size() && !is_blank(text[j]) && text[j] != '\n') ++j;
      if (j > i) words.emplace(text.substr(i, j - i));
      i = j;
    }
  };
  for (const auto& r : c.records()) {
    add_words(r.chief_complaint);
    add_words(r.history);
    add_words(r.tongue);
  }
  return Vocabulary(herbs, std::vector<std::string>(words.begin(), words.end()));
}

TokenSequence encode(const Vocabulary& v, std::string_view s) {
  TokenSequence out;
  bool in_number = false;
  std::size_t i = 0;
  const auto longest = [&](TokenKind wanted_a, TokenKind wanted_b) -> std::pair<TokenId, std::size_t> {
    const std::size_t max_len = std::min(v.max_token_length_, s.size() - i);
    for (std::size_t len = max_len; len >= 1; --len) {
      const auto it = v.ids_.find(std::string(s.substr(i, len)));
      if (it == v.ids_.end()) continue;
      const TokenKind k = v.kinds_[static_cast<std::size_t>(it->second)];
      if ((k == wanted_a || k == wanted_b) && is_boundary(s, i + len)) return {it->second, len};
    }
    return {-1, 0};
  };
  const auto emit_char = [&](char c) {
    out.push_back(v.id_of(std::string_view(&c, 1)));
    ++i;
  };

  while (i < s.size()) {
    const char c = s[i];
    if (is_blank(c)) {
      in_number = false;
      ++i;
      continue;
    }
    if (c == '\n') {
      out.push_back(v.id_of("\n"));
      in_number = false;
      ++i;
      continue;
    }
    if (in_number && (is_numeric(c) || c == 'g')) {
      in_number = c != 'g';
      emit_char(c);
      continue;
    }
    in_number = false;
    auto [id, len] = longest(TokenKind::kHerb, TokenKind::kHerb);
    if (id < 0) std::tie(id, len) = longest(TokenKind::kWord, TokenKind::kMarker);
    if (id >= 0) {
      out.push_back(id);
      i += len;
      continue;
    }
    if (is_numeric(c) || c == ',') {
      in_number = is_numeric(c);
      emit_char(c);
      continue;
    }
    out.push_back(kUnk);
    while (!is_boundary(s, i)) ++i;
  }
  return out;
}

std::string decode(const Vocabulary& v, const TokenSequence& t) {
  enum class Cls { kNone, kWord, kMarker, kNum, kUnit, kComma, kNewline };
  std::string out;
  Cls prev = Cls::kNone;
  for (TokenId id : t) {
    const TokenKind kind = v.kind(id);
    const std::string& text = v.token(id);
    if (kind == TokenKind::kReserved && id != kUnk) continue;

    Cls cur = Cls::kWord;
    if (kind == TokenKind::kMarker) {
      cur = Cls::kMarker;
    } else if (kind == TokenKind::kNewline) {
      cur = Cls::kNewline;
    } else if (kind == TokenKind::kChar) {
      if (text == ",") {
        cur = Cls::kComma;
      } else if (text == "g") {
        cur = prev == Cls::kNum ? Cls::kUnit : Cls::kWord;
      } else {
        cur = Cls::kNum;
      }
    }

    std::string_view gap;
    if (prev != Cls::kNone) {
      switch (cur) {
        case Cls::kNewline:
          gap = prev == Cls::kMarker ? " " : "";
          break;
        case Cls::kComma:
        case Cls::kUnit:
          gap = "";
          break;
        case Cls::kNum:
          gap = (prev == Cls::kNum || prev == Cls::kNewline) ? "" : " ";
          break;
        default:
          if (prev == Cls::kNewline) {
            gap = "";
          } else if (prev == Cls::kMarker && text == "|") {
            gap = "  ";
          } else {
            gap = " ";
          }
      }
    }
    out += gap;
    out += text;
    prev = cur;
  }
  return out;
}

}  // namespace rxlora
