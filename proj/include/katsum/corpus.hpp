#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "katsum/common.hpp"

namespace katsum {

struct Document {
  std::string id;
  std::string source;
  std::string summary;
};

enum class Split { train, valid, test };

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw invalid_argument("unknown split '" + s + "' (expected train|valid|test)");
}

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

using TokenId = int;
using IdSeq = std::vector<TokenId>;

class Vocab {
 public:
  static constexpr TokenId pad = 0;
  static constexpr TokenId bos = 1;
  static constexpr TokenId eos = 2;
  static constexpr TokenId unk = 3;
  static constexpr int num_special = 4;

  Vocab() : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"} {
    for (int i = 0; i < num_special; ++i) index_.emplace(tokens_[static_cast<std::size_t>(i)], i);
  }

  /// Appends `token` if absent; returns its id.
  TokenId add(const std::string& token) {
    auto [it, inserted] = index_.emplace(token, static_cast<TokenId>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw invalid_argument("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_special(TokenId id) { return id >= 0 && id < num_special; }

  std::string serialize() const {
    std::string out;
    for (const auto& t : tokens_) out += t + "\n";
    return out;
  }

  static Vocab parse(const std::string& text) {
    Vocab v;
    const auto lines = split(text, '\n');
    std::size_t n = lines.size();
    if (n > 0 && lines.back().empty()) --n;
    if (n < num_special) throw format_error("vocab file shorter than the four special tokens");
    for (std::size_t i = 0; i < num_special; ++i)
      if (lines[i] != v.tokens_[i]) throw format_error("vocab line " + std::to_string(i + 1) + " must be " + v.tokens_[i]);
    for (std::size_t i = num_special; i < n; ++i) {
      if (lines[i].empty() || v.contains(lines[i]))
        throw format_error("vocab line " + std::to_string(i + 1) + ": empty or duplicate token");
      v.add(lines[i]);
    }
    return v;
  }

  static Vocab load(const std::string& path) { return parse(read_file(path)); }
  void save(const std::string& path) const { write_file(path, serialize()); }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Reads the JSONL dataset format: one {"id","source","summary"} object per line.
/// Only the test split may carry empty summaries (inference-only data).
inline std::vector<Document> load_dataset(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open dataset " + path);
  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw format_error(where + ": malformed JSON record");
    }
    if (!j.is_object()) throw format_error(where + ": record is not an object");
    for (const char* key : {"id", "source", "summary"}) {
      if (!j.contains(key)) throw format_error(where + ": missing key \"" + key + "\"");
      if (!j[key].is_string()) throw format_error(where + ": key \"" + key + "\" is not a string");
    }
    if (j.size() != 3) throw format_error(where + ": unexpected keys (expected exactly id, source, summary)");
    Document d{j["id"].get<std::string>(), j["source"].get<std::string>(), j["summary"].get<std::string>()};
    if (d.id.empty()) throw format_error(where + ": empty id");
    if (trim(d.source).empty()) throw format_error(where + ": empty source");
    if (split != Split::test && trim(d.summary).empty()) throw format_error(where + ": empty summary");
    if (!seen.insert(d.id).second) throw format_error(where + ": duplicate id '" + d.id + "'");
    docs.push_back(std::move(d));
  }
  return docs;
}

inline std::string to_jsonl(const std::vector<Document>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["source"] = d.source;
    j["summary"] = d.summary;
    out += j.dump() + "\n";
  }
  return out;
}

/// Collapses every whitespace run to a single space and trims the ends.
inline std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += c;
    }
  }
  return out;
}

/// Splits after '.', '!' or '?' when followed by whitespace or end of text.
/// No abbreviation handling: "Dr. Smith" is two sentences.
inline std::vector<std::string> sentence_split(std::string_view text) {
  const std::string norm = normalize_whitespace(text);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < norm.size(); ++i) {
    const char c = norm[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == norm.size() || norm[i + 1] == ' ')) {
      out.push_back(norm.substr(start, i + 1 - start));
      start = i + 2;
      ++i;
    }
  }
  if (start < norm.size()) out.push_back(norm.substr(start));
  return out;
}

inline bool is_punct_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u);
}

/// Lowercased word tokens; every ASCII punctuation character is its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      flush();
    } else if (is_punct_char(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur += u < 0x80 ? static_cast<char>(std::tolower(u)) : c;
    }
  }
  flush();
  return out;
}

/// Tokens with corpus frequency >= min_freq over sources and summaries,
/// ordered by frequency descending then lexicographically.
inline Vocab build_vocab(const std::vector<Document>& docs, int min_freq = 2) {
  if (min_freq < 1) throw invalid_argument("min_freq must be >= 1");
  std::map<std::string, long> freq;
  for (const auto& d : docs) {
    for (const auto& t : tokenize(d.source)) ++freq[t];
    for (const auto& t : tokenize(d.summary)) ++freq[t];
  }
  if (freq.empty()) throw invalid_argument("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [tok, n] : items)
    if (n >= min_freq) v.add(tok);
  return v;
}

/// BOS + ids of the first (max_len - 2) tokens + EOS.
inline IdSeq encode(const std::vector<std::string>& tokens, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) throw invalid_argument("encode: max_len must be >= 3");
  const std::size_t n = std::min(tokens.size(), max_len - 2);
  IdSeq ids;
  ids.reserve(n + 2);
  ids.push_back(Vocab::bos);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(vocab.id(tokens[i]));
  ids.push_back(Vocab::eos);
  return ids;
}

/// Maps ids back to tokens, dropping PAD/BOS and stopping at the first EOS.
inline std::vector<std::string> decode(const IdSeq& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == Vocab::eos) break;
    if (id == Vocab::pad || id == Vocab::bos) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

inline std::string join(const std::vector<std::string>& tokens, const std::string& sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace katsum
