#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "katsum/common.hpp"
#include "katsum/corpus.hpp"

namespace katsum {

struct Triplet {
  std::string head;
  std::string relation;
  std::string tail;
  std::string doc_id;
  std::size_t sent_idx = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct Lexicon {
  std::unordered_set<std::string> verbs;
  std::unordered_set<std::string> stopwords;
  std::unordered_set<std::string> prepositions;

  bool is_verb(const std::string& t) const { return verbs.count(t) != 0; }
  bool is_stopword(const std::string& t) const { return stopwords.count(t) != 0; }
  bool is_preposition(const std::string& t) const { return prepositions.count(t) != 0; }

  void validate() const {
    static const char* specials[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
    if (verbs.empty() || stopwords.empty() || prepositions.empty()) throw config_error("lexicon sets must be non-empty");
    for (const char* s : specials)
      if (verbs.count(s) || stopwords.count(s) || prepositions.count(s))
        throw config_error(std::string("lexicon contains special token ") + s);
  }

  static std::unordered_set<std::string> read_set(const std::string& path) {
    std::unordered_set<std::string> out;
    for (const auto& line : split(read_file(path), '\n')) {
      auto t = trim(line);
      if (!t.empty()) out.insert(std::move(t));
    }
    return out;
  }

  static Lexicon load(const std::string& verbs_path, const std::string& stopwords_path,
                      const std::string& prepositions_path) {
    Lexicon lex{read_set(verbs_path), read_set(stopwords_path), read_set(prepositions_path)};
    lex.validate();
    return lex;
  }

  /// Loads verbs.txt, stopwords.txt and prepositions.txt from `dir`.
  static Lexicon load_dir(const std::string& dir) {
    return load(dir + "/verbs.txt", dir + "/stopwords.txt", dir + "/prepositions.txt");
  }
};

inline bool is_determiner(std::string_view t) { return t == "a" || t == "an" || t == "the"; }

inline bool is_punct_token(std::string_view t) {
  for (char c : t)
    if (!is_punct_char(c)) return false;
  return !t.empty();
}

/// Lowercase, collapse whitespace, strip outer punctuation and leading determiners.
inline std::string normalize_phrase(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += u < 0x80 ? static_cast<char>(std::tolower(u)) : c;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));

  auto strip_outer = [&] {
    while (!words.empty()) {
      auto& f = words.front();
      std::size_t b = 0;
      while (b < f.size() && is_punct_char(f[b])) ++b;
      f.erase(0, b);
      if (f.empty()) {
        words.erase(words.begin());
        continue;
      }
      break;
    }
    while (!words.empty()) {
      auto& l = words.back();
      std::size_t e = l.size();
      while (e > 0 && is_punct_char(l[e - 1])) --e;
      l.resize(e);
      if (l.empty()) {
        words.pop_back();
        continue;
      }
      break;
    }
  };
  strip_outer();
  while (!words.empty() && is_determiner(words.front())) {
    words.erase(words.begin());
    strip_outer();
  }
  return join(words);
}

/// Subject-verb-object heuristic applied per sentence:
///   relation = first verb-lexicon token plus the prepositions right after it;
///   head     = maximal run of content tokens ending just before the verb;
///   tail     = first maximal run of content tokens after the relation.
/// Content tokens are neither stopwords nor punctuation. At most one triplet
/// per sentence; self-loops are dropped.
inline std::vector<Triplet> extract_from_text(std::string_view text, const std::string& doc_id, const Lexicon& lex) {
  std::vector<Triplet> out;
  const auto sentences = sentence_split(text);
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const auto toks = tokenize(sentences[s]);
    auto is_content = [&](const std::string& t) { return !lex.is_stopword(t) && !is_punct_token(t); };

    std::size_t verb = toks.size();
    for (std::size_t i = 0; i < toks.size(); ++i)
      if (lex.is_verb(toks[i])) {
        verb = i;
        break;
      }
    if (verb == toks.size()) continue;

    std::size_t rel_end = verb + 1;
    while (rel_end < toks.size() && lex.is_preposition(toks[rel_end])) ++rel_end;

    std::size_t head_begin = verb;
    while (head_begin > 0 && is_content(toks[head_begin - 1])) --head_begin;

    std::size_t tail_begin = rel_end;
    while (tail_begin < toks.size() && !is_content(toks[tail_begin])) ++tail_begin;
    std::size_t tail_end = tail_begin;
    while (tail_end < toks.size() && is_content(toks[tail_end])) ++tail_end;

    auto span = [&](std::size_t b, std::size_t e) {
      return std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(b),
                                      toks.begin() + static_cast<std::ptrdiff_t>(e));
    };
    Triplet t{normalize_phrase(join(span(head_begin, verb))), normalize_phrase(join(span(verb, rel_end))),
              normalize_phrase(join(span(tail_begin, tail_end))), doc_id, s};
    if (t.head.empty() || t.relation.empty() || t.tail.empty() || t.head == t.tail) continue;
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<Triplet> extract_triplets(const Document& doc, const Lexicon& lex) {
  return extract_from_text(doc.source, doc.id, lex);
}

inline std::vector<Triplet> extract_summary_triplets(const Document& doc, const Lexicon& lex) {
  return extract_from_text(doc.summary, doc.id, lex);
}

inline std::string triplet_tsv_row(const Triplet& t) {
  return t.head + "\t" + t.relation + "\t" + t.tail + "\t" + t.doc_id + "\t" + std::to_string(t.sent_idx);
}

inline std::string to_tsv(const std::vector<Triplet>& triplets) {
  std::string out;
  for (const auto& t : triplets) out += triplet_tsv_row(t) + "\n";
  return out;
}

struct TripletLoadResult {
  std::vector<Triplet> triplets;
  std::size_t dropped = 0;  ///< rows whose fields normalized to empty (or self-loops)
};

/// Parses `head\trelation\ttail\tdoc_id\tsent_idx` rows; `extra_columns` more are tolerated
/// and returned through `extras` (used by the labeled-triplet format).
inline TripletLoadResult parse_triplet_tsv(const std::string& text, const std::string& name, std::size_t extra_columns = 0,
                                           std::vector<std::vector<std::string>>* extras = nullptr) {
  TripletLoadResult r;
  const auto lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty() && i + 1 == lines.size()) break;
    const std::string where = name + ":" + std::to_string(i + 1);
    auto cols = split(lines[i], '\t');
    if (cols.size() != 5 + extra_columns)
      throw format_error(where + ": expected " + std::to_string(5 + extra_columns) + " tab-separated columns, got " +
                         std::to_string(cols.size()));
    const auto idx = parse_int(cols[4], where + " sent_idx");
    if (idx < 0) throw format_error(where + ": negative sent_idx");
    Triplet t{normalize_phrase(cols[0]), normalize_phrase(cols[1]), normalize_phrase(cols[2]), cols[3],
              static_cast<std::size_t>(idx)};
    if (t.head.empty() || t.relation.empty() || t.tail.empty() || t.head == t.tail) {
      ++r.dropped;
      continue;
    }
    r.triplets.push_back(std::move(t));
    if (extras) extras->emplace_back(cols.begin() + 5, cols.end());
  }
  return r;
}

inline TripletLoadResult load_triplets(const std::string& path) { return parse_triplet_tsv(read_file(path), path); }

}  // namespace katsum
