#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "katsum/common.hpp"
#include "katsum/corpus.hpp"

namespace katsum::rouge {

struct Score {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

inline Score make_score(double overlap, double hyp_total, double ref_total) {
  Score s;
  s.precision = hyp_total > 0 ? overlap / hyp_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

inline std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& toks, int n) {
  std::map<std::vector<std::string>, int> c;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
    ++c[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                 toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return c;
}

/// Clipped n-gram overlap, n in {1, 2}.
inline Score rouge_n(const std::vector<std::string>& ref, const std::vector<std::string>& hyp, int n) {
  if (n != 1 && n != 2) throw invalid_argument("rouge_n: n must be 1 or 2");
  const auto rc = ngram_counts(ref, n);
  const auto hc = ngram_counts(hyp, n);
  long overlap = 0, ref_total = 0, hyp_total = 0;
  for (const auto& [g, c] : rc) {
    ref_total += c;
    auto it = hc.find(g);
    if (it != hc.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : hc) hyp_total += c;
  return make_score(static_cast<double>(overlap), static_cast<double>(hyp_total), static_cast<double>(ref_total));
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS-based F1 (beta = 1).
inline Score rouge_l(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  return make_score(static_cast<double>(lcs_length(ref, hyp)), static_cast<double>(hyp.size()),
                    static_cast<double>(ref.size()));
}

struct PairScore {
  Score r1, r2, rl;
};

struct Report {
  double rouge1 = 0;  ///< mean F1 x 100
  double rouge2 = 0;
  double rougeL = 0;
  std::size_t n_pairs = 0;
  std::vector<PairScore> per_pair;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["rouge1"] = rouge1;
    j["rouge2"] = rouge2;
    j["rougeL"] = rougeL;
    j["n_pairs"] = n_pairs;
    return j;
  }

  std::string per_pair_csv() const {
    std::string out = "pair,r1_p,r1_r,r1_f,r2_p,r2_r,r2_f,rl_p,rl_r,rl_f\n";
    for (std::size_t i = 0; i < per_pair.size(); ++i) {
      const auto& p = per_pair[i];
      out += std::to_string(i);
      for (const Score* s : {&p.r1, &p.r2, &p.rl})
        out += "," + exact(s->precision) + "," + exact(s->recall) + "," + exact(s->f1);
      out += "\n";
    }
    return out;
  }
};

/// Macro-average of per-pair F1 over (reference, hypothesis) texts, tokenized
/// with the corpus tokenizer.
inline Report evaluate_corpus(const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw invalid_argument("evaluate_corpus: no pairs");
  Report r;
  r.n_pairs = pairs.size();
  double s1 = 0, s2 = 0, sl = 0;
  for (const auto& [ref_text, hyp_text] : pairs) {
    const auto ref = tokenize(ref_text);
    const auto hyp = tokenize(hyp_text);
    PairScore p{rouge_n(ref, hyp, 1), rouge_n(ref, hyp, 2), rouge_l(ref, hyp)};
    s1 += p.r1.f1;
    s2 += p.r2.f1;
    sl += p.rl.f1;
    r.per_pair.push_back(p);
  }
  const double n = static_cast<double>(pairs.size());
  r.rouge1 = 100.0 * s1 / n;
  r.rouge2 = 100.0 * s2 / n;
  r.rougeL = 100.0 * sl / n;
  return r;
}

}  // namespace katsum::rouge
