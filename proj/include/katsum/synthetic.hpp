#pragma once

// Synthetic news-like corpus whose summaries verbalize a subset of the
// source facts. Salient facts read "<person> <relation> <organisation>.",
// background facts "<person> <relation> <person>.", and the summary keeps the
// salient ones in source order. Filler sentences yield no triplet.

#include <algorithm>
#include <string>
#include <vector>

#include "katsum/common.hpp"
#include "katsum/corpus.hpp"

namespace katsum::synthetic {

struct Spec {
  std::size_t documents = 64;
  std::size_t facts_per_doc = 8;
  std::size_t min_salient = 2;
  std::size_t max_salient = 4;
  std::size_t max_fillers = 2;
  std::size_t names = 8;  ///< people and organisations drawn from the first `names` of each list
  std::uint64_t seed = 2024;
  std::string id_prefix = "toy";
};

inline const std::vector<std::string>& people() {
  static const std::vector<std::string> v{"Alice", "Bruno", "Carla", "Dmitri", "Elena", "Farid",
                                          "Greta", "Hiro",  "Ines",  "Jonas",  "Kemal", "Lucia"};
  return v;
}

inline const std::vector<std::string>& organisations() {
  static const std::vector<std::string> v{"Acme",  "Zenith", "Orbis",    "Nova",   "Helix",  "Vertex",
                                          "Quanta", "Lumen", "Borealis", "Cobalt", "Argon", "Summit"};
  return v;
}

inline const std::vector<std::string>& salient_relations() {
  static const std::vector<std::string> v{"founded", "acquired", "leads"};
  return v;
}

inline const std::vector<std::string>& background_relations() {
  static const std::vector<std::string> v{"visited", "praised", "advised"};
  return v;
}

inline const std::vector<std::string>& fillers() {
  static const std::vector<std::string> v{"Markets were calm.", "Details were scarce.", "Reporters were present.",
                                          "Officials were cautious."};
  return v;
}

inline std::vector<Document> generate(const Spec& spec) {
  Rng rng(spec.seed);
  if (spec.names < 2 || spec.names > people().size()) throw invalid_argument("synthetic: names must be in [2, 12]");
  const std::vector<std::string> P(people().begin(), people().begin() + static_cast<std::ptrdiff_t>(spec.names));
  const std::vector<std::string> O(organisations().begin(),
                                   organisations().begin() + static_cast<std::ptrdiff_t>(spec.names));
  std::vector<Document> docs;
  for (std::size_t d = 0; d < spec.documents; ++d) {
    const std::size_t n_salient = spec.min_salient + rng.below(spec.max_salient - spec.min_salient + 1);
    std::vector<char> salient(spec.facts_per_doc, 0);
    for (std::size_t i = 0; i < n_salient; ++i) salient[i] = 1;
    rng.shuffle(salient.begin(), salient.end());

    std::vector<std::string> sentences;
    std::vector<std::string> summary;
    std::vector<std::pair<std::string, std::string>> used;
    for (std::size_t f = 0; f < spec.facts_per_doc; ++f) {
      const auto& tails = salient[f] ? O : P;
      std::string h, t;
      do {
        h = P[rng.below(P.size())];
        t = tails[rng.below(tails.size())];
      } while (h == t || std::find(used.begin(), used.end(), std::make_pair(h, t)) != used.end());
      used.emplace_back(h, t);
      const auto& rels = salient[f] ? salient_relations() : background_relations();
      const std::string sentence = h + " " + rels[rng.below(rels.size())] + " " + t + ".";
      sentences.push_back(sentence);
      if (salient[f]) summary.push_back(sentence);
    }
    const std::size_t n_fill = rng.below(spec.max_fillers + 1);
    for (std::size_t i = 0; i < n_fill; ++i) {
      const auto pos = rng.below(sentences.size() + 1);
      sentences.insert(sentences.begin() + static_cast<std::ptrdiff_t>(pos), fillers()[rng.below(fillers().size())]);
    }
    docs.push_back({spec.id_prefix + "-" + std::to_string(d), join(sentences), join(summary)});
  }
  return docs;
}

}  // namespace katsum::synthetic
