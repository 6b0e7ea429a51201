#pragma once

#include <algorithm>
#include <vector>

#include <Eigen/Dense>

#include "katsum/common.hpp"
#include "katsum/kg_embed.hpp"
#include "katsum/triplet_extract.hpp"

namespace katsum {

/// Resolves phrase triplets to e_i = [v_h; v_r; v_t]. Phrases missing from the
/// trained tables fall back to the mean entity (resp. relation) vector.
class TripletEmbedder {
 public:
  explicit TripletEmbedder(const KGEmbeddings& emb)
      : emb_(&emb),
        mean_entity_(emb.entity.rows() ? Eigen::VectorXd(emb.entity.colwise().mean().transpose())
                                       : Eigen::VectorXd::Zero(emb.dim())),
        mean_relation_(emb.relation.rows() ? Eigen::VectorXd(emb.relation.colwise().mean().transpose())
                                           : Eigen::VectorXd::Zero(emb.dim())) {}

  Eigen::VectorXd operator()(const Triplet& t) const {
    const auto d = emb_->dim();
    Eigen::VectorXd e(3 * d);
    e.segment(0, d) = entity(t.head);
    e.segment(d, d) = relation(t.relation);
    e.segment(2 * d, d) = entity(t.tail);
    return e;
  }

  int dim() const { return 3 * emb_->dim(); }

 private:
  Eigen::VectorXd entity(const std::string& p) const {
    const int id = emb_->entity_id(p);
    return id < 0 ? mean_entity_ : Eigen::VectorXd(emb_->entity.row(id).transpose());
  }
  Eigen::VectorXd relation(const std::string& p) const {
    const int id = emb_->relation_id(p);
    return id < 0 ? mean_relation_ : Eigen::VectorXd(emb_->relation.row(id).transpose());
  }

  const KGEmbeddings* emb_;
  Eigen::VectorXd mean_entity_;
  Eigen::VectorXd mean_relation_;
};

/// Cosine similarity.
inline double similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw invalid_argument("similarity: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) throw invalid_argument("similarity: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

struct LabeledTriplet {
  Triplet triplet;
  Eigen::VectorXd embedding;
  int label = 0;
  double best_similarity = -1.0;
};

/// Each source triplet gets label 1 iff its best cosine match among the
/// summary triplets reaches `threshold`. An empty summary set labels all 0
/// with best_similarity = -1.
inline std::vector<LabeledTriplet> label_triplets(const std::vector<Triplet>& source, const std::vector<Triplet>& summary,
                                                  const TripletEmbedder& embed, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw invalid_argument("label threshold must be in (0, 1]");
  std::vector<Eigen::VectorXd> summary_vecs;
  summary_vecs.reserve(summary.size());
  for (const auto& s : summary) summary_vecs.push_back(embed(s));
  std::vector<LabeledTriplet> out;
  out.reserve(source.size());
  for (const auto& t : source) {
    LabeledTriplet l{t, embed(t), 0, -1.0};
    for (const auto& s : summary_vecs) l.best_similarity = std::max(l.best_similarity, similarity(l.embedding, s));
    l.label = !summary_vecs.empty() && l.best_similarity >= threshold ? 1 : 0;
    out.push_back(std::move(l));
  }
  return out;
}

inline std::vector<LabeledTriplet> label_triplets(const std::vector<Triplet>& source, const std::vector<Triplet>& summary,
                                                  const KGEmbeddings& emb, double threshold) {
  return label_triplets(source, summary, TripletEmbedder(emb), threshold);
}

inline std::string to_labeled_tsv(const std::vector<LabeledTriplet>& data) {
  std::string out;
  for (const auto& l : data) out += triplet_tsv_row(l.triplet) + "\t" + std::to_string(l.label) + "\t" + exact(l.best_similarity) + "\n";
  return out;
}

/// Reads the labeled-triplet TSV and re-embeds each row through `embed`.
inline std::vector<LabeledTriplet> parse_labeled_tsv(const std::string& text, const std::string& name,
                                                     const TripletEmbedder& embed) {
  std::vector<std::vector<std::string>> extras;
  auto rows = parse_triplet_tsv(text, name, 2, &extras);
  std::vector<LabeledTriplet> out;
  for (std::size_t i = 0; i < rows.triplets.size(); ++i) {
    const auto label = parse_int(extras[i][0], name + " label");
    if (label != 0 && label != 1) throw format_error(name + ": label must be 0 or 1");
    out.push_back({rows.triplets[i], embed(rows.triplets[i]), static_cast<int>(label),
                   parse_double(extras[i][1], name + " best_similarity")});
  }
  return out;
}

struct ClassifierParams {
  Eigen::VectorXd W;
  double b = 0.0;

  std::string serialize() const {
    std::string out = std::to_string(W.size()) + "\n";
    for (Eigen::Index i = 0; i < W.size(); ++i) out += (i ? " " : "") + exact(W[i]);
    out += "\n" + exact(b) + "\n";
    return out;
  }

  static ClassifierParams parse(const std::string& text, const std::string& name = "classifier") {
    const auto lines = split(text, '\n');
    if (lines.size() < 3) throw format_error(name + ": truncated classifier file");
    const auto dim = parse_int(lines[0], name + ":1 dim");
    if (dim < 1) throw format_error(name + ":1: dim must be positive");
    const auto ws = split(lines[1], ' ');
    if (ws.size() != static_cast<std::size_t>(dim)) throw format_error(name + ":2: expected " + lines[0] + " weights");
    ClassifierParams p;
    p.W.resize(dim);
    for (long long i = 0; i < dim; ++i) p.W[i] = parse_double(ws[static_cast<std::size_t>(i)], name + ":2");
    p.b = parse_double(lines[2], name + ":3");
    if (!p.W.allFinite() || !std::isfinite(p.b)) throw format_error(name + ": non-finite parameters");
    return p;
  }

  static ClassifierParams load(const std::string& path) { return parse(read_file(path), path); }
  void save(const std::string& path) const { write_file(path, serialize()); }
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

/// y_hat = sigmoid(W . e + b)
inline double classify(const Eigen::VectorXd& e, const ClassifierParams& p) {
  if (e.size() != p.W.size()) throw invalid_argument("classify: embedding dim " + std::to_string(e.size()) +
                                                     " != classifier dim " + std::to_string(p.W.size()));
  return sigmoid(p.W.dot(e) + p.b);
}

/// Binary cross-entropy of one example in logit form: softplus(z) - y z.
inline double bce(double z, int y) {
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - y * z;
}

/// Mean BCE over `idx` (or over all of `data` when idx is empty).
inline double bce_loss(const ClassifierParams& p, const std::vector<LabeledTriplet>& data,
                       const std::vector<std::size_t>& idx = {}) {
  double s = 0;
  const std::size_t n = idx.empty() ? data.size() : idx.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& d = data[idx.empty() ? k : idx[k]];
    s += bce(p.W.dot(d.embedding) + p.b, d.label);
  }
  return s / static_cast<double>(n);
}

inline ClassifierParams bce_gradient(const ClassifierParams& p, const std::vector<LabeledTriplet>& data,
                                     const std::vector<std::size_t>& idx = {}) {
  ClassifierParams g{Eigen::VectorXd::Zero(p.W.size()), 0.0};
  const std::size_t n = idx.empty() ? data.size() : idx.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& d = data[idx.empty() ? k : idx[k]];
    const double err = sigmoid(p.W.dot(d.embedding) + p.b) - d.label;
    g.W += err * d.embedding;
    g.b += err;
  }
  g.W /= static_cast<double>(n);
  g.b /= static_cast<double>(n);
  return g;
}

struct ClassifierConfig {
  double lr = 0.1;
  int epochs = 5;
  int steps_per_epoch = 10000;
  int batch = 32;
  std::uint64_t seed = 1;
};

struct ClassifierResult {
  ClassifierParams params;
  std::vector<double> loss_trace;  ///< full-data mean BCE after each epoch
};

/// Mini-batch gradient descent on mean BCE; batches are drawn with replacement.
inline ClassifierResult train_classifier(const std::vector<LabeledTriplet>& data, const ClassifierConfig& cfg) {
  if (data.empty()) throw invalid_argument("train_classifier: no data");
  bool has0 = false, has1 = false;
  for (const auto& d : data) (d.label ? has1 : has0) = true;
  if (!has0 || !has1) throw invalid_argument("train_classifier: labeled data contains a single class");
  if (cfg.lr <= 0 || cfg.epochs < 0 || cfg.steps_per_epoch < 1 || cfg.batch < 1)
    throw config_error("invalid classifier lr/epochs/steps/batch");
  const auto dim = data.front().embedding.size();
  for (const auto& d : data)
    if (d.embedding.size() != dim) throw invalid_argument("train_classifier: inconsistent embedding dims");

  ClassifierResult res{{Eigen::VectorXd::Zero(dim), 0.0}, {}};
  Rng rng(cfg.seed);
  std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      for (auto& i : idx) i = rng.below(data.size());
      const auto g = bce_gradient(res.params, data, idx);
      res.params.W -= cfg.lr * g.W;
      res.params.b -= cfg.lr * g.b;
    }
    const double loss = bce_loss(res.params, data);
    if (!std::isfinite(loss)) throw numeric_error("train_classifier: non-finite loss at epoch " + std::to_string(epoch));
    res.loss_trace.push_back(loss);
  }
  return res;
}

struct SelectedTriplet {
  Triplet triplet;
  Eigen::VectorXd embedding;
  double score = 0.0;  ///< classifier probability; 1.0 when selection bypassed the classifier
};

/// Keeps triplets with score >= tau, sorted by score descending (ties keep
/// extraction order), truncated to K.
inline std::vector<SelectedTriplet> select_triplets(const std::vector<Triplet>& triplets, const TripletEmbedder& embed,
                                                    const ClassifierParams& params, double tau, std::size_t K) {
  if (!(tau > 0 && tau < 1)) throw invalid_argument("decision threshold tau must be in (0, 1)");
  std::vector<SelectedTriplet> kept;
  for (const auto& t : triplets) {
    auto e = embed(t);
    const double s = classify(e, params);
    if (s >= tau) kept.push_back({t, std::move(e), s});
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  if (kept.size() > K) kept.resize(K);
  return kept;
}

/// Classification bypass: the first K extracted triplets, unscored.
inline std::vector<SelectedTriplet> select_all(const std::vector<Triplet>& triplets, const TripletEmbedder& embed,
                                               std::size_t K) {
  std::vector<SelectedTriplet> out;
  for (std::size_t i = 0; i < triplets.size() && i < K; ++i) out.push_back({triplets[i], embed(triplets[i]), 1.0});
  return out;
}

}  // namespace katsum
