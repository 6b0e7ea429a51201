#pragma once

#include <algorithm>
#include <functional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "katsum/common.hpp"
#include "katsum/triplet_extract.hpp"

namespace katsum {

struct Triple {
  int h = 0;
  int r = 0;
  int t = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
};

/// Corpus-level graph: entity/relation vocabularies in first-occurrence order,
/// deduplicated triples, and for each triple the indices of the input triplets
/// that produced it.
class KnowledgeGraph {
 public:
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  std::vector<Triple> triples;
  std::vector<std::vector<std::size_t>> provenance;

  int entity_id(const std::string& phrase) const { return find(entity_index_, phrase); }
  int relation_id(const std::string& phrase) const { return find(relation_index_, phrase); }

  bool contains(const Triple& x) const { return triple_index_.count(key(x)) != 0; }

  /// True if some entity can replace the head (resp. tail) of `x` without hitting a known triple.
  bool head_corruptible(const Triple& x) const { return count(heads_per_rt_, pair_key(x.r, x.t)) < entities.size(); }
  bool tail_corruptible(const Triple& x) const { return count(tails_per_hr_, pair_key(x.h, x.r)) < entities.size(); }

  int add_entity(const std::string& p) { return intern(entity_index_, entities, p); }
  int add_relation(const std::string& p) { return intern(relation_index_, relations, p); }

  /// Inserts `x`, recording `source_index` as provenance. Returns the triple index.
  std::size_t add_triple(const Triple& x, std::size_t source_index) {
    auto [it, inserted] = triple_index_.emplace(key(x), triples.size());
    if (inserted) {
      triples.push_back(x);
      provenance.emplace_back();
      ++heads_per_rt_[pair_key(x.r, x.t)];
      ++tails_per_hr_[pair_key(x.h, x.r)];
    }
    provenance[it->second].push_back(source_index);
    return it->second;
  }

 private:
  static std::uint64_t key(const Triple& x) {
    return (static_cast<std::uint64_t>(x.h) << 42) ^ (static_cast<std::uint64_t>(x.r) << 21) ^
           static_cast<std::uint64_t>(x.t);
  }
  static std::uint64_t pair_key(int a, int b) { return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b); }
  static std::size_t count(const std::unordered_map<std::uint64_t, std::size_t>& m, std::uint64_t k) {
    auto it = m.find(k);
    return it == m.end() ? 0 : it->second;
  }
  static int find(const std::unordered_map<std::string, int>& m, const std::string& p) {
    auto it = m.find(p);
    return it == m.end() ? -1 : it->second;
  }
  static int intern(std::unordered_map<std::string, int>& m, std::vector<std::string>& names, const std::string& p) {
    auto [it, inserted] = m.emplace(p, static_cast<int>(names.size()));
    if (inserted) names.push_back(p);
    return it->second;
  }

  std::unordered_map<std::string, int> entity_index_;
  std::unordered_map<std::string, int> relation_index_;
  std::unordered_map<std::uint64_t, std::size_t> triple_index_;
  std::unordered_map<std::uint64_t, std::size_t> heads_per_rt_;
  std::unordered_map<std::uint64_t, std::size_t> tails_per_hr_;
};

inline KnowledgeGraph build_graph(const std::vector<Triplet>& triplets) {
  if (triplets.empty()) throw invalid_argument("build_graph: no triplets");
  KnowledgeGraph g;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& x = triplets[i];
    const int h = g.add_entity(x.head);
    const int t = g.add_entity(x.tail);
    const int r = g.add_relation(x.relation);
    g.add_triple({h, r, t}, i);
  }
  return g;
}

enum class Norm { L1, L2 };

inline const char* to_string(Norm n) { return n == Norm::L1 ? "L1" : "L2"; }

inline Norm parse_norm(const std::string& s) {
  if (s == "L1" || s == "l1") return Norm::L1;
  if (s == "L2" || s == "l2") return Norm::L2;
  throw config_error("unknown norm '" + s + "' (expected L1|L2)");
}

/// Entity and relation tables (one row per vector) plus the phrase vocabularies
/// needed to resolve triplets at inference time.
struct KGEmbeddings {
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  Eigen::MatrixXd entity;    ///< |E| x d
  Eigen::MatrixXd relation;  ///< |R| x d
  Norm norm = Norm::L2;
  double gamma = 1.0;

  int dim() const { return static_cast<int>(entity.cols()); }

  void check_ids(const Triple& x) const {
    if (x.h < 0 || x.h >= entity.rows() || x.t < 0 || x.t >= entity.rows() || x.r < 0 || x.r >= relation.rows())
      throw invalid_argument("triple ids out of range");
  }

  void build_index() {
    entity_index_.clear();
    relation_index_.clear();
    for (std::size_t i = 0; i < entities.size(); ++i) entity_index_.emplace(entities[i], static_cast<int>(i));
    for (std::size_t i = 0; i < relations.size(); ++i) relation_index_.emplace(relations[i], static_cast<int>(i));
  }
  int entity_id(const std::string& p) const {
    auto it = entity_index_.find(p);
    return it == entity_index_.end() ? -1 : it->second;
  }
  int relation_id(const std::string& p) const {
    auto it = relation_index_.find(p);
    return it == relation_index_.end() ? -1 : it->second;
  }

  std::string serialize() const {
    std::string out = std::to_string(dim()) + " " + std::to_string(entity.rows()) + " " + std::to_string(relation.rows()) +
                      " " + to_string(norm) + " " + exact(gamma) + "\n";
    auto rows = [&](const std::vector<std::string>& names, const Eigen::MatrixXd& m) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out += names[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.cols(); ++j) out += "\t" + exact(m(i, j));
        out += "\n";
      }
    };
    rows(entities, entity);
    rows(relations, relation);
    return out;
  }

  static KGEmbeddings parse(const std::string& text, const std::string& name = "embeddings") {
    const auto lines = split(text, '\n');
    if (lines.empty()) throw format_error(name + ": empty file");
    const auto header = split(lines[0], ' ');
    if (header.size() != 5) throw format_error(name + ":1: header must be 'd |E| |R| norm gamma'");
    const auto d = parse_int(header[0], name + ":1 d");
    const auto ne = parse_int(header[1], name + ":1 |E|");
    const auto nr = parse_int(header[2], name + ":1 |R|");
    if (d < 1 || ne < 0 || nr < 0) throw format_error(name + ":1: bad sizes");
    KGEmbeddings e;
    e.norm = parse_norm(header[3]);
    e.gamma = parse_double(header[4], name + ":1 gamma");
    e.entity.resize(ne, d);
    e.relation.resize(nr, d);
    if (lines.size() < static_cast<std::size_t>(1 + ne + nr)) throw format_error(name + ": truncated table");
    auto read_rows = [&](std::size_t first, long long count, std::vector<std::string>& names, Eigen::MatrixXd& m) {
      for (long long i = 0; i < count; ++i) {
        const auto lineno = first + static_cast<std::size_t>(i);
        const auto cols = split(lines[lineno], '\t');
        const std::string where = name + ":" + std::to_string(lineno + 1);
        if (cols.size() != static_cast<std::size_t>(d + 1)) throw format_error(where + ": expected phrase + d values");
        names.push_back(cols[0]);
        for (long long j = 0; j < d; ++j) m(i, j) = parse_double(cols[static_cast<std::size_t>(j + 1)], where);
      }
    };
    read_rows(1, ne, e.entities, e.entity);
    read_rows(static_cast<std::size_t>(1 + ne), nr, e.relations, e.relation);
    e.build_index();
    return e;
  }

  static KGEmbeddings load(const std::string& path) { return parse(read_file(path), path); }
  void save(const std::string& path) const { write_file(path, serialize()); }

 private:
  std::unordered_map<std::string, int> entity_index_;
  std::unordered_map<std::string, int> relation_index_;
};

inline void normalize_row(Eigen::MatrixXd& m, Eigen::Index row) {
  const double n = m.row(row).norm();
  if (n > 0) m.row(row) /= n;
}

/// Uniform(-6/sqrt(d), 6/sqrt(d)) draws, then every entity and relation row is normalized.
inline KGEmbeddings init_embeddings(const KnowledgeGraph& g, int d, std::uint64_t seed, Norm norm = Norm::L2,
                                    double gamma = 1.0) {
  if (d < 2) throw invalid_argument("embedding dimension must be >= 2");
  KGEmbeddings e;
  e.entities = g.entities;
  e.relations = g.relations;
  e.norm = norm;
  e.gamma = gamma;
  Rng rng(seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(d));
  auto fill = [&](Eigen::MatrixXd& m, std::size_t rows) {
    m.resize(static_cast<Eigen::Index>(rows), d);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.uniform(-bound, bound);
  };
  fill(e.entity, g.entities.size());
  fill(e.relation, g.relations.size());
  for (Eigen::Index i = 0; i < e.entity.rows(); ++i) normalize_row(e.entity, i);
  for (Eigen::Index i = 0; i < e.relation.rows(); ++i) normalize_row(e.relation, i);
  e.build_index();
  return e;
}

inline double distance(const Eigen::VectorXd& x, Norm norm) { return norm == Norm::L1 ? x.lpNorm<1>() : x.norm(); }

inline Eigen::VectorXd translation_residual(const Triple& x, const KGEmbeddings& emb) {
  return (emb.entity.row(x.h) + emb.relation.row(x.r) - emb.entity.row(x.t)).transpose();
}

/// ||v_h + v_r - v_t|| under the configured norm.
inline double transE_score(const Triple& x, const KGEmbeddings& emb) {
  emb.check_ids(x);
  return distance(translation_residual(x, emb), emb.norm);
}

inline double margin_loss(const Triple& pos, const Triple& neg, const KGEmbeddings& emb) {
  return std::max(0.0, emb.gamma + transE_score(pos, emb) - transE_score(neg, emb));
}

/// Dense gradient of margin_loss with respect to both tables.
struct KgeGradient {
  Eigen::MatrixXd entity;
  Eigen::MatrixXd relation;
};

/// Adds d(margin_loss)/d(tables) into `g`. Zero when the hinge is inactive.
inline void accumulate_margin_gradient(const Triple& pos, const Triple& neg, const KGEmbeddings& emb, KgeGradient& g) {
  if (emb.gamma + transE_score(pos, emb) - transE_score(neg, emb) <= 0) return;
  auto score_grad = [&](const Triple& x, double sign) {
    Eigen::VectorXd r = translation_residual(x, emb);
    Eigen::VectorXd ds;
    if (emb.norm == Norm::L1) {
      ds = r.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
    } else {
      const double n = r.norm();
      ds = n > 0 ? Eigen::VectorXd(r / n) : Eigen::VectorXd::Zero(r.size());
    }
    g.entity.row(x.h) += sign * ds.transpose();
    g.relation.row(x.r) += sign * ds.transpose();
    g.entity.row(x.t) -= sign * ds.transpose();
  };
  score_grad(pos, 1.0);
  score_grad(neg, -1.0);
}

/// Filtered Bernoulli-0.5 corruption: a fair coin picks head or tail, which is
/// replaced by uniformly drawn entities until the result is not a known triple.
inline Triple negative_sample(const Triple& x, const KnowledgeGraph& g, Rng& rng) {
  const auto n = g.entities.size();
  if (n < 2) throw invalid_argument("negative sampling needs at least two entities");
  const bool can_head = g.head_corruptible(x);
  const bool can_tail = g.tail_corruptible(x);
  if (!can_head && !can_tail) throw invalid_argument("no corruption of the triple lies outside the graph");
  bool corrupt_head = rng.coin();
  if (corrupt_head && !can_head) corrupt_head = false;
  if (!corrupt_head && !can_tail) corrupt_head = true;
  Triple c = x;
  do {
    const int e = static_cast<int>(rng.below(n));
    if (corrupt_head)
      c.h = e;
    else
      c.t = e;
  } while (g.contains(c));
  return c;
}

struct KgeConfig {
  int d = 50;
  double gamma = 1.0;
  Norm norm = Norm::L2;
  double lr = 0.01;
  int epochs = 1000;
  int batch = 128;
  std::uint64_t seed = 1;
};

struct KgeResult {
  KGEmbeddings embeddings;
  std::vector<double> loss_trace;  ///< mean margin loss per epoch
};

/// Mini-batch SGD on the summed margin loss, renormalizing entity rows after every step.
/// `on_step` (optional) observes the tables after each completed step.
inline KgeResult train_kge(const KnowledgeGraph& g, const KgeConfig& cfg,
                           const std::function<void(const KGEmbeddings&)>& on_step = {}) {
  if (cfg.gamma <= 0) throw config_error("kge margin gamma must be > 0");
  if (cfg.batch < 1 || cfg.epochs < 0 || cfg.lr <= 0) throw config_error("invalid kge batch/epochs/lr");
  if (g.triples.empty()) throw invalid_argument("train_kge: empty graph");
  KgeResult res{init_embeddings(g, cfg.d, cfg.seed, cfg.norm, cfg.gamma), {}};
  auto& emb = res.embeddings;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(g.triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  KgeGradient grad{Eigen::MatrixXd::Zero(emb.entity.rows(), cfg.d), Eigen::MatrixXd::Zero(emb.relation.rows(), cfg.d)};
  std::vector<int> touched;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      touched.clear();
      for (std::size_t k = start; k < end; ++k) {
        const Triple& pos = g.triples[order[k]];
        const Triple neg = negative_sample(pos, g, rng);
        const double l = margin_loss(pos, neg, emb);
        if (!std::isfinite(l)) throw numeric_error("train_kge: non-finite margin loss at epoch " + std::to_string(epoch));
        epoch_loss += l;
        accumulate_margin_gradient(pos, neg, emb, grad);
        touched.insert(touched.end(), {pos.h, pos.t, neg.h, neg.t});
      }
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      for (int e : touched) {
        emb.entity.row(e) -= cfg.lr * grad.entity.row(e);
        grad.entity.row(e).setZero();
        normalize_row(emb.entity, e);
      }
      emb.relation -= cfg.lr * grad.relation;
      grad.relation.setZero();
      if (on_step) on_step(emb);
    }
    res.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return res;
}

/// e_i = [v_h ; v_r ; v_t], length 3d.
inline Eigen::VectorXd triplet_embedding(const Triple& x, const KGEmbeddings& emb) {
  emb.check_ids(x);
  const auto d = emb.dim();
  Eigen::VectorXd e(3 * d);
  e.segment(0, d) = emb.entity.row(x.h).transpose();
  e.segment(d, d) = emb.relation.row(x.r).transpose();
  e.segment(2 * d, d) = emb.entity.row(x.t).transpose();
  return e;
}

}  // namespace katsum
