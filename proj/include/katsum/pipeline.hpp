#pragma once

// Staged pipeline over an artifacts directory. Every stage reads the files of
// earlier stages, writes its own, and records the digests of what it read and
// wrote in manifest.json.
//
//   triplets/<split>.{source,summary}.tsv   extract
//   kge/embeddings.tsv, kge/loss.csv        kge
//   labels/train.tsv                        label
//   classifier/params.txt, loss.csv         classifier
//   [run/]model/{state,best}.ckpt, ...      train
//   [run/]generate/<split>.jsonl            generate
//   [run/]eval/<split>.json                 evaluate
//
// where run/ is empty for the main model and ablation/<variant>/ otherwise.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "katsum/checkpoint.hpp"
#include "katsum/common.hpp"
#include "katsum/corpus.hpp"
#include "katsum/kg_embed.hpp"
#include "katsum/rouge.hpp"
#include "katsum/seq2seq.hpp"
#include "katsum/training.hpp"
#include "katsum/triplet_extract.hpp"
#include "katsum/triplet_select.hpp"

#ifndef KATSUM_DATA_DIR
#define KATSUM_DATA_DIR "data"
#endif

namespace katsum::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline Error prerequisite_error(const std::string& what) { return Error("prerequisite", what); }

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  return fnv1a(purpose, 0xcbf29ce484222325ULL ^ (seed * 0x9e3779b97f4a7c15ULL));
}

// ------------------------------------------------------------------ config

class RunConfig {
 public:
  RunConfig() {
    for (const auto& [k, v] : defaults()) values_[k] = v;
    values_["paths.lexicon"] = KATSUM_DATA_DIR "/lexicon";
    values_["paths.artifacts"] = fs::absolute("artifacts").lexically_normal().string();
  }

  static const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> d{
        {"seed", "1"},
        {"paths.train", ""},
        {"paths.valid", ""},
        {"paths.test", ""},
        {"paths.lexicon", ""},
        {"paths.artifacts", ""},
        {"paths.external_triplets", ""},
        {"data.min_freq", "2"},
        {"data.max_source_len", "512"},
        {"data.max_target_len", "128"},
        {"model.d_model", "128"},
        {"model.n_heads", "4"},
        {"model.enc_layers", "2"},
        {"model.dec_layers", "2"},
        {"model.d_ff", "512"},
        {"model.max_len", "512"},
        {"model.dropout", "0.1"},
        {"train.lr_e", "2e-3"},
        {"train.warmup_e", "20000"},
        {"train.lr_d", "0.1"},
        {"train.warmup_d", "10000"},
        {"train.beta1", "0.9"},
        {"train.beta2", "0.999"},
        {"train.adam_eps", "1e-9"},
        {"train.accumulate_every", "5"},
        {"train.batch_size", "1"},
        {"train.checkpoint_every", "2500"},
        {"train.total_steps", "200000"},
        {"train.log_every", "100"},
        {"train.label_smoothing", "0.1"},
        {"train.max_valid", "0"},
        {"kge.dim", "50"},
        {"kge.gamma", "1"},
        {"kge.norm", "L2"},
        {"kge.lr", "0.01"},
        {"kge.epochs", "1000"},
        {"kge.batch", "128"},
        {"classifier.lr", "0.1"},
        {"classifier.epochs", "5"},
        {"classifier.steps_per_epoch", "10000"},
        {"classifier.batch", "32"},
        {"select.threshold", "0.8"},
        {"select.tau", "0.5"},
        {"select.k", "16"},
        {"generate.mode", "greedy"},
        {"generate.beam_width", "4"},
        {"generate.max_out", "128"},
        {"ablation.subset_fraction", "1"},
        {"ablation.variants", "full,no_classification,no_kg"},
    };
    return d;
  }

  static bool is_path_key(const std::string& key) { return key.rfind("paths.", 0) == 0; }

  /// Relative path values resolve against `base_dir`.
  void set(const std::string& key, const std::string& value, const fs::path& base_dir = fs::current_path()) {
    if (!values_.count(key)) throw config_error("unknown config key '" + key + "'");
    if (is_path_key(key) && !value.empty())
      values_[key] = (fs::path(value).is_absolute() ? fs::path(value) : base_dir / value).lexically_normal().string();
    else
      values_[key] = value;
  }

  /// "key=value", relative paths against the working directory.
  void set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw config_error("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void parse(const std::string& text, const std::string& name, const fs::path& base_dir) {
    const auto lines = split(text, '\n');
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string line = lines[i];
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = name + ":" + std::to_string(i + 1);
      if (eq == std::string::npos) throw config_error(where + ": expected key = value");
      const auto key = trim(line.substr(0, eq));
      if (!values_.count(key)) throw config_error(where + ": unknown config key '" + key + "'");
      set(key, trim(line.substr(eq + 1)), base_dir);
    }
  }

  void load_file(const std::string& path) {
    const auto abs = fs::absolute(path);
    parse(read_file(abs.string()), path, abs.parent_path());
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown config key '" + key + "'");
    return it->second;
  }
  long long integer(const std::string& key) const { return parse_int(str(key), "config " + key); }
  double real(const std::string& key) const { return parse_double(str(key), "config " + key); }
  std::uint64_t seed() const {
    const auto s = integer("seed");
    if (s < 0) throw config_error("seed must be non-negative");
    return static_cast<std::uint64_t>(s);
  }

  std::string path(const std::string& key) const {
    const auto& v = str(key);
    if (v.empty()) throw config_error("config key " + key + " is not set");
    return v;
  }
  bool has(const std::string& key) const { return !str(key).empty(); }

  std::string split_path(Split s) const { return path(std::string("paths.") + to_string(s)); }

  ModelConfig model_config(int vocab_size, int kg_dim) const {
    ModelConfig c;
    c.d_model = static_cast<int>(integer("model.d_model"));
    c.n_heads = static_cast<int>(integer("model.n_heads"));
    c.enc_layers = static_cast<int>(integer("model.enc_layers"));
    c.dec_layers = static_cast<int>(integer("model.dec_layers"));
    c.d_ff = static_cast<int>(integer("model.d_ff"));
    c.max_len = static_cast<int>(integer("model.max_len"));
    c.dropout = real("model.dropout");
    c.vocab_size = vocab_size;
    c.kg_dim = kg_dim;
    c.validate();
    if (source_len() > static_cast<std::size_t>(c.max_len) || target_len() > static_cast<std::size_t>(c.max_len))
      throw config_error("data.max_source_len and data.max_target_len must not exceed model.max_len");
    return c;
  }

  std::size_t source_len() const { return positive("data.max_source_len", 3); }
  std::size_t target_len() const { return positive("data.max_target_len", 3); }

  TrainConfig train_config() const {
    TrainConfig t;
    t.encoder = {real("train.lr_e"), static_cast<long>(integer("train.warmup_e"))};
    t.decoder = {real("train.lr_d"), static_cast<long>(integer("train.warmup_d"))};
    t.beta1 = real("train.beta1");
    t.beta2 = real("train.beta2");
    t.adam_eps = real("train.adam_eps");
    t.accumulate_every = static_cast<int>(integer("train.accumulate_every"));
    t.batch_size = static_cast<int>(integer("train.batch_size"));
    t.checkpoint_every = static_cast<long>(integer("train.checkpoint_every"));
    t.total_steps = static_cast<long>(integer("train.total_steps"));
    t.log_every = static_cast<long>(integer("train.log_every"));
    t.label_smoothing = real("train.label_smoothing");
    t.seed = derive_seed(seed(), "train");
    t.validate();
    return t;
  }

  KgeConfig kge_config() const {
    KgeConfig k;
    k.d = static_cast<int>(positive("kge.dim", 1));
    k.gamma = real("kge.gamma");
    k.norm = parse_norm(str("kge.norm"));
    k.lr = real("kge.lr");
    k.epochs = static_cast<int>(integer("kge.epochs"));
    k.batch = static_cast<int>(integer("kge.batch"));
    k.seed = derive_seed(seed(), "kge");
    return k;
  }

  ClassifierConfig classifier_config() const {
    ClassifierConfig c;
    c.lr = real("classifier.lr");
    c.epochs = static_cast<int>(integer("classifier.epochs"));
    c.steps_per_epoch = static_cast<int>(integer("classifier.steps_per_epoch"));
    c.batch = static_cast<int>(integer("classifier.batch"));
    c.seed = derive_seed(seed(), "classifier");
    return c;
  }

  /// Sorted key=value lines; the digest of this text identifies the configuration.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_)
      if (k != "paths.artifacts") out += k + "=" + v + "\n";
    return out;
  }

 private:
  std::size_t positive(const std::string& key, long long min) const {
    const auto v = integer(key);
    if (v < min) throw config_error(key + " must be >= " + std::to_string(min));
    return static_cast<std::size_t>(v);
  }

  std::map<std::string, std::string> values_;
};

// --------------------------------------------------------------- workspace

struct StageInfo {
  const char* name;
  const char* command;
};

inline constexpr StageInfo kStages[] = {
    {"extract", "extract-triplets"}, {"kge", "train-kge"},     {"label", "label-triplets"},
    {"classifier", "train-classifier"}, {"train", "train"},   {"generate", "generate"},
    {"evaluate", "evaluate"},
};

inline const StageInfo& stage_info(const std::string& name) {
  for (const auto& s : kStages)
    if (name == s.name) return s;
  throw invalid_argument("unknown stage '" + name + "'");
}

/// The artifacts directory, held under an exclusive lock file for the
/// lifetime of the object.
class Workspace {
 public:
  explicit Workspace(const RunConfig& cfg) : root_(cfg.path("paths.artifacts")), cfg_(&cfg) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw io_error("cannot create artifacts directory " + root_.string() + ": " + ec.message());
    lock_ = root_ / ".lock";
    std::FILE* f = std::fopen(lock_.c_str(), "wx");
    if (!f)
      throw io_error("artifacts directory " + root_.string() + " is locked by another run (remove " + lock_.string() +
                     " if it is stale)");
    std::fclose(f);
    const auto manifest = root_ / "manifest.json";
    if (fs::exists(manifest)) {
      try {
        manifest_ = json::parse(read_file(manifest.string()));
      } catch (const json::exception& e) {
        release();
        throw format_error(manifest.string() + ": " + e.what());
      }
    }
  }
  ~Workspace() { release(); }
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  const fs::path& root() const { return root_; }
  const RunConfig& config() const { return *cfg_; }
  std::string path(const std::string& rel) const { return (root_ / rel).string(); }
  bool has(const std::string& rel) const { return fs::exists(root_ / rel); }

  /// Fails with the producing stage's name when `rel` is missing.
  void require(const std::string& rel, const std::string& stage) const {
    if (!has(rel)) {
      const auto& s = stage_info(stage);
      throw prerequisite_error("missing artifact " + rel + ": run the '" + s.name + "' stage first (katsum " +
                               s.command + ")");
    }
  }

  void begin(const std::string& stage) {
    stage_ = stage;
    inputs_ = json::object();
    outputs_ = json::object();
  }

  /// Reads a file the current stage depends on and records its digest.
  std::string input(const std::string& abs_path) {
    auto bytes = read_file(abs_path);
    inputs_[abs_path] = hex64(fnv1a(bytes));
    return bytes;
  }
  std::string artifact(const std::string& rel) { return input(path(rel)); }

  void write(const std::string& rel, const std::string& bytes) {
    const auto p = root_ / rel;
    fs::create_directories(p.parent_path());
    write_file(p.string(), bytes);
    outputs_[rel] = hex64(fnv1a(bytes));
  }

  /// Records the digest of an output written earlier in the stage.
  void record(const std::string& rel) {
    if (has(rel)) outputs_[rel] = hex64(fnv1a(read_file(path(rel))));
  }

  void commit() {
    json entry;
    entry["seed"] = cfg_->seed();
    entry["config"] = hex64(fnv1a(cfg_->canonical()));
    entry["inputs"] = inputs_;
    entry["outputs"] = outputs_;
    if (!manifest_.contains("stages")) manifest_["stages"] = json::object();
    manifest_["seed"] = cfg_->seed();
    manifest_["stages"][stage_] = entry;
    write_file((root_ / "manifest.json").string(), manifest_.dump(2) + "\n");
  }

  const json& manifest() const { return manifest_; }

 private:
  void release() {
    if (lock_.empty()) return;
    std::error_code ec;
    fs::remove(lock_, ec);
    lock_.clear();
  }

  fs::path root_;
  fs::path lock_;
  const RunConfig* cfg_;
  json manifest_ = json::object();
  std::string stage_;
  json inputs_, outputs_;
};

// ------------------------------------------------------------------ helpers

enum class Variant { full, no_classification, no_kg };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_classification: return "no_classification";
    case Variant::no_kg: return "no_kg";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_classification") return Variant::no_classification;
  if (s == "no_kg") return Variant::no_kg;
  throw invalid_argument("unknown variant '" + s + "' (expected full|no_classification|no_kg)");
}

inline std::vector<Variant> parse_variants(const std::string& list) {
  std::set<Variant> seen;
  for (const auto& v : split(list, ',')) {
    const auto t = trim(v);
    if (!t.empty()) seen.insert(parse_variant(t));
  }
  if (seen.empty()) throw invalid_argument("no ablation variants given");
  return {seen.begin(), seen.end()};
}

inline const char* variant_label(Variant v) {
  switch (v) {
    case Variant::full: return "KATSum (full)";
    case Variant::no_classification: return "KATSum (no classification)";
    case Variant::no_kg: return "KATSum (no KG)";
  }
  return "?";
}

/// Where a model's artifacts live and which triplets feed its memory.
struct ModelRun {
  std::string dir;  ///< "" or "ablation/<variant>/"
  Variant variant = Variant::full;
  double subset_fraction = 1.0;
  std::string stage(const std::string& s) const { return dir.empty() ? s : dir + s; }
};

inline ModelRun ablation_run(Variant v, double subset_fraction) {
  return {std::string("ablation/") + to_string(v) + "/", v, subset_fraction};
}

/// Seeded uniform sample of round(fraction * n) indices (at least one), in
/// ascending order.
inline std::vector<std::size_t> subset_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw config_error("subset fraction must be in (0, 1]");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (fraction >= 1) return idx;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  idx.resize(std::min(k, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::map<std::string, std::vector<Triplet>> group_by_doc(const std::vector<Triplet>& triplets) {
  std::map<std::string, std::vector<Triplet>> out;
  for (const auto& t : triplets) out[t.doc_id].push_back(t);
  return out;
}

inline std::string triplet_file(Split s, bool summary) {
  return std::string("triplets/") + to_string(s) + (summary ? ".summary.tsv" : ".source.tsv");
}

inline std::vector<Document> read_split(Workspace& ws, Split s) {
  const auto p = ws.config().split_path(s);
  ws.input(p);
  return load_dataset(p, s);
}

inline std::vector<Triplet> read_triplets(Workspace& ws, Split s, bool summary) {
  const auto rel = triplet_file(s, summary);
  ws.require(rel, "extract");
  return parse_triplet_tsv(ws.artifact(rel), ws.path(rel)).triplets;
}

inline KGEmbeddings read_embeddings(Workspace& ws) {
  ws.require("kge/embeddings.tsv", "kge");
  return KGEmbeddings::parse(ws.artifact("kge/embeddings.tsv"), ws.path("kge/embeddings.tsv"));
}

/// Turns a document's extracted triplets into memory rows for one variant.
class Selector {
 public:
  Selector(Workspace& ws, Variant v) : variant_(v) {
    const auto& cfg = ws.config();
    tau_ = cfg.real("select.tau");
    const auto k = cfg.integer("select.k");
    if (k < 0) throw config_error("select.k must be >= 0");
    k_ = static_cast<std::size_t>(k);
    if (v == Variant::no_kg) {
      kg_dim_ = 3 * cfg.kge_config().d;
      return;
    }
    emb_ = std::make_shared<const KGEmbeddings>(read_embeddings(ws));
    embed_.emplace(*emb_);
    kg_dim_ = embed_->dim();
    if (v == Variant::full) {
      ws.require("classifier/params.txt", "classifier");
      clf_ = ClassifierParams::parse(ws.artifact("classifier/params.txt"), ws.path("classifier/params.txt"));
      if (clf_->W.size() != kg_dim_) throw format_error("classifier dimension does not match the embeddings");
    }
  }

  int kg_dim() const { return kg_dim_; }

  std::vector<SelectedTriplet> select(const std::vector<Triplet>& triplets) const {
    switch (variant_) {
      case Variant::full: return select_triplets(triplets, *embed_, *clf_, tau_, k_);
      case Variant::no_classification: return select_all(triplets, *embed_, k_);
      case Variant::no_kg: return {};
    }
    return {};
  }

  Mat<double> rows(const std::vector<Triplet>& triplets) const {
    std::vector<Eigen::VectorXd> v;
    for (auto& s : select(triplets)) v.push_back(std::move(s.embedding));
    return Summarizer<double>::to_kg_matrix(v, kg_dim_);
  }

 private:
  Variant variant_;
  double tau_ = 0.5;
  std::size_t k_ = 16;
  int kg_dim_ = 0;
  std::shared_ptr<const KGEmbeddings> emb_;
  std::optional<TripletEmbedder> embed_;
  std::optional<ClassifierParams> clf_;
};

inline std::vector<Example<double>> build_examples(const std::vector<Document>& docs,
                                                   const std::map<std::string, std::vector<Triplet>>& triplets,
                                                   const Vocab& vocab, const Selector& sel, const RunConfig& cfg) {
  static const std::vector<Triplet> none;
  std::vector<Example<double>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    auto it = triplets.find(d.id);
    Example<double> ex;
    ex.source = encode(tokenize(d.source), vocab, cfg.source_len());
    ex.kg = sel.rows(it == triplets.end() ? none : it->second);
    ex.target = encode(tokenize(d.summary), vocab, cfg.target_len());
    out.push_back(std::move(ex));
  }
  return out;
}

inline DecodeMode decode_mode(const RunConfig& cfg) {
  const auto& m = cfg.str("generate.mode");
  if (m == "greedy") return DecodeMode::greedy;
  if (m == "beam") return DecodeMode::beam;
  throw config_error("generate.mode must be greedy or beam");
}

inline std::string summarize(const Summarizer<double>& model, const Vocab& vocab, const Example<double>& ex,
                             DecodeMode mode, int beam_width, std::size_t max_out) {
  return join(decode(model.generate(ex.source, ex.kg, mode, beam_width, max_out), vocab));
}

inline std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// ------------------------------------------------------------------- stages

inline void run_extract(Workspace& ws, std::ostream& log) {
  const auto& cfg = ws.config();
  ws.begin("extract");
  const bool external = cfg.has("paths.external_triplets");
  std::optional<Lexicon> lex;
  if (!external) {
    const fs::path dir = cfg.path("paths.lexicon");
    for (const char* f : {"verbs.txt", "stopwords.txt", "prepositions.txt"}) ws.input((dir / f).string());
    lex = Lexicon::load_dir(dir.string());
  }
  for (Split s : {Split::train, Split::valid, Split::test}) {
    if (!cfg.has(std::string("paths.") + to_string(s))) {
      if (s == Split::train) throw config_error("config key paths.train is not set");
      continue;
    }
    const auto docs = read_split(ws, s);
    std::vector<Triplet> src, sum;
    if (external) {
      std::size_t dropped = 0;
      for (bool summary : {false, true}) {
        const auto p = (fs::path(cfg.path("paths.external_triplets")) / fs::path(triplet_file(s, summary)).filename()).string();
        auto r = parse_triplet_tsv(ws.input(p), p);
        dropped += r.dropped;
        (summary ? sum : src) = std::move(r.triplets);
      }
      if (dropped) log << "extract: " << to_string(s) << ": dropped " << dropped << " empty or self-loop rows\n";
    } else {
      for (const auto& d : docs) {
        for (auto& t : extract_triplets(d, *lex)) src.push_back(std::move(t));
        for (auto& t : extract_summary_triplets(d, *lex)) sum.push_back(std::move(t));
      }
    }
    ws.write(triplet_file(s, false), to_tsv(src));
    ws.write(triplet_file(s, true), to_tsv(sum));
    log << "extract: " << to_string(s) << ": " << docs.size() << " documents, " << src.size() << " source / "
        << sum.size() << " summary triplets\n";
  }
  ws.commit();
}

inline void run_kge(Workspace& ws, std::ostream& log) {
  const auto& cfg = ws.config();
  const auto kcfg = cfg.kge_config();
  ws.begin("kge");
  auto triplets = read_triplets(ws, Split::train, false);
  for (auto& t : read_triplets(ws, Split::train, true)) triplets.push_back(std::move(t));
  const auto graph = build_graph(triplets);
  log << "kge: " << graph.entities.size() << " entities, " << graph.relations.size() << " relations, "
      << graph.triples.size() << " triples\n";
  const auto res = train_kge(graph, kcfg);
  std::string trace = "epoch,loss\n";
  for (std::size_t i = 0; i < res.loss_trace.size(); ++i) trace += std::to_string(i + 1) + "," + exact(res.loss_trace[i]) + "\n";
  if (!res.loss_trace.empty())
    log << "kge: margin loss " << res.loss_trace.front() << " -> " << res.loss_trace.back() << "\n";
  ws.write("kge/embeddings.tsv", res.embeddings.serialize());
  ws.write("kge/loss.csv", trace);
  ws.commit();
}

inline void run_label(Workspace& ws, std::ostream& log) {
  const auto& cfg = ws.config();
  ws.begin("label");
  const auto source = read_triplets(ws, Split::train, false);
  const auto summary = group_by_doc(read_triplets(ws, Split::train, true));
  const auto emb = read_embeddings(ws);
  const TripletEmbedder embed(emb);
  const double threshold = cfg.real("select.threshold");
  std::vector<LabeledTriplet> labeled;
  std::size_t i = 0;
  static const std::vector<Triplet> none;
  while (i < source.size()) {
    std::size_t j = i;
    while (j < source.size() && source[j].doc_id == source[i].doc_id) ++j;
    const std::vector<Triplet> doc(source.begin() + static_cast<std::ptrdiff_t>(i),
                                   source.begin() + static_cast<std::ptrdiff_t>(j));
    auto it = summary.find(source[i].doc_id);
    for (auto& l : label_triplets(doc, it == summary.end() ? none : it->second, embed, threshold))
      labeled.push_back(std::move(l));
    i = j;
  }
  std::size_t pos = 0;
  for (const auto& l : labeled) pos += static_cast<std::size_t>(l.label);
  log << "label: " << labeled.size() << " triplets, " << pos << " labeled 1 at threshold " << threshold << "\n";
  ws.write("labels/train.tsv", to_labeled_tsv(labeled));
  ws.commit();
}

inline void run_classifier(Workspace& ws, std::ostream& log) {
  const auto& cfg = ws.config();
  const auto ccfg = cfg.classifier_config();
  ws.begin("classifier");
  const auto emb = read_embeddings(ws);
  ws.require("labels/train.tsv", "label");
  const auto data = parse_labeled_tsv(ws.artifact("labels/train.tsv"), ws.path("labels/train.tsv"), TripletEmbedder(emb));
  const auto res = train_classifier(data, ccfg);
  std::string trace = "epoch,bce\n";
  for (std::size_t i = 0; i < res.loss_trace.size(); ++i) trace += std::to_string(i + 1) + "," + exact(res.loss_trace[i]) + "\n";
  std::size_t correct = 0;
  for (const auto& d : data) correct += (classify(d.embedding, res.params) >= 0.5) == (d.label == 1);
  log << "classifier: " << data.size() << " examples, training accuracy "
      << static_cast<double>(correct) / static_cast<double>(data.size()) << "\n";
  ws.write("classifier/params.txt", res.params.serialize());
  ws.write("classifier/loss.csv", trace);
  ws.commit();
}

struct TrainOutcome {
  long steps = 0;
  long best_step = 0;
  double best_rouge1 = -1;
  std::vector<TraceRow> trace;
};

inline std::vector<TraceRow> parse_trace_csv(const std::string& text) {
  std::vector<TraceRow> rows;
  const auto lines = split(text, '\n');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto c = split(lines[i], ',');
    if (c.size() != 7) throw format_error("corrupt training trace line " + std::to_string(i + 1));
    TraceRow r{parse_int(c[0], "trace step"), parse_double(c[1], "trace loss"), parse_double(c[2], "trace lr_e"),
               parse_double(c[3], "trace lr_d"), std::nullopt};
    if (!c[4].empty()) {
      rouge::Report rep;
      rep.rouge1 = parse_double(c[4], "trace rouge1");
      rep.rouge2 = parse_double(c[5], "trace rouge2");
      rep.rougeL = parse_double(c[6], "trace rougeL");
      r.rouge = rep;
    }
    rows.push_back(r);
  }
  return rows;
}

/// Trains the summarizer of `run`. Validation ROUGE-1 on the valid split (when
/// configured) picks best.ckpt; state.ckpt always holds the latest resumable state.
inline TrainOutcome run_train(Workspace& ws, std::ostream& log, const ModelRun& run = {}, bool resume = false) {
  const auto& cfg = ws.config();
  const auto tcfg = cfg.train_config();
  ws.begin(run.stage("train"));

  auto docs = read_split(ws, Split::train);
  if (run.subset_fraction < 1) {
    std::vector<Document> sub;
    for (auto i : subset_indices(docs.size(), run.subset_fraction, derive_seed(cfg.seed(), "subset")))
      sub.push_back(docs[i]);
    log << "train: using " << sub.size() << " of " << docs.size() << " training documents\n";
    docs = std::move(sub);
  }
  const auto train_trip = group_by_doc(read_triplets(ws, Split::train, false));
  const Selector sel(ws, run.variant);
  const auto vocab = build_vocab(docs, static_cast<int>(cfg.integer("data.min_freq")));
  const auto mcfg = cfg.model_config(static_cast<int>(vocab.size()), sel.kg_dim());

  std::vector<Example<double>> valid;
  std::vector<std::string> valid_refs;
  if (cfg.has("paths.valid")) {
    auto vdocs = read_split(ws, Split::valid);
    const auto max_valid = cfg.integer("train.max_valid");
    if (max_valid > 0 && vdocs.size() > static_cast<std::size_t>(max_valid)) vdocs.resize(static_cast<std::size_t>(max_valid));
    valid = build_examples(vdocs, group_by_doc(read_triplets(ws, Split::valid, false)), vocab, sel, cfg);
    for (const auto& d : vdocs) valid_refs.push_back(d.summary);
  }

  Trainer<double> trainer(Summarizer<double>::initialized(mcfg, derive_seed(cfg.seed(), "model")),
                          build_examples(docs, train_trip, vocab, sel, cfg), tcfg);
  log << "train: " << docs.size() << " examples, " << parameter_count(mcfg) << " parameters, vocab " << vocab.size()
      << ", " << tcfg.total_steps << " optimizer steps\n";

  const std::string mdir = run.dir + "model/";
  TrainOutcome out;
  if (resume && ws.has(mdir + "state.ckpt")) {
    const auto ar = Archive::parse(ws.artifact(mdir + "state.ckpt"), ws.path(mdir + "state.ckpt"));
    trainer.restore(ar);
    out.trace = parse_trace_csv(ar.string("pipeline.trace"));
    std::istringstream best(ar.string("pipeline.best"));
    best >> out.best_step >> out.best_rouge1;
    if (!best) throw format_error(ws.path(mdir + "state.ckpt") + ": corrupt best-checkpoint record");
    log << "train: resumed at step " << trainer.step() << "\n";
  }

  const auto max_out = static_cast<std::size_t>(cfg.integer("generate.max_out"));
  TrainHooks<double> hooks;
  if (!valid.empty()) {
    hooks.validate = [&](const Summarizer<double>& m) {
      std::vector<std::pair<std::string, std::string>> pairs;
      for (std::size_t i = 0; i < valid.size(); ++i)
        pairs.emplace_back(valid_refs[i], summarize(m, vocab, valid[i], DecodeMode::greedy, 1, max_out));
      return rouge::evaluate_corpus(pairs);
    };
  }
  hooks.on_row = [&](const TraceRow& r) {
    out.trace.push_back(r);
    log << "train: step " << r.step << " loss " << r.loss;
    if (r.rouge) log << " valid R1 " << fixed1(r.rouge->rouge1);
    log << "\n";
  };
  hooks.on_checkpoint = [&](Trainer<double>& tr, const TraceRow& r) {
    const double score = r.rouge ? r.rouge->rouge1 : 0.0;
    if (out.best_step == 0 || !r.rouge || score > out.best_rouge1) {
      out.best_step = r.step;
      out.best_rouge1 = score;
      Archive best;
      store_model(best, tr.model(), vocab);
      ws.write(mdir + "best.ckpt", best.serialize());
    }
    auto state = tr.state(vocab);
    state.strings["pipeline.trace"] = trace_csv(out.trace);
    state.strings["pipeline.best"] = std::to_string(out.best_step) + " " + exact(out.best_rouge1);
    ws.write(mdir + "state.ckpt", state.serialize());
  };
  hooks.on_diverged = [&](Trainer<double>& tr) {
    ws.write(mdir + "diverged.ckpt", tr.state(vocab).serialize());
    log << "train: non-finite loss after step " << tr.step() << "; diagnostic state in " << ws.path(mdir + "diverged.ckpt")
        << "\n";
  };
  train_summarizer(trainer, hooks);

  out.steps = trainer.step();
  ws.write(mdir + "vocab.txt", vocab.serialize());
  ws.write(mdir + "trace.csv", trace_csv(out.trace));
  for (const char* f : {"best.ckpt", "state.ckpt"}) ws.record(mdir + f);
  log << "train: best checkpoint at step " << out.best_step;
  if (!valid.empty()) log << " (valid ROUGE-1 " << fixed1(out.best_rouge1) << ")";
  log << "\n";
  ws.commit();
  return out;
}

inline void run_generate(Workspace& ws, std::ostream& log, Split split, const ModelRun& run = {}) {
  const auto& cfg = ws.config();
  ws.begin(run.stage(std::string("generate/") + to_string(split)));
  const std::string ckpt = run.dir + "model/best.ckpt";
  ws.require(ckpt, "train");
  const auto ar = Archive::parse(ws.artifact(ckpt), ws.path(ckpt));
  const auto model = restore_model<double>(ar);
  const auto vocab = Vocab::parse(ar.string("model.vocab"));
  const Selector sel(ws, run.variant);
  if (sel.kg_dim() != model.config.kg_dim) throw format_error("checkpoint knowledge dimension does not match the embeddings");
  const auto docs = read_split(ws, split);
  const auto trip = group_by_doc(read_triplets(ws, split, false));
  const auto examples = build_examples(docs, trip, vocab, sel, cfg);
  const auto mode = decode_mode(cfg);
  const auto width = static_cast<int>(cfg.integer("generate.beam_width"));
  const auto max_out = static_cast<std::size_t>(cfg.integer("generate.max_out"));
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    json j;
    j["id"] = docs[i].id;
    j["summary"] = summarize(model, vocab, examples[i], mode, width, max_out);
    out += j.dump() + "\n";
  }
  ws.write(run.dir + "generate/" + to_string(split) + ".jsonl", out);
  log << "generate: " << docs.size() << " summaries for " << to_string(split) << "\n";
  ws.commit();
}

/// First three sentences of the source.
inline std::string lead3(const std::string& source) {
  auto s = sentence_split(source);
  if (s.size() > 3) s.resize(3);
  return join(s);
}

inline rouge::Report run_evaluate(Workspace& ws, std::ostream& log, Split split, const ModelRun& run = {}) {
  ws.begin(run.stage(std::string("evaluate/") + to_string(split)));
  const std::string gen = run.dir + "generate/" + to_string(split) + ".jsonl";
  ws.require(gen, "generate");
  const auto docs = read_split(ws, split);
  std::map<std::string, std::string> hyp;
  const auto lines = katsum::split(ws.artifact(gen), '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      const auto j = json::parse(lines[i]);
      hyp[j.at("id").get<std::string>()] = j.at("summary").get<std::string>();
    } catch (const json::exception& e) {
      throw format_error(ws.path(gen) + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  std::vector<std::pair<std::string, std::string>> pairs, lead;
  for (const auto& d : docs) {
    if (d.summary.empty()) throw invalid_argument(std::string(to_string(split)) + " document '" + d.id + "' has no reference summary");
    auto it = hyp.find(d.id);
    if (it == hyp.end()) throw format_error(ws.path(gen) + ": no summary for document '" + d.id + "'");
    pairs.emplace_back(d.summary, it->second);
    lead.emplace_back(d.summary, lead3(d.source));
  }
  const auto rep = rouge::evaluate_corpus(pairs);
  const std::string base = run.dir + "eval/" + to_string(split);
  auto j = rep.to_json();
  j["model"] = run.dir.empty() ? "KATSum" : variant_label(run.variant);
  ws.write(base + ".json", j.dump(2) + "\n");
  ws.write(base + ".pairs.csv", rep.per_pair_csv());
  if (run.dir.empty()) {
    auto l = rouge::evaluate_corpus(lead).to_json();
    l["model"] = "Lead-3";
    ws.write(base + ".lead3.json", l.dump(2) + "\n");
  }
  log << "evaluate: " << to_string(split) << " ROUGE-1/2/L " << fixed1(rep.rouge1) << " / " << fixed1(rep.rouge2)
      << " / " << fixed1(rep.rougeL) << " over " << rep.n_pairs << " pairs\n";
  ws.commit();
  return rep;
}

// ------------------------------------------------------------------ reports

struct TableRow {
  std::string model;
  double r1 = 0, r2 = 0, rl = 0;
};

struct Table {
  std::string markdown;
  json data;
};

/// Three metric columns at one decimal; the JSON numbers are the rounded values shown.
inline Table render_table(const std::vector<TableRow>& rows, const std::string& first_column) {
  Table t;
  t.markdown = "| " + first_column + " | ROUGE_1 | ROUGE_2 | ROUGE_L |\n|---|---:|---:|---:|\n";
  t.data["columns"] = {first_column, "ROUGE_1", "ROUGE_2", "ROUGE_L"};
  t.data["rows"] = json::array();
  for (const auto& r : rows) {
    const auto a = fixed1(r.r1), b = fixed1(r.r2), c = fixed1(r.rl);
    t.markdown += "| " + r.model + " | " + a + " | " + b + " | " + c + " |\n";
    json j;
    j[first_column] = r.model;
    j["ROUGE_1"] = std::stod(a);
    j["ROUGE_2"] = std::stod(b);
    j["ROUGE_L"] = std::stod(c);
    t.data["rows"].push_back(j);
  }
  return t;
}

inline TableRow row_from_eval(const std::string& text, const std::string& name) {
  try {
    const auto j = json::parse(text);
    return {j.at("model").get<std::string>(), j.at("rouge1").get<double>(), j.at("rouge2").get<double>(),
            j.at("rougeL").get<double>()};
  } catch (const json::exception& e) {
    throw format_error(name + ": " + e.what());
  }
}

struct AblationResult {
  std::vector<std::pair<Variant, rouge::Report>> reports;
  Table table;
};

/// Trains, generates and evaluates (test split) each variant under
/// ablation/<variant>/, then writes the comparison table.
inline AblationResult run_ablation(Workspace& ws, std::ostream& log, const std::vector<Variant>& variants,
                                   double subset_fraction) {
  if (variants.empty()) throw invalid_argument("no ablation variants given");
  // fail before any training when a prerequisite is missing
  for (auto v : variants) Selector(ws, v);
  read_triplets(ws, Split::test, false);
  ws.require(triplet_file(Split::train, false), "extract");

  AblationResult res;
  std::vector<TableRow> rows;
  for (auto v : variants) {
    const auto run = ablation_run(v, subset_fraction);
    log << "ablate: variant " << to_string(v) << "\n";
    run_train(ws, log, run);
    run_generate(ws, log, Split::test, run);
    auto rep = run_evaluate(ws, log, Split::test, run);
    rows.push_back({variant_label(v), rep.rouge1, rep.rouge2, rep.rougeL});
    res.reports.emplace_back(v, std::move(rep));
  }
  ws.begin("ablate");
  for (auto v : variants) ws.artifact(ablation_run(v, subset_fraction).dir + "eval/test.json");
  res.table = render_table(rows, "Model");
  res.table.data["subset_fraction"] = subset_fraction;
  ws.write("ablation/table.md", res.table.markdown);
  ws.write("ablation/table.json", res.table.data.dump(2) + "\n");
  ws.commit();
  return res;
}

/// Collects every evaluation artifact into one table: the main model's test
/// rows (Lead-3 first), ablation variants, then validation-split rows.
inline Table run_report(Workspace& ws, std::ostream& log) {
  ws.begin("report");
  std::vector<TableRow> rows;
  auto add = [&](const std::string& rel, const std::string& suffix) {
    if (!ws.has(rel)) return;
    auto r = row_from_eval(ws.artifact(rel), ws.path(rel));
    r.model += suffix;
    rows.push_back(std::move(r));
  };
  add("eval/test.lead3.json", "");
  add("eval/test.json", "");
  for (auto v : {Variant::full, Variant::no_classification, Variant::no_kg})
    add(std::string("ablation/") + to_string(v) + "/eval/test.json", "");
  add("eval/valid.lead3.json", " [valid]");
  add("eval/valid.json", " [valid]");
  if (rows.empty())
    throw prerequisite_error("no evaluation artifacts: run the 'evaluate' stage first (katsum evaluate) or katsum ablate");
  auto t = render_table(rows, "Model");
  ws.write("report/report.md", t.markdown);
  ws.write("report/report.json", t.data.dump(2) + "\n");
  log << "report: " << rows.size() << " rows written to " << ws.path("report/report.md") << "\n";
  ws.commit();
  return t;
}

inline void run_stage(Workspace& ws, std::ostream& log, const std::string& stage, Split split = Split::test) {
  if (stage == "extract") run_extract(ws, log);
  else if (stage == "kge") run_kge(ws, log);
  else if (stage == "label") run_label(ws, log);
  else if (stage == "classifier") run_classifier(ws, log);
  else if (stage == "train") run_train(ws, log);
  else if (stage == "generate") run_generate(ws, log, split);
  else if (stage == "evaluate") run_evaluate(ws, log, split);
  else throw invalid_argument("unknown stage '" + stage + "'");
}

/// Runs the given stages in pipeline order.
inline void run_pipeline(const RunConfig& cfg, const std::vector<std::string>& stages, std::ostream& log) {
  Workspace ws(cfg);
  for (const auto& s : kStages)
    if (std::find(stages.begin(), stages.end(), s.name) != stages.end()) run_stage(ws, log, s.name);
  for (const auto& s : stages) stage_info(s);
}

}  // namespace katsum::pipeline
