// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any selected criterion fails.
//
//   katsum_acceptance [N ...] [--cli PATH] [--data DIR]
//
// With no N every criterion runs. --cli is needed by criterion 9.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "katsum/katsum.hpp"

namespace fs = std::filesystem;
namespace kp = katsum::pipeline;
using katsum::Rng;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Args {
  std::string cli;
  std::string data = KATSUM_DATA_DIR;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------------ 1

Outcome rouge_oracles(const Args&) {
  constexpr double tol = 1e-12;
  constexpr int pairs = 500;
  using V = std::vector<std::string>;
  bool ok = true;
  std::string detail;
  auto expect = [&](const char* what, double got, double want) {
    if (std::abs(got - want) > tol) {
      ok = false;
      detail += std::string(what) + "=" + fmt("%.17g", got) + " ";
    }
  };
  const auto u = katsum::rouge::rouge_n({"the", "cat", "sat"}, {"the", "cat"}, 1);
  expect("r1.recall", u.recall, 2.0 / 3.0);
  expect("r1.precision", u.precision, 1.0);
  expect("r1.f1", u.f1, 0.8);
  const auto b = katsum::rouge::rouge_n({"a", "b", "c", "d"}, {"a", "b", "d"}, 2);
  expect("r2.recall", b.recall, 1.0 / 3.0);
  expect("r2.precision", b.precision, 0.5);
  expect("r2.f1", b.f1, 0.4);
  const auto l = katsum::rouge::rouge_l({"a", "b", "c", "d"}, {"a", "c", "d", "e"});
  expect("rl.precision", l.precision, 0.75);
  expect("rl.recall", l.recall, 0.75);
  expect("rl.f1", l.f1, 0.75);
  expect("rl.self", katsum::rouge::rouge_l(V{"x", "y"}, V{"x", "y"}).f1, 1.0);
  expect("rl.disjoint", katsum::rouge::rouge_l(V{"x", "y"}, V{"p", "q"}).f1, 0.0);
  const auto one = katsum::rouge::evaluate_corpus({{"a b c", "a b c"}});
  expect("corpus.identical", one.rouge1, 100.0);
  const auto two = katsum::rouge::evaluate_corpus({{"a b", "a b"}, {"a b", "c d"}});
  expect("corpus.mean", two.rouge1, 50.0);

  Rng rng(20240601);
  int mismatches = 0;
  for (int i = 0; i < pairs; ++i) {
    const auto a = oracle::random_tokens(rng, 8, 4);
    const auto c = oracle::random_tokens(rng, 8, 4);
    if (katsum::rouge::lcs_length(a, c) != oracle::brute_force_lcs(a, c)) ++mismatches;
  }
  if (mismatches) ok = false;
  detail += "lcs mismatches " + std::to_string(mismatches) + "/" + std::to_string(pairs);
  return {ok, detail};
}

// ------------------------------------------------------------------ 2

Outcome schedule_values(const Args&) {
  constexpr double value_tol = 1e-9;
  constexpr double continuity_tol = 1e-12;
  const katsum::ScheduleSpec spec{2e-3, 20000};
  auto rel = [](double got, double want) { return std::abs(got - want) / std::abs(want); };
  const double knee = 2e-3 / std::sqrt(20000.0);
  const double first = 2e-3 * std::pow(20000.0, -1.5);
  const double later = 2e-3 / std::sqrt(80000.0);
  double worst = std::max({rel(katsum::lr_schedule(20000, spec), knee), rel(katsum::lr_schedule(1, spec), first),
                           rel(katsum::lr_schedule(80000, spec), later)});
  // both arms at step = warmup equal warmup^-0.5
  double cont = 0;
  for (long w : {1L, 7L, 4000L, 10000L, 20000L}) {
    const double s = static_cast<double>(w);
    cont = std::max(cont, rel(1.0 / std::sqrt(s), s * std::pow(s, -1.5)));
    cont = std::max(cont, rel(katsum::lr_schedule(w, {1.0, w}), std::pow(s, -0.5)));
  }
  const bool ok = worst <= value_tol && cont <= continuity_tol && rel(knee, 1.41421e-5) < 1e-5 &&
                  rel(first, 7.0711e-10) < 1e-4 && rel(later, 7.0711e-6) < 1e-4;
  return {ok, "max value rel err " + fmt("%.2e", worst) + ", continuity rel err " + fmt("%.2e", cont)};
}

// ------------------------------------------------------------------ 3

Outcome gradient_oracles(const Args&) {
  constexpr double tol = 1e-4;
  constexpr int instances = 20;
  Rng rng(77);
  double clf = 0, kge = 0, model = 0;
  for (int i = 0; i < instances; ++i) clf = std::max(clf, oracle::classifier_gradient_error(rng));
  for (int i = 0; i < instances; ++i)
    kge = std::max(kge, oracle::transe_gradient_error(rng, i % 2 ? katsum::Norm::L1 : katsum::Norm::L2));
  for (int i = 0; i < instances; ++i) model = std::max(model, oracle::summarizer_gradient_error(rng));
  return {clf < tol && kge < tol && model < tol,
          "max rel err over " + std::to_string(instances) + " instances: classifier " + fmt("%.2e", clf) +
              ", transe " + fmt("%.2e", kge) + ", summarizer " + fmt("%.2e", model)};
}

// ------------------------------------------------------------------ 4

Outcome transe_desk_check(const Args& a) {
  constexpr double norm_tol = 1e-9;
  constexpr double min_hits = 0.8;
  const auto rows = katsum::load_triplets(a.data + "/toy/toy_kg.tsv");
  const auto g = katsum::build_graph(rows.triplets);
  katsum::KgeConfig cfg;
  cfg.d = 16;
  cfg.gamma = 1.0;
  cfg.epochs = 200;
  double worst_norm = 0;
  long steps = 0;
  const auto res = katsum::train_kge(g, cfg, [&](const katsum::KGEmbeddings& e) {
    ++steps;
    for (Eigen::Index r = 0; r < e.entity.rows(); ++r)
      worst_norm = std::max(worst_norm, std::abs(e.entity.row(r).norm() - 1.0));
  });
  const double hits = oracle::tail_hits_at_1(g, res.embeddings);
  const double first = res.loss_trace.front(), last = res.loss_trace.back();
  return {last < first && worst_norm <= norm_tol && hits >= min_hits,
          std::to_string(g.entities.size()) + " entities, " + std::to_string(g.relations.size()) + " relations, " +
              std::to_string(g.triples.size()) + " triples; loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) +
              ", max |norm-1| " + fmt("%.1e", worst_norm) + " over " + std::to_string(steps) + " steps, hits@1 " +
              fmt("%.3f", hits)};
}

// ------------------------------------------------------------------ 5

Outcome baseline_equivalence(const Args&) {
  constexpr double tol = 1e-6;
  constexpr int settings = 10;
  Rng rng(31);
  double worst = 0;
  for (int i = 0; i < settings; ++i) {
    katsum::ModelConfig c;
    c.d_model = 16;
    c.n_heads = 4;
    c.enc_layers = 1 + static_cast<int>(rng.below(2));
    c.dec_layers = 1 + static_cast<int>(rng.below(2));
    c.d_ff = 32;
    c.max_len = 24;
    c.vocab_size = 20;
    c.kg_dim = 12;
    const auto m = katsum::Summarizer<double>::initialized(c, rng.next_u64());
    katsum::Example<double> ex;
    ex.source = {katsum::Vocab::bos};
    for (std::size_t k = 0, n = 3 + rng.below(12); k < n; ++k) ex.source.push_back(4 + static_cast<int>(rng.below(16)));
    ex.source.push_back(katsum::Vocab::eos);
    ex.target = {katsum::Vocab::bos};
    for (std::size_t k = 0, n = 2 + rng.below(8); k < n; ++k) ex.target.push_back(4 + static_cast<int>(rng.below(16)));
    ex.kg = katsum::Mat<double>(0, c.kg_dim);
    const auto fused = m.forward(ex);
    const auto plain = m.forward_baseline(ex.source, ex.target);
    worst = std::max(worst, (fused - plain).cwiseAbs().maxCoeff());
  }
  return {worst <= tol, "max |diff| over " + std::to_string(settings) + " weight settings " + fmt("%.1e", worst)};
}

// ------------------------------------------------------------------ 6

Outcome memorization(const Args& a) {
  constexpr double target_r1 = 95.0;
  constexpr long max_steps = 3000;
  const auto docs = katsum::load_dataset(a.data + "/toy/memorize.jsonl", katsum::Split::train);
  const auto vocab = katsum::build_vocab(docs, 1);
  katsum::ModelConfig c;
  c.d_model = 128;
  c.n_heads = 4;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.d_ff = 512;
  c.max_len = 64;
  c.dropout = 0.0;
  c.vocab_size = static_cast<int>(vocab.size());
  c.kg_dim = 150;
  std::vector<katsum::Example<double>> data;
  for (const auto& d : docs) {
    katsum::Example<double> ex;
    ex.source = katsum::encode(katsum::tokenize(d.source), vocab, 64);
    ex.target = katsum::encode(katsum::tokenize(d.summary), vocab, 32);
    ex.kg = katsum::Mat<double>(0, c.kg_dim);
    data.push_back(std::move(ex));
  }
  katsum::TrainConfig tc;
  tc.encoder = {0.01, 200};
  tc.decoder = {0.02, 200};
  tc.accumulate_every = 1;
  tc.batch_size = 8;
  tc.checkpoint_every = 100;
  tc.log_every = 100;
  tc.total_steps = max_steps;
  tc.label_smoothing = 0.1;
  tc.seed = 3;
  katsum::Trainer<double> trainer(katsum::Summarizer<double>::initialized(c, 3), data, tc);
  katsum::TrainHooks<double> hooks;
  hooks.validate = [&](const katsum::Summarizer<double>& m) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 0; i < docs.size(); ++i)
      pairs.emplace_back(docs[i].summary, kp::summarize(m, vocab, data[i], katsum::DecodeMode::greedy, 1, 32));
    return katsum::rouge::evaluate_corpus(pairs);
  };
  hooks.stop = [&](const katsum::TraceRow& r) { return r.rouge && r.rouge->rouge1 >= target_r1; };
  const auto res = katsum::train_summarizer(trainer, hooks);
  const auto& last = res.trace.back();
  const double r1 = last.rouge ? last.rouge->rouge1 : 0.0;
  return {r1 >= target_r1 && trainer.step() <= max_steps,
          "ROUGE-1 F1 " + fmt("%.2f", r1) + " on the " + std::to_string(docs.size()) + " training pairs after " +
              std::to_string(trainer.step()) + " optimizer steps"};
}

// ------------------------------------------------------------------ 7

Outcome directional_ablation(const Args& a) {
  constexpr int min_wins = 2;
  const std::vector<long long> seeds{1, 2, 3};
  int wins = 0;
  std::string detail;
  std::ostringstream log;
  for (auto seed : seeds) {
    oracle::TempDir dir;
    kp::RunConfig cfg;
    cfg.load_file(a.data + "/toy/toy.cfg");
    cfg.set("paths.artifacts", dir.str());
    cfg.set("seed", std::to_string(seed));
    kp::Workspace ws(cfg);
    kp::run_extract(ws, log);
    kp::run_kge(ws, log);
    kp::run_label(ws, log);
    kp::run_classifier(ws, log);
    const auto res = kp::run_ablation(ws, log, {kp::Variant::full, kp::Variant::no_kg}, 1.0);
    const double full = res.reports[0].second.rouge1, none = res.reports[1].second.rouge1;
    wins += full > none;
    detail += "seed " + std::to_string(seed) + ": full " + fmt("%.1f", full) + " vs no_kg " + fmt("%.1f", none) + "; ";
  }
  return {wins >= min_wins, detail + "wins " + std::to_string(wins) + "/" + std::to_string(seeds.size())};
}

// ------------------------------------------------------------------ 8

std::vector<katsum::Example<double>> small_corpus(const Args& a, katsum::Vocab& vocab, katsum::ModelConfig& c) {
  const auto docs = katsum::load_dataset(a.data + "/toy/memorize.jsonl", katsum::Split::train);
  vocab = katsum::build_vocab(docs, 1);
  c = {};
  c.d_model = 16;
  c.n_heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.d_ff = 32;
  c.max_len = 48;
  c.dropout = 0.1;
  c.vocab_size = static_cast<int>(vocab.size());
  c.kg_dim = 6;
  Rng rng(8);
  std::vector<katsum::Example<double>> data;
  for (const auto& d : docs) {
    katsum::Example<double> ex;
    ex.source = katsum::encode(katsum::tokenize(d.source), vocab, 48);
    ex.target = katsum::encode(katsum::tokenize(d.summary), vocab, 24);
    ex.kg = katsum::Mat<double>(static_cast<Eigen::Index>(rng.below(3)), c.kg_dim);
    for (Eigen::Index i = 0; i < ex.kg.size(); ++i) ex.kg.data()[i] = rng.normal();
    data.push_back(std::move(ex));
  }
  return data;
}

Outcome determinism_and_resume(const Args& a) {
  constexpr long total = 24, split_at = 10;
  katsum::Vocab vocab;
  katsum::ModelConfig c;
  const auto data = small_corpus(a, vocab, c);
  katsum::TrainConfig tc;
  tc.encoder = {0.01, 8};
  tc.decoder = {0.02, 8};
  tc.accumulate_every = 2;
  tc.batch_size = 3;
  tc.seed = 12;
  auto run = [&](long steps) {
    katsum::Trainer<double> t(katsum::Summarizer<double>::initialized(c, 12), data, tc);
    for (long s = 0; s < steps; ++s) t.train_step();
    return t.state(vocab).serialize();
  };
  const auto first = run(total);
  const bool same = first == run(total);

  oracle::TempDir dir;
  const auto path = dir.str("state.ckpt");
  {
    katsum::Trainer<double> t(katsum::Summarizer<double>::initialized(c, 12), data, tc);
    for (long s = 0; s < split_at; ++s) t.train_step();
    t.save(path, vocab);
  }
  // a trainer built from different weights must be fully overwritten by the checkpoint
  katsum::Trainer<double> resumed(katsum::Summarizer<double>::initialized(c, 999), data, tc);
  resumed.load(path);
  for (long s = split_at; s < total; ++s) resumed.train_step();
  const bool resumed_same = resumed.state(vocab).serialize() == first;
  return {same && resumed_same, std::string("repeat run ") + (same ? "bit-identical" : "DIFFERS") + ", resume at " +
                                    std::to_string(split_at) + "/" + std::to_string(total) + " " +
                                    (resumed_same ? "bit-identical" : "DIFFERS")};
}

// ------------------------------------------------------------------ 9

Outcome pipeline_smoke(const Args& a) {
  if (a.cli.empty()) return {false, "no --cli binary given"};
  oracle::TempDir dir;
  const std::string base = "'" + a.cli + "' --config '" + a.data + "/toy/toy.cfg' --artifacts-dir '" + dir.str() + "' ";
  const std::vector<std::string> commands{"extract-triplets", "train-kge", "label-triplets",
                                          "train-classifier", "train",     "generate --split test",
                                          "evaluate --split test", "ablate", "report"};
  const auto logfile = dir.str("smoke.log");
  for (const auto& c : commands) {
    const int rc = std::system((base + c + " >>'" + logfile + "' 2>&1").c_str());
    if (rc != 0) {
      std::string tail = katsum::read_file(logfile);
      if (tail.size() > 400) tail = tail.substr(tail.size() - 400);
      return {false, "'" + c + "' exited with status " + std::to_string(rc) + ": " + tail};
    }
  }
  const auto md = katsum::read_file(dir.str("report/report.md"));
  const auto j = nlohmann::json::parse(katsum::read_file(dir.str("report/report.json")));
  const std::vector<std::string> columns{"Model", "ROUGE_1", "ROUGE_2", "ROUGE_L"};
  bool ok = md.rfind("| Model | ROUGE_1 | ROUGE_2 | ROUGE_L |", 0) == 0 && j.at("columns") == columns;
  std::vector<std::string> models;
  for (const auto& r : j.at("rows")) models.push_back(r.at("Model"));
  for (const std::string want : {"Lead-3", "KATSum (full)", "KATSum (no classification)", "KATSum (no KG)"})
    ok = ok && std::count(models.begin(), models.end(), want) >= 1;
  std::string names;
  for (const auto& m : models) names += (names.empty() ? "" : ", ") + m;
  return {ok, std::to_string(commands.size()) + " subcommands ok; report rows: " + names};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)(const Args&);
};

const Criterion kCriteria[] = {
    {1, "rouge oracle suite", rouge_oracles},
    {2, "schedule analytics", schedule_values},
    {3, "gradient oracles", gradient_oracles},
    {4, "transe desk check", transe_desk_check},
    {5, "baseline equivalence", baseline_equivalence},
    {6, "memorization", memorization},
    {7, "directional ablation", directional_ablation},
    {8, "determinism and resume", determinism_and_resume},
    {9, "pipeline smoke test", pipeline_smoke},
};

}  // namespace

int main(int argc, char** argv) {
  Args args;
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string s = argv[i];
    if (s == "--cli" && i + 1 < argc) args.cli = argv[++i];
    else if (s == "--data" && i + 1 < argc) args.data = argv[++i];
    else wanted.push_back(std::stoi(s));
  }
  int failures = 0;
  for (const auto& c : kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(args);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << " [" << fmt("%.1f", secs) << " s]" << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
