// katsum: command-line driver for the staged summarization pipeline.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "katsum/pipeline.hpp"

namespace kp = katsum::pipeline;

namespace {

[[noreturn]] void fail(const std::string& kind, std::string msg) {
  for (auto& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "katsum: error[" << kind << "]: " << msg << std::endl;
  std::exit(kind == "usage" ? 2 : 1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-aware abstractive summarization pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, artifacts_dir;
  std::optional<long long> seed;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Run configuration file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Global seed (overrides the config value)");
  app.add_option("--artifacts-dir", artifacts_dir, "Artifacts directory (overrides paths.artifacts)");
  app.add_option("--set", overrides, "Override one config value, key=value (repeatable)");

  auto* extract = app.add_subcommand("extract-triplets", "Extract source and summary triplets for every split");
  std::string lexicon_dir, external_dir;
  extract->add_option("--lexicon", lexicon_dir, "Lexicon directory with verbs.txt, stopwords.txt, prepositions.txt");
  extract->add_option("--external-triplets", external_dir,
                      "Ingest <split>.source.tsv / <split>.summary.tsv from this directory instead of extracting");

  auto* kge = app.add_subcommand("train-kge", "Build the training knowledge graph and train TransE embeddings");
  auto* label = app.add_subcommand("label-triplets", "Label training triplets by similarity to summary triplets");
  auto* classifier = app.add_subcommand("train-classifier", "Train the sigmoid triplet classifier");

  auto* train = app.add_subcommand("train", "Train the knowledge-aware summarizer");
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from model/state.ckpt when present");

  std::string split_name = "test";
  auto* generate = app.add_subcommand("generate", "Summarize a split with the best checkpoint");
  generate->add_option("--split", split_name, "train|valid|test")->capture_default_str();
  auto* evaluate = app.add_subcommand("evaluate", "Score generated summaries with ROUGE-1/2/L");
  evaluate->add_option("--split", split_name, "train|valid|test")->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the full, no_classification and no_kg variants");
  std::string variants;
  std::optional<double> subset_fraction;
  ablate->add_option("--variants", variants, "Comma-separated subset of full,no_classification,no_kg");
  ablate->add_option("--subset-fraction", subset_fraction,
                     "Train each variant on a seeded uniform sample of this fraction of the training set");

  auto* report = app.add_subcommand("report", "Collect evaluation results into markdown and JSON tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
  }

  try {
    kp::RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& o : overrides) cfg.set_override(o);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (!artifacts_dir.empty()) cfg.set("paths.artifacts", artifacts_dir);
    if (!lexicon_dir.empty()) cfg.set("paths.lexicon", lexicon_dir);
    if (!external_dir.empty()) cfg.set("paths.external_triplets", external_dir);
    if (subset_fraction) cfg.set("ablation.subset_fraction", katsum::exact(*subset_fraction));
    if (!variants.empty()) cfg.set("ablation.variants", variants);

    kp::Workspace ws(cfg);
    auto& log = std::cerr;
    if (*extract) {
      kp::run_extract(ws, log);
    } else if (*kge) {
      kp::run_kge(ws, log);
    } else if (*label) {
      kp::run_label(ws, log);
    } else if (*classifier) {
      kp::run_classifier(ws, log);
    } else if (*train) {
      kp::run_train(ws, log, {}, resume);
    } else if (*generate) {
      kp::run_generate(ws, log, katsum::parse_split(split_name));
    } else if (*evaluate) {
      const auto rep = kp::run_evaluate(ws, log, katsum::parse_split(split_name));
      std::cout << rep.to_json().dump() << "\n";
    } else if (*ablate) {
      const auto res = kp::run_ablation(ws, log, kp::parse_variants(cfg.str("ablation.variants")),
                                        cfg.real("ablation.subset_fraction"));
      std::cout << res.table.markdown;
    } else if (*report) {
      std::cout << kp::run_report(ws, log).markdown;
    }
  } catch (const katsum::Error& e) {
    fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    fail("internal", e.what());
  }
  return 0;
}
