#include <gtest/gtest.h>

#include <sstream>

#include "katsum/pipeline.hpp"
#include "katsum/synthetic.hpp"
#include "oracles.hpp"

using namespace katsum;
using namespace katsum::pipeline;

namespace {

/// Twelve synthetic documents and a configuration small enough to run every stage in seconds.
struct MiniRun {
  oracle::TempDir dir;
  RunConfig cfg;
  std::ostringstream log;

  MiniRun() {
    synthetic::Spec spec;
    spec.documents = 12;
    spec.seed = 99;
    const auto docs = synthetic::generate(spec);
    write_file(dir.str("train.jsonl"), to_jsonl({docs.begin(), docs.begin() + 8}));
    write_file(dir.str("valid.jsonl"), to_jsonl({docs.begin() + 8, docs.begin() + 10}));
    write_file(dir.str("test.jsonl"), to_jsonl({docs.begin() + 10, docs.end()}));
    cfg.parse(R"(paths.train = train.jsonl
paths.valid = valid.jsonl
paths.test = test.jsonl
paths.artifacts = out
data.min_freq = 1
data.max_source_len = 16
data.max_target_len = 20
model.d_model = 16
model.n_heads = 2
model.enc_layers = 1
model.dec_layers = 1
model.d_ff = 32
model.max_len = 24
train.lr_e = 0.01
train.warmup_e = 10
train.lr_d = 0.02
train.warmup_d = 10
train.accumulate_every = 1
train.batch_size = 2
train.checkpoint_every = 4
train.total_steps = 8
train.log_every = 2
kge.dim = 8
kge.epochs = 20
kge.batch = 16
classifier.epochs = 2
classifier.steps_per_epoch = 50
select.k = 4
generate.max_out = 10
)",
              "mini.cfg", dir.path());
  }

  std::string out(const std::string& rel) const { return read_file((fs::path(cfg.path("paths.artifacts")) / rel).string()); }
};

}  // namespace

TEST(RunConfig, RejectsUnknownKeysWithLocation) {
  RunConfig c;
  try {
    c.parse("seed = 3\n# comment\nmodel.width = 4\n", "x.cfg", "/tmp");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "config");
    EXPECT_NE(std::string(e.what()).find("x.cfg:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(c.set_override("nokey"), Error);
  EXPECT_THROW(c.set("train.bogus", "1"), Error);
  EXPECT_EQ(c.integer("seed"), 3);
}

TEST(RunConfig, PathsResolveAgainstTheFileDirectory) {
  RunConfig c;
  c.parse("paths.train = data/t.jsonl\npaths.test = /abs/x.jsonl\n", "c", "/base/dir");
  EXPECT_EQ(c.path("paths.train"), "/base/dir/data/t.jsonl");
  EXPECT_EQ(c.path("paths.test"), "/abs/x.jsonl");
  EXPECT_THROW(c.path("paths.valid"), Error);
  EXPECT_FALSE(c.has("paths.valid"));
}

TEST(RunConfig, DefaultsAndDerivedConfigs) {
  RunConfig c;
  const auto t = c.train_config();
  EXPECT_EQ(t.accumulate_every, 5);
  EXPECT_EQ(t.checkpoint_every, 2500);
  EXPECT_EQ(t.encoder.warmup, 20000);
  EXPECT_EQ(t.decoder.warmup, 10000);
  EXPECT_EQ(c.classifier_config().epochs, 5);
  EXPECT_EQ(c.classifier_config().steps_per_epoch, 10000);
  EXPECT_EQ(c.real("select.threshold"), 0.8);
  EXPECT_NE(c.kge_config().seed, c.classifier_config().seed);
  c.set("data.max_source_len", "600");
  EXPECT_THROW(c.model_config(100, 150), Error);
}

TEST(Workspace, LockIsExclusive) {
  oracle::TempDir dir;
  RunConfig c;
  c.set("paths.artifacts", dir.str("a"));
  {
    Workspace ws(c);
    try {
      Workspace other(c);
      FAIL();
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find("locked"), std::string::npos);
    }
  }
  EXPECT_NO_THROW(Workspace{c});
}

TEST(Pipeline, LabelBeforeKgeNamesTheMissingStage) {
  MiniRun r;
  Workspace ws(r.cfg);
  run_extract(ws, r.log);
  try {
    run_label(ws, r.log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "prerequisite");
    EXPECT_NE(std::string(e.what()).find("'kge' stage"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("katsum train-kge"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_generate(ws, r.log, Split::test), Error);
  EXPECT_THROW(run_report(ws, r.log), Error);
}

TEST(Pipeline, EndToEndIsIdempotent) {
  MiniRun r;
  const std::vector<std::string> all{"extract", "kge", "label", "classifier", "train", "generate", "evaluate"};
  run_pipeline(r.cfg, all, r.log);
  const std::vector<std::string> files{"triplets/train.source.tsv", "kge/embeddings.tsv", "labels/train.tsv",
                                       "classifier/params.txt",     "model/best.ckpt",    "model/state.ckpt",
                                       "model/trace.csv",           "generate/test.jsonl", "eval/test.json"};
  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(r.out(f));
  run_pipeline(r.cfg, all, r.log);
  for (std::size_t i = 0; i < files.size(); ++i) EXPECT_EQ(r.out(files[i]), first[i]) << files[i];

  const auto manifest = nlohmann::json::parse(r.out("manifest.json"));
  EXPECT_EQ(manifest.at("seed"), 1);
  for (const char* s : {"extract", "kge", "label", "classifier", "train", "generate/test", "evaluate/test"})
    EXPECT_TRUE(manifest.at("stages").contains(s)) << s;
  EXPECT_TRUE(manifest["stages"]["kge"]["inputs"].size() >= 1);

  const auto trace = parse_trace_csv(r.out("model/trace.csv"));
  ASSERT_EQ(trace.size(), 4u);
  EXPECT_TRUE(trace[1].rouge.has_value());
  EXPECT_FALSE(trace[0].rouge.has_value());
  const auto eval = nlohmann::json::parse(r.out("eval/test.json"));
  EXPECT_EQ(eval.at("n_pairs"), 2);
}

TEST(Pipeline, ResumeMatchesUninterruptedTraining) {
  MiniRun a, b;
  for (auto* r : {&a, &b}) {
    Workspace ws(r->cfg);
    for (const char* s : {"extract", "kge", "label", "classifier"}) run_stage(ws, r->log, s);
  }
  {
    Workspace ws(a.cfg);
    run_train(ws, a.log);
  }
  b.cfg.set("train.total_steps", "4");
  {
    Workspace ws(b.cfg);
    run_train(ws, b.log);
  }
  b.cfg.set("train.total_steps", "8");
  {
    Workspace ws(b.cfg);
    const auto o = run_train(ws, b.log, {}, true);
    EXPECT_EQ(o.steps, 8);
  }
  EXPECT_EQ(a.out("model/state.ckpt"), b.out("model/state.ckpt"));
  EXPECT_EQ(a.out("model/trace.csv"), b.out("model/trace.csv"));
}

TEST(Pipeline, AblationAndReportTables) {
  MiniRun r;
  Workspace ws(r.cfg);
  for (const char* s : {"extract", "kge", "label", "classifier"}) run_stage(ws, r.log, s);
  const auto res = run_ablation(ws, r.log, {Variant::no_classification, Variant::no_kg}, 0.5);
  ASSERT_EQ(res.reports.size(), 2u);
  EXPECT_EQ(res.table.data["rows"].size(), 2u);
  EXPECT_EQ(res.table.data["columns"].size(), 4u);
  const auto report = run_report(ws, r.log);
  EXPECT_EQ(report.data["rows"].size(), 2u);
  EXPECT_EQ(report.data["rows"][1]["Model"], "KATSum (no KG)");
}

TEST(RenderTable, JsonMatchesMarkdown) {
  const auto t = render_table({{"A", 42.849, 20.75, 40.2}, {"B", 0.04, 100, 9.95}}, "Model");
  EXPECT_EQ(t.markdown,
            "| Model | ROUGE_1 | ROUGE_2 | ROUGE_L |\n|---|---:|---:|---:|\n| A | 42.8 | 20.8 | 40.2 |\n"
            "| B | 0.0 | 100.0 | 9.9 |\n");
  std::istringstream md(t.markdown);
  std::string line;
  std::getline(md, line);
  std::getline(md, line);
  for (const auto& row : t.data["rows"]) {
    std::getline(md, line);
    const auto cells = split(line, '|');
    EXPECT_EQ(trim(cells[1]), row["Model"].get<std::string>());
    EXPECT_EQ(std::stod(cells[2]), row["ROUGE_1"].get<double>());
    EXPECT_EQ(std::stod(cells[3]), row["ROUGE_2"].get<double>());
    EXPECT_EQ(std::stod(cells[4]), row["ROUGE_L"].get<double>());
  }
}

TEST(SubsetIndices, SeededSortedAndSized) {
  const auto a = subset_indices(48, 0.25, 3);
  EXPECT_EQ(a.size(), 12u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(a, subset_indices(48, 0.25, 3));
  EXPECT_NE(a, subset_indices(48, 0.25, 4));
  EXPECT_EQ(subset_indices(5, 1.0, 3).size(), 5u);
  EXPECT_EQ(subset_indices(5, 0.01, 3).size(), 1u);
  EXPECT_THROW(subset_indices(5, 0.0, 3), Error);
  EXPECT_THROW(subset_indices(5, 1.5, 3), Error);
}

TEST(Variants, ParseAndLabels) {
  EXPECT_EQ(parse_variants("full,no_kg"), (std::vector<Variant>{Variant::full, Variant::no_kg}));
  EXPECT_THROW(parse_variants("full,bogus"), Error);
  EXPECT_STREQ(variant_label(Variant::no_classification), "KATSum (no classification)");
}

TEST(ToyFixtures, MatchTheGenerator) {
  const std::string dir = std::string(KATSUM_DATA_DIR) + "/toy/";
  const auto docs = synthetic::generate({});
  ASSERT_EQ(docs.size(), 64u);
  EXPECT_EQ(read_file(dir + "train.jsonl"), to_jsonl({docs.begin(), docs.begin() + 48}));
  EXPECT_EQ(read_file(dir + "valid.jsonl"), to_jsonl({docs.begin() + 48, docs.begin() + 56}));
  EXPECT_EQ(read_file(dir + "test.jsonl"), to_jsonl({docs.begin() + 56, docs.end()}));
  synthetic::Spec mem;
  mem.documents = 8;
  mem.seed = 7;
  mem.id_prefix = "mem";
  EXPECT_EQ(read_file(dir + "memorize.jsonl"), to_jsonl(synthetic::generate(mem)));
}

TEST(ToyFixtures, SummariesVerbalizeSourceTriplets) {
  const auto lex = Lexicon::load_dir(std::string(KATSUM_DATA_DIR) + "/lexicon");
  for (const auto& d : synthetic::generate({})) {
    const auto src = extract_triplets(d, lex);
    const auto sum = extract_summary_triplets(d, lex);
    EXPECT_GE(sum.size(), 2u);
    EXPECT_LE(sum.size(), 4u);
    for (auto s : sum) {
      bool found = false;
      for (const auto& t : src) found = found || (t.head == s.head && t.relation == s.relation && t.tail == s.tail);
      EXPECT_TRUE(found) << d.id << ": " << s.head << " " << s.relation << " " << s.tail;
    }
  }
}

TEST(Cli, ErrorsAreSingleLineWithStatus) {
  oracle::TempDir dir;
  const std::string cli = KATSUM_CLI;
  const auto err = dir.str("err.txt");
  int rc = std::system(("'" + cli + "' --artifacts-dir '" + dir.str("a") + "' label-triplets 2>'" + err + "'").c_str());
  EXPECT_NE(rc, 0);
  auto text = read_file(err);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_EQ(text.rfind("katsum: error[prerequisite]: ", 0), 0u) << text;

  rc = std::system(("'" + cli + "' --bogus train 2>'" + err + "'").c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 2);
  text = read_file(err);
  EXPECT_EQ(text.rfind("katsum: error[usage]: ", 0), 0u) << text;

  const auto help = dir.str("help.txt");
  ASSERT_EQ(std::system(("'" + cli + "' --help >'" + help + "'").c_str()), 0);
  text = read_file(help);
  for (const char* s : {"--config", "--seed", "--artifacts-dir", "--set", "extract-triplets", "train-kge",
                        "label-triplets", "train-classifier", "train", "generate", "evaluate", "ablate", "report"})
    EXPECT_NE(text.find(s), std::string::npos) << s;
}
