#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fetilda/harness.hpp"
#include "fetilda/numcore/checkpoint.hpp"

using namespace fetilda;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fetilda_harness_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig planted_config(const fs::path& dir, std::size_t documents) {
  PlantedSpec spec;
  spec.documents = documents;
  spec.tokens_per_document = 20;
  spec.filler_words = 10;
  spec.documents_per_year = 5;
  spec.seed = 3;
  write_planted_corpus(make_planted_corpus(spec), dir);
  ExperimentConfig c;
  c.docs = dir / "docs.jsonl";
  c.targets = dir / "targets.csv";
  c.vocab = dir / "vocab.txt";
  c.output_dir = dir / "runs";
  c.chunk_length = 8;
  c.encoder.model_dim = 8;
  c.encoder.num_layers = 1;
  c.encoder.num_heads = 2;
  c.encoder.ff_dim = 16;
  c.lstm_hidden = 3;
  c.head.hidden_dim = 16;
  c.train.learning_rates = {0.001, 0.002};
  c.train.max_epochs = 2;
  return c;
}

ResultRow row(const std::string& model, Metric m, double mse) {
  ResultRow r;
  r.model = model;
  r.metric = m;
  r.test_mse = mse;
  return r;
}

}  // namespace

TEST(Improvement, PaperAnchors) {
  EXPECT_NEAR(improvement(0.000879, 0.000746), 0.1513, 5e-5);
  // 0.041461 / 0.150860 = 0.274831, the paper's "27%"
  EXPECT_NEAR(improvement(0.150860, 0.109399), 0.274831, 5e-7);
  EXPECT_NEAR(improvement(0.150860, 0.109399), 0.27, 0.005);
  EXPECT_NEAR(improvement(0.115635, 0.109399), 0.054, 5e-4);
  EXPECT_EQ(improvement(0.3, 0.3), 0.0);
  EXPECT_LT(improvement(0.1, 0.2), 0.0);
  EXPECT_THROW(improvement(0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(improvement(-1.0, 0.1), std::invalid_argument);
}

TEST(Improvement, StrictlyDecreasingInModelMse) {
  double prev = improvement(0.5, 0.0);
  for (int i = 1; i <= 100; ++i) {
    const double cur = improvement(0.5, 0.01 * i);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(Config, ParsesKeysCommentsAndLists) {
  const auto c = ExperimentConfig::parse(
      "# experiment\n"
      "metric = ROE\n"
      "section=all\n"
      "model=tfidf   # baseline\n"
      "learning_rates=0.001, 0.002\n"
      "methods=fc2,kernel_ridge\n"
      "scaling=false\n"
      "split=years\n"
      "train_years=1996-2000\n"
      "freeze=last_layer\n");
  EXPECT_EQ(c.metric, Metric::kRoe);
  EXPECT_FALSE(c.section.has_value());
  EXPECT_EQ(c.model, ModelKind::kTfidf);
  EXPECT_EQ(c.train.learning_rates, (std::vector<double>{0.001, 0.002}));
  EXPECT_EQ(c.methods, (std::vector<HeadMethod>{HeadMethod::kFc2, HeadMethod::kKernelRidge}));
  EXPECT_FALSE(c.scaling);
  EXPECT_TRUE(c.year_splits);
  EXPECT_EQ(c.encoder.freeze, FreezeMode::kLastLayer);
}

TEST(Config, TextRoundTripAndHash) {
  ExperimentConfig c;
  c.set("kr_gamma", "0.3");
  c.set("seed", "17");
  const auto back = ExperimentConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.hash(), c.hash());
  ExperimentConfig moved = c;
  moved.output_dir = "elsewhere";
  EXPECT_EQ(moved.hash(), c.hash());
  moved.set("seed", "18");
  EXPECT_NE(moved.hash(), c.hash());
}

TEST(Config, ErrorsNameTheLineOrKey) {
  try {
    ExperimentConfig::parse("metric=ROA\nbogus=1\n");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
  EXPECT_THROW(ExperimentConfig::parse("max_epochs=ten\n"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::parse("just words\n"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::parse("methods=lasso\n"), std::invalid_argument);
  ExperimentConfig c;
  c.docs = "/nonexistent/docs.jsonl";
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Experiment, HistoricCopyIsFitExactly) {
  const auto dir = scratch("copy");
  PlantedSpec spec;
  spec.seed = 1;
  auto planted = make_planted_corpus(spec);
  for (auto& t : planted.corpus.targets) t.value = t.hist_value;
  write_planted_corpus(planted, dir);
  ExperimentConfig c;
  c.docs = dir / "docs.jsonl";
  c.targets = dir / "targets.csv";
  c.output_dir = dir / "runs";
  c.model = ModelKind::kHistLinear;
  const auto out = run_experiment(c);
  EXPECT_LT(out.row.test_mse, 1e-20);
  EXPECT_LT(out.row.test_mse_raw, 1e-20);
  EXPECT_EQ(out.examples, 200u);
}

TEST(Experiment, BaselinesAreDeterministicAndReproducibleFromFiles) {
  const auto dir = scratch("baselines");
  ExperimentConfig c = planted_config(dir, 60);
  for (ModelKind m : {ModelKind::kTfidf, ModelKind::kHistLinear, ModelKind::kLog1p}) {
    c.model = m;
    const auto a = run_experiment(c);
    const auto ckpt = slurp(a.checkpoint);
    const auto b = run_experiment(c);
    EXPECT_EQ(a.row, b.row) << to_string(m);
    EXPECT_EQ(slurp(b.checkpoint), ckpt) << to_string(m);
    EXPECT_NEAR(mse_from_predictions(a.predictions), a.row.test_mse, 1e-12);
    EXPECT_NEAR(mse_from_predictions(a.predictions, true), a.row.test_mse_raw, 1e-12);
    EXPECT_GE(a.row.test_mse, 0.0);
    const auto rows = load_result_rows(a.run_dir / "result.csv");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0], a.row);
  }
}

TEST(Experiment, FetildaRunIsDeterministic) {
  const auto dir = scratch("fetilda");
  const ExperimentConfig c = planted_config(dir, 30);
  const auto a = run_experiment(c);
  const auto ckpt = slurp(a.checkpoint);
  const auto b = run_experiment(c);
  EXPECT_EQ(a.row, b.row);
  EXPECT_EQ(slurp(b.checkpoint), ckpt);
  EXPECT_EQ(slurp(a.predictions), slurp(b.predictions));
  EXPECT_NEAR(mse_from_predictions(a.predictions), a.row.test_mse, 1e-12);
  EXPECT_TRUE(fs::exists(a.run_dir / "train_log.csv"));
  EXPECT_TRUE(fs::exists(a.run_dir / "splits.csv"));
}

TEST(Experiment, FrozenEncoderAndRegressorSelection) {
  const auto dir = scratch("frozen");
  ExperimentConfig c = planted_config(dir, 30);
  c.encoder.freeze = FreezeMode::kAll;
  c.methods = {HeadMethod::kFc2, HeadMethod::kLinear, HeadMethod::kKernelRidge};
  const auto out = run_experiment(c);
  EXPECT_TRUE(fs::exists(out.run_dir / "chunk_embeddings.bin"));
  EXPECT_FALSE(out.selected_method.empty());

  // the same embeddings supplied as a file give the same result
  ExperimentConfig from_file = c;
  from_file.embeddings = out.run_dir / "chunk_embeddings.bin";
  from_file.output_dir = dir / "runs2";
  const auto again = run_experiment(from_file);
  EXPECT_EQ(again.row.test_mse, out.row.test_mse);
}

TEST(Experiment, YearProtocolWithoutScalingReportsRawMse) {
  const auto dir = scratch("years");
  PlantedSpec spec;
  spec.documents = 110;
  spec.first_year = 1996;
  spec.documents_per_year = 10;
  spec.seed = 4;
  write_planted_corpus(make_planted_corpus(spec), dir);
  ExperimentConfig c;
  c.docs = dir / "docs.jsonl";
  c.targets = dir / "targets.csv";
  c.output_dir = dir / "runs";
  c.model = ModelKind::kHistLinear;
  c.scaling = false;
  c.year_splits = true;
  const auto out = run_experiment(c);
  EXPECT_EQ(out.row.test_mse, out.row.test_mse_raw);
  std::ifstream manifest(out.run_dir / "splits.csv");
  std::string line, last;
  while (std::getline(manifest, line)) last = line;
  EXPECT_NE(last.find("test_2006"), std::string::npos);
}

TEST(Experiment, ModuleErrorsEchoTheConfig) {
  const auto dir = scratch("broken");
  std::ofstream(dir / "docs.jsonl") << "{not json}\n";
  std::ofstream(dir / "targets.csv") << "entity_id,fiscal_year,metric,value,hist_value\n";
  ExperimentConfig c;
  c.docs = dir / "docs.jsonl";
  c.targets = dir / "targets.csv";
  c.model = ModelKind::kHistLinear;
  try {
    run_experiment(c);
    FAIL();
  } catch (const ExperimentError& e) {
    EXPECT_NE(std::string(e.what()).find("docs.jsonl:1"), std::string::npos);
    EXPECT_NE(e.config_text().find("model=hist_linear"), std::string::npos);
  }
}

TEST(Table, MarksColumnMinimum) {
  const std::vector<ResultRow> rows{row("tfidf", Metric::kRoa, 0.000879), row("fetilda", Metric::kRoa, 0.000746),
                                    row("tfidf", Metric::kRoe, 0.02), row("fetilda", Metric::kRoe, 0.03)};
  const auto t = ResultTable::build(rows);
  ASSERT_EQ(t.models.size(), 2u);
  ASSERT_EQ(t.metrics.size(), 2u);
  EXPECT_FALSE(t.best[0][0]);
  EXPECT_TRUE(t.best[1][0]);
  EXPECT_TRUE(t.best[0][1]);
  EXPECT_FALSE(t.best[1][1]);
  const auto md = t.markdown();
  EXPECT_NE(md.find("| fetilda | **0.000746** | 0.030000 |"), std::string::npos) << md;
  EXPECT_NE(t.csv().find("tfidf,ROE,0.02,1"), std::string::npos) << t.csv();
}

TEST(Table, SingleRowIsBestEverywhere) {
  const std::vector<ResultRow> rows{row("only", Metric::kEps, 1.5)};
  const auto t = ResultTable::build(rows);
  EXPECT_TRUE(t.best[0][0]);
  EXPECT_THROW(ResultTable::build(std::vector<ResultRow>{}), std::invalid_argument);
}

TEST(Table, BestFlagsMatchIndependentArgmin) {
  Rng rng(5);
  const Metric metrics[] = {Metric::kRoa, Metric::kRoe, Metric::kTqr};
  std::vector<ResultRow> rows;
  for (int m = 0; m < 5; ++m) {
    for (Metric k : metrics) rows.push_back(row("m" + std::to_string(m), k, rng.uniform()));
  }
  const auto t = ResultTable::build(rows);
  for (std::size_t j = 0; j < 3; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].metric == metrics[j] && rows[i].test_mse < rows[arg * 3 + j].test_mse) arg = i / 3;
    }
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(t.best[i][j], i == arg);
  }
  const auto stem = scratch("table") / "results";
  emit_table(rows, stem);
  EXPECT_TRUE(fs::exists(stem.string() + ".md"));
  EXPECT_TRUE(fs::exists(stem.string() + ".csv"));
}

TEST(PlantedCorpus, TargetsFollowTheMarkerFrequency) {
  PlantedSpec spec;
  spec.noise = 0.0;
  const auto p = make_planted_corpus(spec);
  ASSERT_EQ(p.corpus.documents.size(), 200u);
  for (std::size_t i = 0; i < 200; ++i) {
    const auto& text = p.corpus.documents[i].text;
    std::size_t k = 0;
    for (auto pos = text.find("marker"); pos != std::string::npos; pos = text.find("marker", pos + 1)) ++k;
    const auto& t = p.corpus.targets[i];
    EXPECT_NEAR(t.value, 0.8 * static_cast<double>(k) / 64.0 + 0.2 * t.hist_value, 1e-15);
  }
}
