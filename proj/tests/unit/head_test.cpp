#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fetilda/corpus.hpp"
#include "fetilda/head.hpp"
#include "fetilda/numcore/gradcheck.hpp"

using namespace fetilda;

namespace {

Vocabulary small_vocab(std::size_t n) {
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (std::size_t i = tokens.size(); i < n; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocabulary::from_tokens(tokens);
}

PipelineConfig tiny_config(std::size_t vocab, std::size_t d, std::size_t hidden) {
  PipelineConfig c;
  c.encoder.vocab_size = vocab;
  c.encoder.model_dim = d;
  c.encoder.num_layers = 2;
  c.encoder.num_heads = 2;
  c.encoder.ff_dim = 2 * d;
  c.encoder.max_positions = 16;
  c.docpool.input_dim = d;
  c.docpool.hidden_dim = 3;
  c.head.input_dim = d;
  c.head.hidden_dim = hidden;
  return c;
}

PipelineExample chunked_doc(const std::string& id, std::size_t tokens, std::size_t b, const Vocabulary& vocab,
                            Rng& rng) {
  TokenSequence seq{id, {}, {}};
  for (std::size_t i = 0; i < tokens; ++i) seq.ids.push_back(4 + static_cast<int>(rng.below(vocab.size() - 4)));
  PipelineExample ex;
  ex.doc_id = id;
  ex.chunks = make_chunks(seq, b, 1 << 20, vocab);
  ex.y_hist = rng.uniform();
  ex.target = rng.uniform();
  return ex;
}

PipelineExample precomputed_doc(const std::string& id, Tensor vectors, double y_hist, double target) {
  PipelineExample ex;
  ex.doc_id = id;
  ex.chunk_vectors = std::move(vectors);
  ex.y_hist = y_hist;
  ex.target = target;
  return ex;
}

PipelineConfig frozen_config(std::size_t d, std::size_t hidden) {
  PipelineConfig c;
  c.docpool.input_dim = d;
  c.docpool.hidden_dim = 4;
  c.head.input_dim = d;
  c.head.hidden_dim = hidden;
  return c;
}

bool same_log(const std::vector<TrainLogRow>& a, const std::vector<TrainLogRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rate != b[i].rate || a[i].epoch != b[i].epoch || a[i].train_mse != b[i].train_mse ||
        a[i].val_mse != b[i].val_mse) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(Head, ZeroWeightsPredictZero) {
  Rng rng(1);
  Head head(HeadConfig{4, 7, 0.1, 0.01}, rng);
  for (Parameter* p : head.parameters()) p->value.fill(0.0);
  EXPECT_EQ(head.predict(std::vector<double>{1, -2, 3, 4}, 0.7), 0.0);
  EXPECT_EQ(head.predict(std::vector<double>{0, 0, 0, 0}, -5.0), 0.0);
}

TEST(Head, HistoricPassThrough) {
  Rng rng(2);
  Head head(HeadConfig{4, 7, 0.1, 0.01}, rng);
  head.fc1_weight().value.fill(0.0);
  head.fc2_weight().value.fill(0.0);
  head.fc2_weight().value[7] = 1.0;
  head.fc2_bias().value.fill(0.0);
  for (double y : {-3.5, 0.0, 0.25, 1e6}) EXPECT_EQ(head.predict(std::vector<double>{9, 8, 7, 6}, y), y);
}

TEST(Head, FitsPaperWidths) {
  Rng rng(3);
  Head head(HeadConfig{}, rng);
  EXPECT_EQ(head.fc1_weight().value.shape(), (Shape{64, 600}));
  EXPECT_EQ(head.fc2_weight().value.shape(), (Shape{601, 1}));
  Tape tape;
  EXPECT_THROW(head.forward(tape, tape.constant(Tensor(Shape{2, 63})), tape.constant(Tensor(Shape{2, 1})), false, rng),
               ShapeError);
  EXPECT_THROW(head.forward(tape, tape.constant(Tensor(Shape{2, 64})), tape.constant(Tensor(Shape{3, 1})), false, rng),
               ShapeError);
  EXPECT_THROW(Head(HeadConfig{4, 5, 1.0, 0.01}, rng), std::invalid_argument);
}

TEST(Head, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Head head(HeadConfig{3, 5, 0.1, 0.01}, rng);
  Tensor x(Shape{4, 3}), hist(Shape{4, 1}), target(Shape{4, 1});
  for (auto& v : x.data()) v = rng.normal();
  for (auto& v : hist.data()) v = rng.normal();
  for (auto& v : target.data()) v = rng.normal();
  auto params = head.parameters();
  const auto report = grad_check(
      params,
      [&](Tape& t) {
        Rng unused;
        return ops::mse(head.forward(t, t.constant(x), t.constant(hist), false, unused), t.constant(target));
      },
      1e-6);
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-6) << e.name;
}

TEST(Head, DropoutOnlyInTraining) {
  Rng rng(5);
  Head head(HeadConfig{3, 50, 0.5, 0.01}, rng);
  Tensor x(Shape{1, 3}, std::vector<double>{0.3, -0.2, 0.9});
  Tape t;
  Rng a(7), b(8);
  const double eval1 = head.forward(t, t.constant(x), t.constant(Tensor::scalar(0.1)), false, a).value().item();
  const double eval2 = head.forward(t, t.constant(x), t.constant(Tensor::scalar(0.1)), false, b).value().item();
  EXPECT_EQ(eval1, eval2);
  const double train1 = head.forward(t, t.constant(x), t.constant(Tensor::scalar(0.1)), true, a).value().item();
  EXPECT_NE(train1, eval1);
}

TEST(Mse, Examples) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_EQ(mean_squared_error(a, a), 0.0);
  EXPECT_EQ(mean_squared_error(std::vector<double>{0, 0}, std::vector<double>{1, 1}), 1.0);
  EXPECT_THROW(mean_squared_error(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  Rng rng(9);
  std::vector<double> p(100), y(100);
  for (std::size_t i = 0; i < 100; ++i) {
    p[i] = rng.normal();
    y[i] = rng.normal();
  }
  double direct = 0;
  for (std::size_t i = 0; i < 100; ++i) direct += (p[i] - y[i]) * (p[i] - y[i]) / 100.0;
  EXPECT_NEAR(mean_squared_error(p, y), direct, 1e-14);
  Tape t;
  Var l = ops::mse(t.constant(Tensor(Shape{100, 1}, p)), t.constant(Tensor(Shape{100, 1}, y)));
  EXPECT_NEAR(l.value().item(), direct, 1e-14);
}

TEST(Pipeline, EndToEndGradientCheck) {
  const auto vocab = small_vocab(50);
  Rng rng(10);
  Pipeline pipe(tiny_config(50, 8, 16), 10);
  std::vector<PipelineExample> docs{chunked_doc("a", 11, 4, vocab, rng), chunked_doc("b", 9, 4, vocab, rng)};
  ASSERT_EQ(docs[0].chunks.size(), 3u);
  ASSERT_EQ(docs[1].chunks.size(), 3u);
  auto params = pipe.trainable_parameters(false);
  EXPECT_EQ(params.size(), pipe.parameters().size());
  const auto report = grad_check(
      params,
      [&](Tape& t) {
        Rng unused;
        const PipelineExample* batch[] = {&docs[0], &docs[1]};
        Tensor target(Shape{2, 1}, std::vector<double>{docs[0].target, docs[1].target});
        return ops::mse(pipe.forward(t, batch, false, unused), t.constant(target));
      },
      1e-3);
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-3) << e.name;
}

TEST(Pipeline, ConfigMismatchRejected) {
  auto c = tiny_config(50, 8, 16);
  c.head.input_dim = 9;
  EXPECT_THROW(Pipeline(c, 1), std::invalid_argument);
  c = tiny_config(50, 8, 16);
  c.docpool.input_dim = 9;
  c.head.input_dim = 9;
  EXPECT_THROW(Pipeline(c, 1), std::invalid_argument);
  Pipeline frozen(frozen_config(4, 8), 1);
  PipelineExample ex;
  ex.doc_id = "nothing";
  EXPECT_THROW(frozen.predict(ex), std::invalid_argument);
}

TEST(Pipeline, StateRoundTripAndMismatch) {
  Pipeline a(tiny_config(50, 8, 16), 1), b(tiny_config(50, 8, 16), 2);
  EXPECT_NE(a.state(), b.state());
  b.load_state(a.state());
  EXPECT_EQ(a.state(), b.state());
  Pipeline other(frozen_config(8, 16), 1);
  EXPECT_THROW(other.load_state(a.state()), std::invalid_argument);
}

TEST(Pipeline, EvaluationIsBitIdentical) {
  const auto vocab = small_vocab(50);
  Rng rng(11);
  Pipeline pipe(tiny_config(50, 8, 16), 3);
  const auto doc = chunked_doc("a", 30, 4, vocab, rng);
  EXPECT_EQ(pipe.predict(doc), pipe.predict(doc));
}

TEST(Pipeline, FreezeModesControlTrainableCensus) {
  auto c = tiny_config(50, 8, 16);
  c.encoder.freeze = FreezeMode::kAll;
  Pipeline all(c, 1);
  EXPECT_EQ(all.trainable_parameters(false).size(), 6u + 4u);
  c.encoder.freeze = FreezeMode::kLastLayer;
  Pipeline last(c, 1);
  const auto top = last.encoder().layer_parameters(1);
  const auto trainable = last.trainable_parameters(false);
  EXPECT_EQ(trainable.size(), last.parameters().size() - top.size());
  for (Parameter* p : top) EXPECT_EQ(std::find(trainable.begin(), trainable.end(), p), trainable.end()) << p->name;
}

TEST(Train, DefaultRatesAndValidation) {
  const auto rates = default_learning_rates();
  ASSERT_EQ(rates.size(), 8u);
  EXPECT_DOUBLE_EQ(rates.front(), 0.0006);
  EXPECT_DOUBLE_EQ(rates.back(), 0.0013);
  for (std::size_t i = 1; i < rates.size(); ++i) EXPECT_NEAR(rates[i] - rates[i - 1], 0.0001, 1e-15);
  TrainConfig bad;
  bad.learning_rates = {0.001, -1.0};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.max_epochs = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Train, LearnsLinearMapOfHistoricScore) {
  // identical document vectors, target = 0.5 y_hist + 0.2
  const Tensor chunk(Shape{2, 4}, std::vector<double>{0.1, -0.2, 0.3, 0.05, 0.1, -0.2, 0.3, 0.05});
  std::vector<PipelineExample> train_set, val_set;
  for (int i = 0; i < 8; ++i) {
    const double h = i / 7.0;
    train_set.push_back(precomputed_doc("t" + std::to_string(i), chunk, h, 0.5 * h + 0.2));
  }
  for (double h : {0.1, 0.45, 0.8}) val_set.push_back(precomputed_doc("v", chunk, h, 0.5 * h + 0.2));
  Pipeline pipe(frozen_config(4, 32), 5);
  TrainConfig cfg;
  cfg.learning_rates = {0.001, 0.01};
  cfg.max_epochs = 200;
  cfg.patience = 0;
  cfg.batch_size = 8;
  cfg.dropout = false;
  const TrainResult r = train(pipe, train_set, val_set, cfg);
  EXPECT_LT(r.best_val_mse, 1e-6);
  EXPECT_LE(r.best_epoch, 200u);
}

TEST(Train, DivergentRateIsAbandoned) {
  Rng rng(12);
  std::vector<PipelineExample> train_set, val_set;
  for (int i = 0; i < 6; ++i) {
    Tensor v(Shape{2, 4});
    for (auto& x : v.data()) x = rng.normal();
    (i < 4 ? train_set : val_set).push_back(precomputed_doc("d" + std::to_string(i), v, rng.uniform(), rng.uniform()));
  }
  Pipeline pipe(frozen_config(4, 16), 6);
  TrainConfig cfg;
  cfg.learning_rates = {1e-3, 1e8};
  cfg.method = OptimizerMethod::kSgd;
  cfg.max_epochs = 20;
  const TrainResult r = train(pipe, train_set, val_set, cfg);
  EXPECT_EQ(r.divergences(), 1u);
  EXPECT_TRUE(r.rates[1].diverged);
  EXPECT_NE(r.rates[1].event.find("diverged"), std::string::npos);
  EXPECT_EQ(r.best_rate, 1e-3);
  for (const auto& row : r.log) EXPECT_TRUE(std::isfinite(row.val_mse));

  cfg.learning_rates = {1e8};
  EXPECT_THROW(train(pipe, train_set, val_set, cfg), std::runtime_error);
}

TEST(Train, DeterministicAndThreadIndependent) {
  const auto vocab = small_vocab(50);
  Rng rng(13);
  std::vector<PipelineExample> train_set, val_set;
  for (int i = 0; i < 6; ++i) train_set.push_back(chunked_doc("t" + std::to_string(i), 10, 4, vocab, rng));
  for (int i = 0; i < 2; ++i) val_set.push_back(chunked_doc("v" + std::to_string(i), 10, 4, vocab, rng));
  Pipeline pipe(tiny_config(50, 8, 16), 7);
  TrainConfig cfg;
  cfg.learning_rates = {0.0006, 0.001, 0.0013};
  cfg.max_epochs = 3;
  cfg.seed = 42;
  const TrainResult a = train(pipe, train_set, val_set, cfg);
  const TrainResult b = train(pipe, train_set, val_set, cfg);
  cfg.parallel = false;
  const TrainResult c = train(pipe, train_set, val_set, cfg);
  for (const TrainResult* other : {&b, &c}) {
    EXPECT_EQ(a.best_epoch, other->best_epoch);
    EXPECT_EQ(a.best_rate, other->best_rate);
    EXPECT_EQ(a.best_state, other->best_state);
    EXPECT_TRUE(same_log(a.log, other->log));
  }
  cfg.seed = 43;
  EXPECT_NE(train(pipe, train_set, val_set, cfg).best_state, a.best_state);
}

TEST(Train, BestValidationIsMinimumOfChosenRate) {
  Rng rng(14);
  std::vector<PipelineExample> train_set, val_set;
  for (int i = 0; i < 12; ++i) {
    Tensor v(Shape{3, 4});
    for (auto& x : v.data()) x = rng.normal();
    (i < 9 ? train_set : val_set).push_back(precomputed_doc("d" + std::to_string(i), v, rng.uniform(), rng.uniform()));
  }
  Pipeline pipe(frozen_config(4, 32), 8);
  TrainConfig cfg;
  cfg.max_epochs = 15;
  cfg.patience = 4;
  const TrainResult r = train(pipe, train_set, val_set, cfg);
  std::size_t rows = 0;
  for (const auto& row : r.log) {
    if (row.rate != r.best_rate) continue;
    ++rows;
    EXPECT_LE(r.best_val_mse, row.val_mse);
    if (row.epoch == r.best_epoch) EXPECT_EQ(row.val_mse, r.best_val_mse);
  }
  EXPECT_GT(rows, 0u);
  Pipeline restored = pipe;
  restored.load_state(r.best_state);
  double ss = 0;
  for (const auto& ex : val_set) ss += std::pow(restored.predict(ex) - ex.target, 2);
  EXPECT_EQ(ss / static_cast<double>(val_set.size()), r.best_val_mse);
}

TEST(Train, OverfitsEightDocuments) {
  const auto vocab = small_vocab(50);
  Rng rng(15);
  std::vector<PipelineExample> docs;
  for (int i = 0; i < 8; ++i) docs.push_back(chunked_doc("d" + std::to_string(i), 12, 6, vocab, rng));
  Pipeline pipe(tiny_config(50, 16, 64), 9);
  TrainConfig cfg;
  cfg.learning_rates = {1e-3};
  cfg.batch_size = 8;  // one optimizer step per epoch
  cfg.max_epochs = 2000;
  cfg.patience = 0;
  cfg.dropout = false;
  const TrainResult r = train(pipe, docs, docs, cfg);
  EXPECT_LT(r.best_val_mse, 1e-3) << "after " << r.log.size() << " steps";
}

TEST(Predictions, CsvRoundTripKeepsFullPrecision) {
  const std::vector<double> train_targets{2.0, 4.0};
  const Scaler s = Scaler::fit(train_targets, true);
  std::vector<Prediction> preds;
  for (double y : {0.1, 1.0 / 3.0, 1.7}) preds.push_back({"doc,", y, s.invert(y), y / 2, s.invert(y / 2)});
  preds[0].doc_id = "a";
  preds[1].doc_id = "b";
  preds[2].doc_id = "c";
  const auto path = std::filesystem::temp_directory_path() / "fetilda_predictions.csv";
  write_predictions(path, preds);
  const auto back = load_predictions(path);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].y_hat, preds[i].y_hat);
    EXPECT_EQ(back[i].y_true_raw, preds[i].y_true_raw);
    EXPECT_NEAR(back[i].y_hat_raw, s.invert(back[i].y_hat), 1e-12);
  }
}

TEST(RegressorHead, Fc2MatchesPipelinePrediction) {
  Rng rng(16);
  std::vector<PipelineExample> docs;
  for (int i = 0; i < 5; ++i) {
    Tensor v(Shape{2, 4});
    for (auto& x : v.data()) x = rng.normal();
    docs.push_back(precomputed_doc("d" + std::to_string(i), v, rng.normal(), rng.normal()));
  }
  Pipeline pipe(frozen_config(4, 16), 10);
  const FeatureSet f = extract_features(pipe, docs);
  const auto fc2 = predict_with_regressor(HeadMethod::kFc2, pipe, f, f);
  for (std::size_t i = 0; i < docs.size(); ++i) EXPECT_EQ(fc2[i], pipe.predict(docs[i]));
}

TEST(RegressorHead, ConstantDocumentsReduceToHistoricRegression) {
  Rng rng(17);
  const Tensor chunk(Shape{1, 4}, std::vector<double>{0.5, -0.5, 0.25, 1.0});
  std::vector<PipelineExample> docs;
  for (int i = 0; i < 20; ++i) {
    const double h = rng.normal();
    docs.push_back(precomputed_doc("d" + std::to_string(i), chunk, h, 2 * h - 1 + 0.1 * rng.normal()));
  }
  Pipeline pipe(frozen_config(4, 16), 11);
  const FeatureSet f = extract_features(pipe, docs);
  const auto full = predict_with_regressor(HeadMethod::kLinear, pipe, f, f);
  const LinearModel bivariate = LinearModel::fit(historic_features(f.y_hist), f.target, 1e-10);
  const auto expected = bivariate.predict(historic_features(f.y_hist));
  for (std::size_t i = 0; i < docs.size(); ++i) EXPECT_NEAR(full[i], expected[i], 1e-8);
}

TEST(RegressorHead, SelectionPicksKernelRidgeOnNonlinearTarget) {
  Rng rng(18);
  const Tensor chunk(Shape{1, 4}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  std::vector<PipelineExample> train_set, val_set;
  for (int i = 0; i < 80; ++i) {
    const double h = rng.uniform(-2.0, 2.0);
    (i < 60 ? train_set : val_set).push_back(precomputed_doc("d" + std::to_string(i), chunk, h, std::sin(3 * h)));
  }
  Pipeline pipe(frozen_config(4, 16), 12);
  const FeatureSet tr = extract_features(pipe, train_set), va = extract_features(pipe, val_set);
  RegressorSpec base;
  base.kr_alpha = 1e-3;
  base.kr_gamma = 5.0;
  const HeadMethod methods[] = {HeadMethod::kFc2, HeadMethod::kLinear, HeadMethod::kSvr, HeadMethod::kKernelRidge};
  const MethodSelection s = select_head_method(pipe, tr, va, methods, base);
  EXPECT_EQ(s.best, HeadMethod::kKernelRidge);
  ASSERT_EQ(s.val_mse.size(), 4u);
  const auto argmin = std::min_element(s.val_mse.begin(), s.val_mse.end()) - s.val_mse.begin();
  EXPECT_EQ(s.methods[static_cast<std::size_t>(argmin)], s.best);
  EXPECT_LT(s.val_mse[3], 1e-3);
}

TEST(RegressorHead, MethodNames) {
  for (auto m : {HeadMethod::kFc2, HeadMethod::kLinear, HeadMethod::kSvr, HeadMethod::kKernelRidge}) {
    EXPECT_EQ(parse_head_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_head_method("lasso"), std::invalid_argument);
}
