#include "fetilda/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "fetilda/chunker.hpp"
#include "fetilda/numcore/checkpoint.hpp"

namespace fetilda {

std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::kFetilda: return "fetilda";
    case ModelKind::kTfidf: return "tfidf";
    case ModelKind::kLog1p: return "log1p";
    case ModelKind::kHistLinear: return "hist_linear";
  }
  return "?";
}

ModelKind parse_model(const std::string& s) {
  for (ModelKind m : {ModelKind::kFetilda, ModelKind::kTfidf, ModelKind::kLog1p, ModelKind::kHistLinear}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown model '" + s + "' (expected fetilda, tfidf, log1p or hist_linear)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " expects true or false, got '" + v + "'");
}

std::pair<int, int> to_year_range(const std::string& key, const std::string& v) {
  const auto dash = v.find('-');
  if (dash == std::string::npos) throw std::invalid_argument("config: " + key + " expects FIRST-LAST, got '" + v + "'");
  const auto a = static_cast<int>(to_uint(key, v.substr(0, dash)));
  const auto b = static_cast<int>(to_uint(key, v.substr(dash + 1)));
  if (b < a) throw std::invalid_argument("config: " + key + " range is reversed");
  return {a, b};
}

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string num(std::uint64_t v) { return std::to_string(v); }

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FETILDA_SIZE_FIELD(name, member)                                                     \
  Field {                                                                                    \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = to_uint(name, v); },    \
        [](const ExperimentConfig& c) { return num(static_cast<std::uint64_t>(c.member)); } \
  }
#define FETILDA_REAL_FIELD(name, member)                                                  \
  Field {                                                                                 \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = to_double(name, v); }, \
        [](const ExperimentConfig& c) { return num(c.member); }                           \
  }
#define FETILDA_BOOL_FIELD(name, member)                                                  \
  Field {                                                                                 \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = to_bool(name, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); } \
  }
#define FETILDA_PATH_FIELD(name, member)                                       \
  Field {                                                                      \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = v; },     \
        [](const ExperimentConfig& c) { return c.member.string(); }            \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        FETILDA_PATH_FIELD("docs", docs),
        FETILDA_PATH_FIELD("targets", targets),
        FETILDA_PATH_FIELD("vocab", vocab),
        FETILDA_PATH_FIELD("embeddings", embeddings),
        FETILDA_PATH_FIELD("output_dir", output_dir),
        Field{"metric", [](ExperimentConfig& c, const std::string& v) { c.metric = parse_metric(v); },
              [](const ExperimentConfig& c) { return to_string(c.metric); }},
        Field{"section",
              [](ExperimentConfig& c, const std::string& v) {
                c.section = v == "all" ? std::nullopt : std::optional<Section>(parse_section(v));
              },
              [](const ExperimentConfig& c) { return c.section ? to_string(*c.section) : std::string("all"); }},
        Field{"model", [](ExperimentConfig& c, const std::string& v) { c.model = parse_model(v); },
              [](const ExperimentConfig& c) { return to_string(c.model); }},
        FETILDA_SIZE_FIELD("seed", seed),
        FETILDA_BOOL_FIELD("scaling", scaling),
        Field{"split",
              [](ExperimentConfig& c, const std::string& v) {
                if (v != "fraction" && v != "years") {
                  throw std::invalid_argument("config: split expects fraction or years, got '" + v + "'");
                }
                c.year_splits = v == "years";
              },
              [](const ExperimentConfig& c) { return std::string(c.year_splits ? "years" : "fraction"); }},
        FETILDA_REAL_FIELD("train_fraction", split.train_fraction),
        FETILDA_REAL_FIELD("val_fraction", split.val_fraction_of_rest),
        FETILDA_BOOL_FIELD("year_aligned", split.year_aligned),
        Field{"train_years",
              [](ExperimentConfig& c, const std::string& v) {
                std::tie(c.years.train_first, c.years.train_last) = to_year_range("train_years", v);
              },
              [](const ExperimentConfig& c) {
                return std::to_string(c.years.train_first) + "-" + std::to_string(c.years.train_last);
              }},
        Field{"test_years",
              [](ExperimentConfig& c, const std::string& v) {
                std::tie(c.years.test_first, c.years.test_last) = to_year_range("test_years", v);
              },
              [](const ExperimentConfig& c) {
                return std::to_string(c.years.test_first) + "-" + std::to_string(c.years.test_last);
              }},
        FETILDA_REAL_FIELD("year_train_fraction", years.train_fraction),
        FETILDA_SIZE_FIELD("chunk_length", chunk_length),
        FETILDA_SIZE_FIELD("max_doc_tokens", max_doc_tokens),
        FETILDA_SIZE_FIELD("model_dim", encoder.model_dim),
        FETILDA_SIZE_FIELD("layers", encoder.num_layers),
        FETILDA_SIZE_FIELD("heads", encoder.num_heads),
        FETILDA_SIZE_FIELD("ff_dim", encoder.ff_dim),
        FETILDA_REAL_FIELD("init_std", encoder.init_std),
        Field{"pooling", [](ExperimentConfig& c, const std::string& v) { c.encoder.pooling = parse_pooling(v); },
              [](const ExperimentConfig& c) { return to_string(c.encoder.pooling); }},
        Field{"freeze", [](ExperimentConfig& c, const std::string& v) { c.encoder.freeze = parse_freeze(v); },
              [](const ExperimentConfig& c) { return to_string(c.encoder.freeze); }},
        FETILDA_SIZE_FIELD("lstm_hidden", lstm_hidden),
        FETILDA_BOOL_FIELD("normalize_by_chunks", normalize_by_chunks),
        FETILDA_SIZE_FIELD("head_hidden", head.hidden_dim),
        FETILDA_REAL_FIELD("dropout", head.dropout),
        FETILDA_REAL_FIELD("leaky_slope", head.leaky_slope),
        Field{"learning_rates",
              [](ExperimentConfig& c, const std::string& v) {
                c.train.learning_rates.clear();
                for (const auto& r : split_list(v)) c.train.learning_rates.push_back(to_double("learning_rates", r));
              },
              [](const ExperimentConfig& c) {
                std::string s;
                for (double r : c.train.learning_rates) s += (s.empty() ? "" : ",") + num(r);
                return s;
              }},
        FETILDA_SIZE_FIELD("max_epochs", train.max_epochs),
        FETILDA_SIZE_FIELD("patience", train.patience),
        FETILDA_SIZE_FIELD("batch_size", train.batch_size),
        FETILDA_BOOL_FIELD("parallel_rates", train.parallel),
        Field{"optimizer",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "adam") c.train.method = OptimizerMethod::kAdam;
                else if (v == "sgd") c.train.method = OptimizerMethod::kSgd;
                else throw std::invalid_argument("config: optimizer expects adam or sgd, got '" + v + "'");
              },
              [](const ExperimentConfig& c) {
                return std::string(c.train.method == OptimizerMethod::kAdam ? "adam" : "sgd");
              }},
        Field{"methods",
              [](ExperimentConfig& c, const std::string& v) {
                c.methods.clear();
                for (const auto& m : split_list(v)) c.methods.push_back(parse_head_method(m));
              },
              [](const ExperimentConfig& c) {
                std::string s;
                for (HeadMethod m : c.methods) s += (s.empty() ? "" : ",") + to_string(m);
                return s;
              }},
        FETILDA_REAL_FIELD("ridge", regressor.ridge),
        FETILDA_REAL_FIELD("svr_c", regressor.svr_c),
        FETILDA_REAL_FIELD("svr_epsilon", regressor.svr_epsilon),
        FETILDA_REAL_FIELD("svr_gamma", regressor.svr_gamma),
        FETILDA_REAL_FIELD("svr_tolerance", regressor.svr_tolerance),
        FETILDA_SIZE_FIELD("svr_max_iterations", regressor.svr_max_iterations),
        FETILDA_REAL_FIELD("kr_alpha", regressor.kr_alpha),
        FETILDA_REAL_FIELD("kr_gamma", regressor.kr_gamma),
    };
    std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) { return std::string(a.key) < b.key; });
    return f;
  }();
  return table;
}

#undef FETILDA_SIZE_FIELD
#undef FETILDA_REAL_FIELD
#undef FETILDA_BOOL_FIELD
#undef FETILDA_PATH_FIELD

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::istringstream is(text);
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(n) + ": expected key=value, got '" + line + "'");
    }
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(n) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::validate() const {
  auto need = [](const std::filesystem::path& p, const char* key) {
    if (p.empty()) throw std::invalid_argument(std::string("config: ") + key + " is required");
    if (!std::filesystem::exists(p)) throw std::invalid_argument(std::string("config: ") + key + " " + p.string() + " does not exist");
  };
  need(docs, "docs");
  need(targets, "targets");
  if (model == ModelKind::kFetilda) {
    if (embeddings.empty()) need(vocab, "vocab");
    else need(embeddings, "embeddings");
    if (chunk_length == 0) throw std::invalid_argument("config: chunk_length must be positive");
    if (methods.empty()) throw std::invalid_argument("config: methods is empty");
    if (lstm_hidden == 0) throw std::invalid_argument("config: lstm_hidden must be positive");
    HeadConfig h = head;
    h.input_dim = encoder.model_dim;
    h.validate();
    train.validate();
  }
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Field& f : fields()) {
    if (std::string(f.key) == "output_dir") continue;
    for (char ch : std::string(f.key) + "=" + f.get(*this) + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace {

template <typename F>
std::vector<double> gather(const std::vector<Example>& ex, std::span<const std::size_t> idx, F f) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(f(ex[i]));
  return out;
}

Tensor select_rows(const Tensor& x, std::size_t offset, std::size_t count) {
  Tensor out(Shape{count, x.cols()});
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(offset * x.cols()), count * x.cols(), out.data().begin());
  return out;
}

struct Fitted {
  std::vector<double> val_pred;
  std::vector<double> test_pred;
  std::vector<NamedTensor> checkpoint;
  std::string method;
};

/// Shared tail of the feature baselines: rows are train, then val, then test.
Fitted fit_features(const Tensor& x, std::size_t n_train, std::size_t n_val, std::span<const double> y_train,
                    std::span<const double> y_val, std::span<const RegressorKind> kinds, const RegressorSpec& base) {
  const Tensor xt = select_rows(x, 0, n_train);
  const Tensor xv = select_rows(x, n_train, n_val);
  const Tensor xs = select_rows(x, n_train + n_val, x.rows() - n_train - n_val);
  std::vector<Regressor> fitted;
  for (RegressorKind k : kinds) {
    RegressorSpec spec = base;
    spec.kind = k;
    fitted.push_back(Regressor::fit(spec, xt, y_train));
  }
  const Selection sel = select_regressor(fitted, xv, y_val);
  const Regressor& best = fitted[sel.best];
  return {best.predict(xv), best.predict(xs), best.to_tensors(), to_string(best.kind())};
}

Fitted run_fetilda(const ExperimentConfig& cfg, const std::vector<Example>& ex, std::span<const std::size_t> tr,
                   std::span<const std::size_t> va, std::span<const std::size_t> te, const Scaler& scaler,
                   const std::filesystem::path& run_dir) {
  PipelineConfig pc;
  pc.encoder = cfg.encoder;
  pc.docpool.input_dim = cfg.encoder.model_dim;
  pc.docpool.hidden_dim = cfg.lstm_hidden;
  pc.docpool.normalize_by_chunks = cfg.normalize_by_chunks;
  pc.head = cfg.head;
  pc.head.input_dim = cfg.encoder.model_dim;

  std::vector<PipelineExample> items(ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    items[i].doc_id = ex[i].doc_id;
    items[i].y_hist = scaler.apply(ex[i].hist);
    items[i].target = scaler.apply(ex[i].target);
  }

  std::optional<Pipeline> pipe;
  if (!cfg.embeddings.empty()) {
    pc.encoder.vocab_size = 0;
    const EmbeddingStore store = EmbeddingStore::load(cfg.embeddings, cfg.encoder.model_dim);
    std::map<std::string, std::size_t> counts;
    for (const auto& r : store.records()) ++counts[r.doc_id];
    for (auto& it : items) {
      auto c = counts.find(it.doc_id);
      if (c == counts.end()) throw std::invalid_argument("no chunk embeddings for " + it.doc_id);
      it.chunk_vectors = store.document(it.doc_id, c->second);
    }
    pipe.emplace(pc, cfg.seed);
  } else {
    const Vocabulary vocab = Vocabulary::load(cfg.vocab);
    pc.encoder.vocab_size = vocab.size();
    pc.encoder.max_positions = cfg.chunk_length + 2;
    pipe.emplace(pc, cfg.seed);
    for (std::size_t i = 0; i < ex.size(); ++i) {
      items[i].chunks = make_chunks(tokenize(ex[i].text, vocab, ex[i].doc_id), cfg.chunk_length,
                                    cfg.max_doc_tokens, vocab);
    }
    if (cfg.encoder.freeze == FreezeMode::kAll) {
      // A frozen encoder gives the same vectors every epoch; compute them once.
      std::vector<Chunk> all;
      for (const auto& it : items) all.insert(all.end(), it.chunks.begin(), it.chunks.end());
      EmbeddingStore store(cfg.encoder.model_dim);
      for (auto& e : embed_chunks(pipe->encoder(), all)) store.insert(std::move(e));
      save_embeddings(run_dir / "chunk_embeddings.bin", store.records());
      for (auto& it : items) {
        it.chunk_vectors = store.document(it.doc_id, it.chunks.size());
        it.chunks.clear();
      }
    }
  }

  auto pick = [&](std::span<const std::size_t> idx) {
    std::vector<PipelineExample> out;
    for (auto i : idx) out.push_back(items[i]);
    return out;
  };
  const auto train_set = pick(tr), val_set = pick(va), test_set = pick(te);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const TrainResult result = train(*pipe, train_set, val_set, tc);
  pipe->load_state(result.best_state);
  write_training_log(run_dir / "train_log.csv", result.log);
  {
    std::ofstream os(run_dir / "train_summary.txt");
    os << std::setprecision(17) << "best_rate=" << result.best_rate << "\nbest_epoch=" << result.best_epoch
       << "\nbest_val_mse=" << result.best_val_mse << "\ndivergences=" << result.divergences() << '\n';
    for (const auto& r : result.rates) {
      if (r.diverged) os << "event=" << r.event << '\n';
    }
  }

  Fitted out;
  out.checkpoint = result.best_state;
  if (cfg.methods.size() == 1 && cfg.methods[0] == HeadMethod::kFc2) {
    for (const auto& e : val_set) out.val_pred.push_back(pipe->predict(e));
    for (const auto& e : test_set) out.test_pred.push_back(pipe->predict(e));
    out.method = "fc2";
    return out;
  }
  const FeatureSet ftr = extract_features(*pipe, train_set);
  const FeatureSet fva = extract_features(*pipe, val_set);
  const FeatureSet fte = extract_features(*pipe, test_set);
  const MethodSelection sel = select_head_method(*pipe, ftr, fva, cfg.methods, cfg.regressor);
  out.val_pred = predict_with_regressor(sel.best, *pipe, ftr, fva, cfg.regressor);
  out.test_pred = predict_with_regressor(sel.best, *pipe, ftr, fte, cfg.regressor);
  out.method = to_string(sel.best);
  return out;
}

ExperimentOutputs run_impl(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  const Corpus corpus = load_corpus(cfg.docs, cfg.targets);
  ExampleSet set = join_examples(corpus, cfg.metric, cfg.section);
  if (set.examples.empty()) throw std::invalid_argument("no documents have a " + to_string(cfg.metric) + " target");
  auto& ex = set.examples;
  const Splits splits = cfg.year_splits ? make_year_splits(ex, cfg.years) : make_splits(ex, cfg.split);
  std::vector<std::size_t> test_idx;
  for (const auto& t : splits.tests) test_idx.insert(test_idx.end(), t.indices.begin(), t.indices.end());

  const auto raw_target = [](const Example& e) { return e.target; };
  const Scaler scaler = Scaler::fit(gather(ex, splits.train, raw_target), cfg.scaling);
  const auto scaled_target = [&](const Example& e) { return scaler.apply(e.target); };
  const auto scaled_hist = [&](const Example& e) { return scaler.apply(e.hist); };

  ExperimentOutputs out;
  out.examples = ex.size();
  out.excluded = set.excluded.size();
  out.run_dir = cfg.output_dir / (cfg.hash() + "-s" + std::to_string(cfg.seed));
  std::filesystem::create_directories(out.run_dir);
  {
    std::ofstream os(out.run_dir / "config.txt");
    os << cfg.to_text();
  }
  write_split_manifest(out.run_dir / "splits.csv", ex, splits);

  std::vector<std::size_t> ordered = splits.train;
  ordered.insert(ordered.end(), splits.val.begin(), splits.val.end());
  ordered.insert(ordered.end(), test_idx.begin(), test_idx.end());
  const auto y_train = gather(ex, splits.train, scaled_target);
  const auto y_val = gather(ex, splits.val, scaled_target);

  Fitted fit;
  switch (cfg.model) {
    case ModelKind::kHistLinear: {
      const RegressorKind kinds[] = {RegressorKind::kLinear};
      fit = fit_features(historic_features(gather(ex, ordered, scaled_hist)), splits.train.size(), splits.val.size(),
                         y_train, y_val, kinds, cfg.regressor);
      break;
    }
    case ModelKind::kTfidf: {
      std::vector<TermList> terms;
      for (auto i : ordered) terms.push_back(extract_terms(ex[i].text));
      const auto model = TfidfModel::fit(std::span(terms).first(splits.train.size()));
      const RegressorKind kinds[] = {RegressorKind::kLinear, RegressorKind::kSvr, RegressorKind::kKernelRidge};
      fit = fit_features(model.transform(terms, gather(ex, ordered, scaled_hist)), splits.train.size(),
                         splits.val.size(), y_train, y_val, kinds, cfg.regressor);
      break;
    }
    case ModelKind::kLog1p: {
      std::vector<TermList> terms;
      for (auto i : ordered) terms.push_back(extract_terms(ex[i].text));
      const auto model = Log1pModel::fit(std::span(terms).first(splits.train.size()));
      // the historic value enters as a log, so it stays in raw units
      const RegressorKind kinds[] = {RegressorKind::kSvr};
      fit = fit_features(model.transform(terms, gather(ex, ordered, [](const Example& e) { return e.hist; })),
                         splits.train.size(), splits.val.size(), y_train, y_val, kinds, cfg.regressor);
      break;
    }
    case ModelKind::kFetilda:
      fit = run_fetilda(cfg, ex, splits.train, splits.val, test_idx, scaler, out.run_dir);
      break;
  }

  std::vector<Prediction> preds;
  std::vector<double> y_test, y_test_raw, pred_raw;
  for (std::size_t k = 0; k < test_idx.size(); ++k) {
    const Example& e = ex[test_idx[k]];
    preds.push_back({e.doc_id, fit.test_pred[k], scaler.invert(fit.test_pred[k]), scaler.apply(e.target), e.target});
    y_test.push_back(preds.back().y_true);
    y_test_raw.push_back(e.target);
    pred_raw.push_back(preds.back().y_hat_raw);
  }
  out.predictions = out.run_dir / "predictions.csv";
  write_predictions(out.predictions, preds);
  out.checkpoint = out.run_dir / "checkpoint.bin";
  save_checkpoint(out.checkpoint, fit.checkpoint);
  out.selected_method = fit.method;

  ResultRow& row = out.row;
  row.model = to_string(cfg.model);
  row.metric = cfg.metric;
  row.test_mse = mean_squared_error(fit.test_pred, y_test);
  row.val_mse = mean_squared_error(fit.val_pred, y_val);
  row.test_mse_raw = mean_squared_error(pred_raw, y_test_raw);
  row.seed = cfg.seed;
  row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const ResultRow rows[] = {row};
  write_result_rows(out.run_dir / "result.csv", rows);
  return out;
}

}  // namespace

ExperimentOutputs run_experiment(const ExperimentConfig& config) {
  try {
    return run_impl(config);
  } catch (const ExperimentError&) {
    throw;
  } catch (const std::exception& e) {
    throw ExperimentError(e.what(), config.to_text());
  }
}

double improvement(double mse_baseline, double mse_model) {
  if (!(mse_baseline > 0.0)) throw std::invalid_argument("improvement: baseline MSE must be positive");
  return (mse_baseline - mse_model) / mse_baseline;
}

double mse_from_predictions(const std::filesystem::path& path, bool raw) {
  const auto preds = load_predictions(path);
  std::vector<double> p, y;
  for (const auto& r : preds) {
    p.push_back(raw ? r.y_hat_raw : r.y_hat);
    y.push_back(raw ? r.y_true_raw : r.y_true);
  }
  return mean_squared_error(p, y);
}

void write_result_rows(const std::filesystem::path& path, std::span<const ResultRow> rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "model,metric,test_mse,val_mse,test_mse_raw,runtime_s,seed\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.model << ',' << to_string(r.metric) << ',' << r.test_mse << ',' << r.val_mse << ',' << r.test_mse_raw
       << ',' << r.runtime_s << ',' << r.seed << '\n';
  }
}

std::vector<ResultRow> load_result_rows(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "model,metric,test_mse,val_mse,test_mse_raw,runtime_s,seed") {
    throw std::runtime_error(path.string() + ":1: unexpected results header");
  }
  std::vector<ResultRow> out;
  for (std::size_t n = 2; std::getline(is, line); ++n) {
    if (trim(line).empty()) continue;
    const auto f = split_list(line);
    if (f.size() != 7) throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": expected 7 fields");
    try {
      ResultRow r;
      r.model = f[0];
      r.metric = parse_metric(f[1]);
      r.test_mse = to_double("test_mse", f[2]);
      r.val_mse = to_double("val_mse", f[3]);
      r.test_mse_raw = to_double("test_mse_raw", f[4]);
      r.runtime_s = to_double("runtime_s", f[5]);
      r.seed = to_uint("seed", f[6]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

ResultTable ResultTable::build(std::span<const ResultRow> rows) {
  if (rows.empty()) throw std::invalid_argument("result table needs at least one row");
  ResultTable t;
  for (const auto& r : rows) {
    if (std::find(t.models.begin(), t.models.end(), r.model) == t.models.end()) t.models.push_back(r.model);
    if (std::find(t.metrics.begin(), t.metrics.end(), r.metric) == t.metrics.end()) t.metrics.push_back(r.metric);
  }
  t.test_mse.assign(t.models.size(), std::vector<std::optional<double>>(t.metrics.size()));
  t.best.assign(t.models.size(), std::vector<bool>(t.metrics.size(), false));
  for (const auto& r : rows) {
    const auto i = static_cast<std::size_t>(std::find(t.models.begin(), t.models.end(), r.model) - t.models.begin());
    const auto j = static_cast<std::size_t>(std::find(t.metrics.begin(), t.metrics.end(), r.metric) - t.metrics.begin());
    t.test_mse[i][j] = r.test_mse;  // a repeated cell keeps the later row
  }
  for (std::size_t j = 0; j < t.metrics.size(); ++j) {
    std::optional<double> lo;
    for (std::size_t i = 0; i < t.models.size(); ++i) {
      if (t.test_mse[i][j] && (!lo || *t.test_mse[i][j] < *lo)) lo = t.test_mse[i][j];
    }
    for (std::size_t i = 0; i < t.models.size(); ++i) t.best[i][j] = lo && t.test_mse[i][j] == lo;
  }
  return t;
}

std::string ResultTable::markdown() const {
  std::ostringstream os;
  os << "| model |";
  for (Metric m : metrics) os << ' ' << to_string(m) << " |";
  os << "\n|---|";
  for (std::size_t j = 0; j < metrics.size(); ++j) os << "---:|";
  os << '\n' << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < models.size(); ++i) {
    os << "| " << models[i] << " |";
    for (std::size_t j = 0; j < metrics.size(); ++j) {
      if (!test_mse[i][j]) {
        os << " - |";
      } else if (best[i][j]) {
        os << " **" << *test_mse[i][j] << "** |";
      } else {
        os << ' ' << *test_mse[i][j] << " |";
      }
    }
    os << '\n';
  }
  return os.str();
}

std::string ResultTable::csv() const {
  std::ostringstream os;
  os << "model,metric,test_mse,best\n" << std::setprecision(17);
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = 0; j < metrics.size(); ++j) {
      if (!test_mse[i][j]) continue;
      os << models[i] << ',' << to_string(metrics[j]) << ',' << *test_mse[i][j] << ',' << (best[i][j] ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

void emit_table(std::span<const ResultRow> rows, const std::filesystem::path& stem) {
  const ResultTable t = ResultTable::build(rows);
  std::filesystem::path md = stem, csv = stem;
  md += ".md";
  csv += ".csv";
  std::ofstream(md) << t.markdown();
  std::ofstream(csv) << t.csv();
}

PlantedCorpus make_planted_corpus(const PlantedSpec& spec) {
  if (spec.documents == 0 || spec.tokens_per_document == 0 || spec.filler_words == 0 || spec.documents_per_year == 0) {
    throw std::invalid_argument("planted corpus: sizes must be positive");
  }
  PlantedCorpus out;
  out.marker = "marker";
  out.vocab = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", out.marker};
  std::vector<std::string> fillers;
  for (std::size_t i = 0; i < spec.filler_words; ++i) {
    char w[16];
    std::snprintf(w, sizeof w, "filler%03zu", i);
    fillers.push_back(w);
    out.vocab.push_back(w);
  }
  Rng rng(spec.seed);
  const auto t = spec.tokens_per_document;
  const auto max_markers = static_cast<std::uint64_t>(spec.max_marker_fraction * static_cast<double>(t));
  for (std::size_t d = 0; d < spec.documents; ++d) {
    const auto k = static_cast<std::size_t>(rng.below(max_markers + 1));
    std::vector<std::string> words(k, out.marker);
    while (words.size() < t) words.push_back(fillers[rng.below(fillers.size())]);
    rng.shuffle(words);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    char id[32];
    std::snprintf(id, sizeof id, "doc%05zu", d);
    const std::string entity = "entity" + std::to_string(d);
    const int year = spec.first_year + static_cast<int>(d / spec.documents_per_year);
    const double hist = rng.uniform();
    const double freq = static_cast<double>(k) / static_cast<double>(t);
    const double y = 0.8 * freq + 0.2 * hist + spec.noise * rng.normal();
    out.corpus.documents.push_back({id, entity, year, Section::kItem7_7A, text});
    out.corpus.targets.push_back({entity, year, Metric::kRoa, y, hist});
  }
  return out;
}

void write_planted_corpus(const PlantedCorpus& planted, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_documents(dir / "docs.jsonl", planted.corpus.documents);
  write_targets(dir / "targets.csv", planted.corpus.targets);
  std::ofstream os(dir / "vocab.txt");
  for (const auto& v : planted.vocab) os << v << '\n';
}

}  // namespace fetilda
