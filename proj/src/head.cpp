#include "fetilda/head.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fetilda {

namespace {

Parameter uniform_param(std::string name, Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return Parameter(std::move(name), std::move(t));
}

bool finite_params(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (!p->value.all_finite()) return false;
  }
  return true;
}

std::string format_rate(double rate) {
  std::ostringstream os;
  os << rate;
  return os.str();
}

}  // namespace

void HeadConfig::validate() const {
  if (input_dim == 0 || hidden_dim == 0) throw std::invalid_argument("head: zero dimension");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("head: dropout must lie in [0, 1)");
}

Head::Head(HeadConfig config, Rng& rng) : config_(config) {
  config_.validate();
  // PyTorch-style fan-in bounds for both layers
  const double b1 = 1.0 / std::sqrt(static_cast<double>(config_.input_dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(config_.hidden_dim + 1));
  fc1_w_ = uniform_param("head.fc1.weight", {config_.input_dim, config_.hidden_dim}, b1, rng);
  fc1_b_ = uniform_param("head.fc1.bias", {1, config_.hidden_dim}, b1, rng);
  fc2_w_ = uniform_param("head.fc2.weight", {config_.hidden_dim + 1, 1}, b2, rng);
  fc2_b_ = uniform_param("head.fc2.bias", {1, 1}, b2, rng);
}

Var Head::forward(Tape& tape, Var doc_vectors, Var y_hist, bool train, Rng& rng) {
  if (doc_vectors.cols() != config_.input_dim) {
    throw ShapeError("head: document vectors " + shape_str(doc_vectors.shape()) + " but input_dim " +
                     std::to_string(config_.input_dim));
  }
  if (y_hist.rows() != doc_vectors.rows() || y_hist.cols() != 1) {
    throw ShapeError("head: y_hist " + shape_str(y_hist.shape()) + " for " + std::to_string(doc_vectors.rows()) +
                     " documents");
  }
  Var h = ops::add(ops::matmul(doc_vectors, tape.param(fc1_w_)), tape.param(fc1_b_));
  h = ops::dropout(ops::leaky_relu(h, config_.leaky_slope), config_.dropout, train, rng);
  const Var parts[] = {h, y_hist};
  return ops::add(ops::matmul(ops::concat(parts, 1), tape.param(fc2_w_)), tape.param(fc2_b_));
}

double Head::predict(std::span<const double> doc_vector, double y_hist) {
  Tape tape(false);
  Rng unused;
  Var x = tape.constant(Tensor(Shape{1, doc_vector.size()}, std::vector<double>(doc_vector.begin(), doc_vector.end())));
  return forward(tape, x, tape.constant(Tensor::scalar(y_hist)), false, unused).value().item();
}

std::vector<Parameter*> Head::parameters() { return {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_}; }

namespace {

EncoderConfig checked_encoder(const PipelineConfig& c) {
  if (c.encoder.vocab_size != 0 && c.encoder.model_dim != c.docpool.input_dim) {
    throw std::invalid_argument("pipeline: encoder model_dim " + std::to_string(c.encoder.model_dim) +
                                " differs from docpool input_dim " + std::to_string(c.docpool.input_dim));
  }
  if (c.docpool.input_dim != c.head.input_dim) {
    throw std::invalid_argument("pipeline: docpool input_dim " + std::to_string(c.docpool.input_dim) +
                                " differs from head input_dim " + std::to_string(c.head.input_dim));
  }
  return c.encoder;
}

Rng stream(std::uint64_t seed, std::uint64_t id) { return Rng(seed).split(id); }

}  // namespace

Pipeline::Pipeline(PipelineConfig config, std::uint64_t seed)
    : config_(config),
      docpool_([&] {
        Rng r = stream(seed, 2);
        return DocPool(config.docpool, r);
      }()),
      head_([&] {
        Rng r = stream(seed, 3);
        return Head(config.head, r);
      }()) {
  const EncoderConfig enc = checked_encoder(config_);
  if (enc.vocab_size != 0) {
    Rng r = stream(seed, 1);
    encoder_.emplace(enc, r);
  }
}

Var Pipeline::document_vector(Tape& tape, const PipelineExample& example) {
  Var chunks;
  if (example.precomputed()) {
    chunks = tape.constant(example.chunk_vectors);
  } else {
    if (!encoder_) throw std::invalid_argument("pipeline: " + example.doc_id + " has no precomputed chunk vectors");
    if (example.chunks.empty()) throw std::invalid_argument("pipeline: " + example.doc_id + " has no chunks");
    std::vector<Var> rows;
    rows.reserve(example.chunks.size());
    for (const Chunk& c : example.chunks) rows.push_back(encoder_->embed_chunk(tape, c));
    chunks = ops::concat(rows, 0);
  }
  return docpool_.pool_document(tape, chunks).document;
}

Var Pipeline::forward(Tape& tape, std::span<const PipelineExample* const> batch, bool train, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("pipeline: empty batch");
  std::vector<Var> docs;
  Tensor hist(Shape{batch.size(), 1});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    docs.push_back(document_vector(tape, *batch[i]));
    hist[i] = batch[i]->y_hist;
  }
  return head_.forward(tape, ops::concat(docs, 0), tape.constant(std::move(hist)), train, rng);
}

double Pipeline::predict(const PipelineExample& example) {
  Tape tape(false);
  Rng unused;
  const PipelineExample* one[] = {&example};
  return forward(tape, one, false, unused).value().item();
}

std::vector<double> Pipeline::document_vector(const PipelineExample& example) {
  Tape tape(false);
  return document_vector(tape, example).value().values();
}

std::vector<Parameter*> Pipeline::parameters() {
  std::vector<Parameter*> out;
  if (encoder_) out = encoder_->parameters();
  for (Parameter* p : docpool_.parameters()) out.push_back(p);
  for (Parameter* p : head_.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> Pipeline::trainable_parameters(bool precomputed_inputs) {
  std::vector<Parameter*> out;
  if (encoder_ && !precomputed_inputs) {
    for (Parameter* p : encoder_->parameters()) {
      if (p->trainable) out.push_back(p);
    }
  }
  for (Parameter* p : docpool_.parameters()) out.push_back(p);
  for (Parameter* p : head_.parameters()) out.push_back(p);
  return out;
}

std::vector<NamedTensor> Pipeline::state() {
  std::vector<NamedTensor> out;
  for (Parameter* p : parameters()) out.push_back({p->name, p->value});
  return out;
}

void Pipeline::load_state(const std::vector<NamedTensor>& tensors) {
  auto params = parameters();
  if (tensors.size() != params.size()) {
    throw std::invalid_argument("pipeline state has " + std::to_string(tensors.size()) + " tensors, expected " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].name != params[i]->name || tensors[i].tensor.shape() != params[i]->value.shape()) {
      throw std::invalid_argument("pipeline state mismatch at '" + tensors[i].name + "' (expected '" +
                                  params[i]->name + "' " + shape_str(params[i]->value.shape()) + ")");
    }
    params[i]->value = tensors[i].tensor;
  }
}

std::vector<double> default_learning_rates() {
  std::vector<double> rates;
  for (int k = 0; k < 8; ++k) rates.push_back(0.0006 + (0.0013 - 0.0006) * k / 7.0);
  return rates;
}

void TrainConfig::validate() const {
  if (learning_rates.empty()) throw std::invalid_argument("train: no learning rates");
  for (double r : learning_rates) {
    if (!(r > 0.0)) throw std::invalid_argument("train: learning rates must be positive");
  }
  if (max_epochs == 0) throw std::invalid_argument("train: max_epochs must be at least 1");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be at least 1");
}

std::size_t TrainResult::divergences() const {
  std::size_t n = 0;
  for (const auto& r : rates) n += r.diverged;
  return n;
}

namespace {

struct RateRun {
  RateOutcome outcome;
  std::vector<TrainLogRow> log;
  std::vector<NamedTensor> best_state;
};

double validation_mse(Pipeline& model, std::span<const PipelineExample> val) {
  double ss = 0.0;
  for (const auto& ex : val) {
    const double d = model.predict(ex) - ex.target;
    ss += d * d;
  }
  return ss / static_cast<double>(val.size());
}

RateRun train_rate(const Pipeline& initial, std::span<const PipelineExample> train_set,
                   std::span<const PipelineExample> val_set, const TrainConfig& config, std::size_t index,
                   bool precomputed) {
  using Clock = std::chrono::steady_clock;
  RateRun run;
  const double rate = config.learning_rates[index];
  run.outcome.rate = rate;
  run.outcome.best_val_mse = std::numeric_limits<double>::infinity();

  Pipeline model = initial;
  Rng rng = Rng(config.seed).split(100 + index);
  OptimizerConfig oc;
  oc.method = config.method;
  oc.learning_rate = rate;
  Optimizer opt(oc);
  const auto params = model.trainable_parameters(precomputed);
  for (Parameter* p : model.parameters()) p->zero_grad();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = Clock::now();
    rng.shuffle(order);
    double loss_sum = 0.0;
    bool finite = true;
    for (std::size_t b = 0; b < order.size() && finite; b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      std::vector<const PipelineExample*> batch;
      Tensor target(Shape{end - b, 1});
      for (std::size_t i = b; i < end; ++i) {
        batch.push_back(&train_set[order[i]]);
        target[i - b] = train_set[order[i]].target;
      }
      Tape tape;
      Var loss = ops::mse(model.forward(tape, batch, config.dropout, rng), tape.constant(std::move(target)));
      const double l = loss.value().item();
      if (!std::isfinite(l)) {
        finite = false;
        break;
      }
      tape.backward(loss);
      opt.step(params);
      loss_sum += l * static_cast<double>(batch.size());
      finite = finite_params(params);
    }
    const double val = finite ? validation_mse(model, val_set) : std::numeric_limits<double>::quiet_NaN();
    if (!finite || !std::isfinite(val)) {
      run.outcome.diverged = true;
      run.outcome.best_epoch = 0;
      run.outcome.best_val_mse = std::numeric_limits<double>::quiet_NaN();
      run.outcome.event = "rate " + format_rate(rate) + " diverged at epoch " + std::to_string(epoch);
      run.best_state.clear();
      return run;
    }
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    run.log.push_back({rate, epoch, loss_sum / static_cast<double>(train_set.size()), val, ms});
    if (val < run.outcome.best_val_mse) {
      run.outcome.best_val_mse = val;
      run.outcome.best_epoch = epoch;
      run.best_state = model.state();
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  return run;
}

}  // namespace

TrainResult train(const Pipeline& initial, std::span<const PipelineExample> train_set,
                  std::span<const PipelineExample> val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training split");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation split");
  const bool precomputed = train_set.front().precomputed();
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& ex : *set) {
      if (ex.precomputed() != precomputed) {
        throw std::invalid_argument("train: mixing precomputed and chunked examples (" + ex.doc_id + ")");
      }
    }
  }

  const std::size_t n = config.learning_rates.size();
  std::vector<RateRun> runs(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1) if (config.parallel && n > 1)
  for (std::size_t r = 0; r < n; ++r) {
    try {
      runs[r] = train_rate(initial, train_set, val_set, config, r, precomputed);
    } catch (...) {
      errors[r] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  TrainResult result;
  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < n; ++r) {
    result.rates.push_back(runs[r].outcome);
    result.log.insert(result.log.end(), runs[r].log.begin(), runs[r].log.end());
    const auto& o = runs[r].outcome;
    if (o.diverged || o.best_epoch == 0) continue;
    if (!best) {
      best = r;
      continue;
    }
    const auto& b = runs[*best].outcome;
    if (o.best_val_mse < b.best_val_mse || (o.best_val_mse == b.best_val_mse && o.rate < b.rate)) best = r;
  }
  if (!best) throw std::runtime_error("train: every learning rate diverged");
  result.best_state = std::move(runs[*best].best_state);
  result.best_rate = runs[*best].outcome.rate;
  result.best_epoch = runs[*best].outcome.best_epoch;
  result.best_val_mse = runs[*best].outcome.best_val_mse;
  return result;
}

void write_training_log(const std::filesystem::path& path, std::span<const TrainLogRow> log) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "rate,epoch,train_mse,val_mse,wall_ms\n" << std::setprecision(17);
  for (const auto& r : log) {
    os << r.rate << ',' << r.epoch << ',' << r.train_mse << ',' << r.val_mse << ',' << std::setprecision(6)
       << r.wall_ms << std::setprecision(17) << '\n';
  }
}

void write_predictions(const std::filesystem::path& path, std::span<const Prediction> predictions) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "doc_id,y_hat,y_hat_raw,y_true,y_true_raw\n" << std::setprecision(17);
  for (const auto& p : predictions) {
    os << p.doc_id << ',' << p.y_hat << ',' << p.y_hat_raw << ',' << p.y_true << ',' << p.y_true_raw << '\n';
  }
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "doc_id,y_hat,y_hat_raw,y_true,y_true_raw") {
    throw std::runtime_error(path.string() + ":1: unexpected predictions header");
  }
  std::vector<Prediction> out;
  for (std::size_t n = 2; std::getline(is, line); ++n) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Prediction p;
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 5) throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": expected 5 fields");
    try {
      p.doc_id = f[0];
      p.y_hat = std::stod(f[1]);
      p.y_hat_raw = std::stod(f[2]);
      p.y_true = std::stod(f[3]);
      p.y_true_raw = std::stod(f[4]);
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": non-numeric field");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string to_string(HeadMethod m) {
  switch (m) {
    case HeadMethod::kFc2: return "fc2";
    case HeadMethod::kLinear: return "linear";
    case HeadMethod::kSvr: return "svr";
    case HeadMethod::kKernelRidge: return "kernel_ridge";
  }
  return "?";
}

HeadMethod parse_head_method(const std::string& s) {
  for (HeadMethod m : {HeadMethod::kFc2, HeadMethod::kLinear, HeadMethod::kSvr, HeadMethod::kKernelRidge}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown regression method '" + s + "' (expected fc2, linear, svr or kernel_ridge)");
}

Tensor FeatureSet::design() const { return append_column(doc_vectors, y_hist); }

FeatureSet extract_features(Pipeline& pipeline, std::span<const PipelineExample> examples) {
  FeatureSet f;
  const std::size_t d = pipeline.config().head.input_dim;
  f.doc_vectors = Tensor(Shape{examples.size(), d});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto v = pipeline.document_vector(examples[i]);
    std::copy(v.begin(), v.end(), f.doc_vectors.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    f.doc_ids.push_back(examples[i].doc_id);
    f.y_hist.push_back(examples[i].y_hist);
    f.target.push_back(examples[i].target);
  }
  return f;
}

std::vector<double> predict_with_regressor(HeadMethod method, Pipeline& pipeline, const FeatureSet& train,
                                           const FeatureSet& query, const RegressorSpec& base) {
  if (method == HeadMethod::kFc2) {
    std::vector<double> out;
    const std::size_t d = query.doc_vectors.cols();
    for (std::size_t i = 0; i < query.y_hist.size(); ++i) {
      out.push_back(pipeline.head().predict(query.doc_vectors.data().subspan(i * d, d), query.y_hist[i]));
    }
    return out;
  }
  RegressorSpec spec = base;
  spec.kind = method == HeadMethod::kLinear ? RegressorKind::kLinear
              : method == HeadMethod::kSvr  ? RegressorKind::kSvr
                                            : RegressorKind::kKernelRidge;
  return Regressor::fit(spec, train.design(), train.target).predict(query.design());
}

MethodSelection select_head_method(Pipeline& pipeline, const FeatureSet& train, const FeatureSet& val,
                                   std::span<const HeadMethod> methods, const RegressorSpec& base) {
  if (methods.empty()) throw std::invalid_argument("select_head_method: no methods");
  MethodSelection s;
  double best = std::numeric_limits<double>::infinity();
  for (HeadMethod m : methods) {
    const double mse = mean_squared_error(predict_with_regressor(m, pipeline, train, val, base), val.target);
    s.methods.push_back(m);
    s.val_mse.push_back(mse);
    if (mse < best) {
      best = mse;
      s.best = m;
    }
  }
  return s;
}

}  // namespace fetilda
