#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fetilda/baselines.hpp"
#include "fetilda/chunker.hpp"
#include "fetilda/docpool.hpp"
#include "fetilda/encoder.hpp"
#include "fetilda/numcore/checkpoint.hpp"
#include "fetilda/numcore/optimizer.hpp"

namespace fetilda {

struct HeadConfig {
  std::size_t input_dim = 64;
  std::size_t hidden_dim = 600;
  double dropout = 0.1;
  double leaky_slope = 0.01;

  void validate() const;
};

/// FC1 -> leaky ReLU -> dropout, then FC2 over the hidden units with the
/// historic score appended as one more input.
class Head {
 public:
  Head(HeadConfig config, Rng& rng);

  const HeadConfig& config() const { return config_; }

  /// `doc_vectors` is n x D and `y_hist` n x 1; returns n x 1 predictions.
  Var forward(Tape& tape, Var doc_vectors, Var y_hist, bool train, Rng& rng);
  /// Evaluation-mode forward for one document.
  double predict(std::span<const double> doc_vector, double y_hist);

  std::vector<Parameter*> parameters();
  Parameter& fc1_weight() { return fc1_w_; }  // D x hidden
  Parameter& fc1_bias() { return fc1_b_; }    // 1 x hidden
  Parameter& fc2_weight() { return fc2_w_; }  // (hidden + 1) x 1, last row reads y_hist
  Parameter& fc2_bias() { return fc2_b_; }    // 1 x 1

 private:
  HeadConfig config_;
  Parameter fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

/// One document as the pipeline consumes it. When `chunk_vectors` is set
/// (m x D precomputed embeddings) the encoder is bypassed; otherwise the
/// chunks run through the encoder.
struct PipelineExample {
  std::string doc_id;
  std::vector<Chunk> chunks;
  Tensor chunk_vectors;
  double y_hist = 0.0;
  double target = 0.0;

  bool precomputed() const { return !chunk_vectors.empty(); }
};

struct PipelineConfig {
  /// Leave vocab_size at 0 to build the pipeline without an encoder; every
  /// example must then carry precomputed chunk vectors.
  EncoderConfig encoder;
  DocPoolConfig docpool;
  HeadConfig head;
};

/// Encoder, document pooling and head as one trainable model.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, std::uint64_t seed);

  const PipelineConfig& config() const { return config_; }
  bool has_encoder() const { return encoder_.has_value(); }
  Encoder& encoder() { return encoder_.value(); }
  DocPool& docpool() { return docpool_; }
  Head& head() { return head_; }

  /// 1 x D document vector on the tape.
  Var document_vector(Tape& tape, const PipelineExample& example);
  /// n x 1 predictions for a batch.
  Var forward(Tape& tape, std::span<const PipelineExample* const> batch, bool train, Rng& rng);

  /// Evaluation-mode prediction and document vector, without gradients.
  double predict(const PipelineExample& example);
  std::vector<double> document_vector(const PipelineExample& example);

  /// Every parameter, frozen ones included.
  std::vector<Parameter*> parameters();
  /// Parameters that receive gradients when training on `examples`: the
  /// encoder's are left out when the examples are precomputed.
  std::vector<Parameter*> trainable_parameters(bool precomputed_inputs);

  std::vector<NamedTensor> state();
  /// Restores values saved by state(); names and shapes must match.
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  PipelineConfig config_;
  std::optional<Encoder> encoder_;
  DocPool docpool_;
  Head head_;
};

/// The default grid: eight rates evenly spaced over [0.0006, 0.0013].
std::vector<double> default_learning_rates();

struct TrainConfig {
  std::vector<double> learning_rates = default_learning_rates();
  std::size_t max_epochs = 50;
  /// Stop a rate after this many epochs without a validation improvement; 0 disables.
  std::size_t patience = 10;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  OptimizerMethod method = OptimizerMethod::kAdam;
  bool dropout = true;
  /// Train the rates concurrently.
  bool parallel = true;

  void validate() const;
};

struct TrainLogRow {
  double rate = 0.0;
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double wall_ms = 0.0;
};

struct RateOutcome {
  double rate = 0.0;
  bool diverged = false;
  /// 1-based epoch with the lowest validation MSE; 0 when the rate diverged first.
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  std::string event;
};

struct TrainResult {
  std::vector<NamedTensor> best_state;
  double best_rate = 0.0;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  std::vector<TrainLogRow> log;
  std::vector<RateOutcome> rates;

  std::size_t divergences() const;
};

/// Trains a copy of `initial` per learning rate and keeps the epoch with the
/// lowest validation MSE; ties go to the lower rate. A rate whose loss turns
/// non-finite is abandoned and recorded. Throws when every rate diverges.
TrainResult train(const Pipeline& initial, std::span<const PipelineExample> train_set,
                  std::span<const PipelineExample> val_set, const TrainConfig& config);

/// Rows of rate,epoch,train_mse,val_mse,wall_ms.
void write_training_log(const std::filesystem::path& path, std::span<const TrainLogRow> log);

struct Prediction {
  std::string doc_id;
  double y_hat = 0.0;
  double y_hat_raw = 0.0;
  double y_true = 0.0;
  double y_true_raw = 0.0;
};

/// Rows of doc_id,y_hat,y_hat_raw,y_true,y_true_raw at full precision.
void write_predictions(const std::filesystem::path& path, std::span<const Prediction> predictions);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

enum class HeadMethod { kFc2, kLinear, kSvr, kKernelRidge };

std::string to_string(HeadMethod m);
HeadMethod parse_head_method(const std::string& s);

/// Fixed document vectors with their historic scores and targets.
struct FeatureSet {
  std::vector<std::string> doc_ids;
  Tensor doc_vectors;  // n x D
  std::vector<double> y_hist;
  std::vector<double> target;

  /// doc_vectors with y_hist appended as the last column.
  Tensor design() const;
};

FeatureSet extract_features(Pipeline& pipeline, std::span<const PipelineExample> examples);

/// kFc2 runs the trained head; the others fit a baselines regressor on
/// `train` (features = document vector and y_hist) and predict `query`.
std::vector<double> predict_with_regressor(HeadMethod method, Pipeline& pipeline, const FeatureSet& train,
                                           const FeatureSet& query, const RegressorSpec& base = {});

struct MethodSelection {
  HeadMethod best = HeadMethod::kFc2;
  std::vector<HeadMethod> methods;
  std::vector<double> val_mse;
};

/// Argmin validation MSE over `methods`; ties go to the earlier entry.
MethodSelection select_head_method(Pipeline& pipeline, const FeatureSet& train, const FeatureSet& val,
                                   std::span<const HeadMethod> methods, const RegressorSpec& base = {});

}  // namespace fetilda
