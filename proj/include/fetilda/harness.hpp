#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fetilda/baselines.hpp"
#include "fetilda/corpus.hpp"
#include "fetilda/encoder.hpp"
#include "fetilda/head.hpp"

namespace fetilda {

enum class ModelKind { kFetilda, kTfidf, kLog1p, kHistLinear };

std::string to_string(ModelKind m);
ModelKind parse_model(const std::string& s);

/// One run. Read from a flat key=value file; every key has a default except
/// the dataset paths.
struct ExperimentConfig {
  std::filesystem::path docs;
  std::filesystem::path targets;
  std::filesystem::path vocab;
  /// Precomputed chunk embeddings; when set the encoder is not run.
  std::filesystem::path embeddings;
  std::filesystem::path output_dir = "runs";

  Metric metric = Metric::kRoa;
  /// Empty means every section.
  std::optional<Section> section = Section::kItem7_7A;
  ModelKind model = ModelKind::kFetilda;
  std::uint64_t seed = 0;
  bool scaling = true;

  /// Fraction split, or the fixed-year protocol when year_splits is set.
  SplitSpec split;
  bool year_splits = false;
  YearSplitSpec years;

  std::size_t chunk_length = 62;  // b; chunks are b + 2 long
  std::size_t max_doc_tokens = 20480;
  EncoderConfig encoder;
  std::size_t lstm_hidden = 32;
  bool normalize_by_chunks = true;
  HeadConfig head;
  TrainConfig train;
  /// Final regression candidates for the FETILDA model, chosen on validation.
  std::vector<HeadMethod> methods{HeadMethod::kFc2};
  RegressorSpec regressor;

  /// Sets one key; throws on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Reads `key=value` lines; `#` starts a comment.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Checks referenced paths and value ranges.
  void validate() const;
  /// Canonical key=value rendering, one per line, sorted by key.
  std::string to_text() const;
  /// FNV-1a of to_text() without output_dir, as 16 hex digits.
  std::string hash() const;
};

/// A module error annotated with the configuration that produced it.
class ExperimentError : public std::runtime_error {
 public:
  ExperimentError(const std::string& what, std::string config_text)
      : std::runtime_error(what), config_text_(std::move(config_text)) {}
  const std::string& config_text() const { return config_text_; }

 private:
  std::string config_text_;
};

struct ResultRow {
  std::string model;
  Metric metric = Metric::kRoa;
  /// In the space the model was trained in (scaled when scaling is on).
  double test_mse = 0.0;
  double val_mse = 0.0;
  double test_mse_raw = 0.0;
  /// Wall-clock seconds; metadata only, ignored by operator==.
  double runtime_s = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ResultRow& a, const ResultRow& b) {
    return a.model == b.model && a.metric == b.metric && a.test_mse == b.test_mse && a.val_mse == b.val_mse &&
           a.test_mse_raw == b.test_mse_raw && a.seed == b.seed;
  }
};

/// What a run leaves behind besides the row.
struct ExperimentOutputs {
  ResultRow row;
  std::filesystem::path run_dir;
  std::filesystem::path predictions;
  std::filesystem::path checkpoint;
  std::size_t examples = 0;
  std::size_t excluded = 0;
  std::string selected_method;
};

/// Loads the corpus, splits it, trains or fits the configured model and
/// writes predictions, checkpoint, split manifest and result under
/// output_dir/<hash>-s<seed>. Module errors come back as ExperimentError.
ExperimentOutputs run_experiment(const ExperimentConfig& config);

/// (baseline - model) / baseline; throws when baseline is not positive.
double improvement(double mse_baseline, double mse_model);

/// Test MSE recomputed from a predictions file, scaled or raw columns.
double mse_from_predictions(const std::filesystem::path& path, bool raw = false);

void write_result_rows(const std::filesystem::path& path, std::span<const ResultRow> rows);
std::vector<ResultRow> load_result_rows(const std::filesystem::path& path);

/// Models down the side, metrics across; `best` marks each column's minimum.
struct ResultTable {
  std::vector<std::string> models;
  std::vector<Metric> metrics;
  std::vector<std::vector<std::optional<double>>> test_mse;  // [model][metric]
  std::vector<std::vector<bool>> best;

  static ResultTable build(std::span<const ResultRow> rows);
  std::string markdown() const;
  /// Long form: model,metric,test_mse,best.
  std::string csv() const;
};

/// Writes <stem>.md and <stem>.csv.
void emit_table(std::span<const ResultRow> rows, const std::filesystem::path& stem);

/// Documents whose target is 0.8 * (relative frequency of a marker token)
/// + 0.2 * y_hist + noise.
struct PlantedSpec {
  std::size_t documents = 200;
  std::size_t tokens_per_document = 64;
  std::size_t filler_words = 40;
  double max_marker_fraction = 0.25;
  double noise = 0.01;
  int first_year = 2000;
  std::size_t documents_per_year = 10;
  std::uint64_t seed = 0;
};

struct PlantedCorpus {
  Corpus corpus;
  /// Vocabulary lines: the four specials, the marker and the fillers.
  std::vector<std::string> vocab;
  std::string marker;
};

PlantedCorpus make_planted_corpus(const PlantedSpec& spec);
/// Writes docs.jsonl, targets.csv and vocab.txt into `dir`.
void write_planted_corpus(const PlantedCorpus& planted, const std::filesystem::path& dir);

}  // namespace fetilda
