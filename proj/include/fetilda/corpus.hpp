#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fetilda {

enum class Section { kItem1A, kItem7_7A, kItem7 };
enum class Metric { kRoa, kRoe, kEps, kTqr, kT1cr, kLr, kZ, kMbr, kVol };

std::string to_string(Section s);
Section parse_section(const std::string& s);
std::string to_string(Metric m);
Metric parse_metric(const std::string& s);
/// Metrics computed from fundamentals, in the paper's table order.
std::span<const Metric> kpi_metrics();

struct RawDocument {
  std::string doc_id;
  std::string entity_id;
  int fiscal_year = 0;
  Section section = Section::kItem7_7A;
  std::string text;
};

struct TargetRecord {
  std::string entity_id;
  int fiscal_year = 0;
  Metric metric = Metric::kRoa;
  double value = 0.0;
  /// The previous period's value (y_hist).
  double hist_value = 0.0;
};

struct Corpus {
  std::vector<RawDocument> documents;
  std::vector<TargetRecord> targets;
};

/// Documents are JSON lines with doc_id, entity_id, fiscal_year, section and
/// text; targets are CSV with header entity_id,fiscal_year,metric,value,hist_value.
/// Malformed lines raise errors carrying the file and line number.
Corpus load_corpus(const std::filesystem::path& docs_path, const std::filesystem::path& targets_path);
std::vector<RawDocument> load_documents(const std::filesystem::path& path);
std::vector<TargetRecord> load_targets(const std::filesystem::path& path);
void write_documents(const std::filesystem::path& path, std::span<const RawDocument> docs);
void write_targets(const std::filesystem::path& path, std::span<const TargetRecord> targets);

/// A document paired with its target for one metric.
struct Example {
  std::string doc_id;
  std::string entity_id;
  int fiscal_year = 0;
  std::string text;
  double target = 0.0;
  double hist = 0.0;
};

struct ExampleSet {
  std::vector<Example> examples;
  /// Documents of the requested section that have no target for the metric.
  std::vector<std::string> excluded;
};

/// Joins documents of `section` (all sections when empty) with their
/// (entity_id, fiscal_year, metric) target.
ExampleSet join_examples(const Corpus& corpus, Metric metric, std::optional<Section> section = std::nullopt);

/// Named line items for one entity-year.
struct Fundamentals {
  std::string entity_id;
  int fiscal_year = 0;
  std::map<std::string, double> items;
};

/// Wide CSV: entity_id,fiscal_year followed by one column per line item.
std::vector<Fundamentals> load_fundamentals(const std::filesystem::path& path);

/// One ratio from one entity-year's line items. Z is not available here
/// because it needs the entity's ROA history; see compute_kpis.
double compute_kpi(Metric metric, const Fundamentals& f);

/// Z = (ROA + CAR) / sd(ROA) with CAR = total_equity / total_assets and sd the
/// sample standard deviation of `roa_history`.
double z_score(double roa, double car, std::span<const double> roa_history);

struct KpiReport {
  std::vector<TargetRecord> records;
  /// Human-readable reasons for skipped (entity, year, metric) cells.
  std::vector<std::string> skipped;
};

/// Every metric for every entity-year. hist_value is the same entity's value
/// from the previous fiscal year; cells without one are skipped and reported,
/// as are cells with missing items or zero denominators. The Z-score's
/// deviation uses all of the entity's available years, or with z_window > 0
/// only the z_window years ending at the scored year.
KpiReport compute_kpis(std::span<const Fundamentals> rows, std::size_t z_window = 0);

/// Volatility over the last n + 1 simple returns R_t = S_t / S_{t-1} - 1:
/// sqrt(sum (R_i - mean)^2 / n), the mean taken over the n + 1 returns.
double compute_volatility(std::span<const double> prices, std::size_t n);

struct SplitSpec {
  double train_fraction = 0.8;
  /// Share of the non-training remainder that goes to validation.
  double val_fraction_of_rest = 0.5;
  /// Move the train boundary to the nearest fiscal-year boundary.
  bool year_aligned = false;
};

/// Fixed-year protocol: train/validation drawn in order from the training
/// years, one test set per later year.
struct YearSplitSpec {
  int train_first = 1996;
  int train_last = 2000;
  double train_fraction = 0.8;
  int test_first = 2001;
  int test_last = 2006;
};

struct TestSet {
  std::string label;
  std::vector<std::size_t> indices;
};

/// Indices refer to the examples vector after chronological ordering.
struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<TestSet> tests;
};

/// Stable order by (fiscal_year, doc_id).
void sort_chronologically(std::vector<Example>& examples);

/// Sorts `examples` chronologically, then cuts floor(f N) for training and
/// divides the rest between validation and test.
Splits make_splits(std::vector<Example>& examples, const SplitSpec& spec);
Splits make_year_splits(std::vector<Example>& examples, const YearSplitSpec& spec);

/// Rows of doc_id,split.
void write_split_manifest(const std::filesystem::path& path, std::span<const Example> examples, const Splits& splits);

/// Min-max scaling fitted on training targets; identity when disabled.
class Scaler {
 public:
  static Scaler fit(std::span<const double> train_targets, bool enabled);
  static Scaler identity() { return Scaler(); }

  bool enabled() const { return enabled_; }
  double min() const { return min_; }
  double max() const { return max_; }
  double apply(double x) const { return enabled_ ? (x - min_) / (max_ - min_) : x; }
  double invert(double x) const { return enabled_ ? x * (max_ - min_) + min_ : x; }

 private:
  bool enabled_ = false;
  double min_ = 0.0;
  double max_ = 1.0;
};

}  // namespace fetilda
