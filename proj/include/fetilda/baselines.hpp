#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fetilda/numcore/checkpoint.hpp"
#include "fetilda/numcore/tensor.hpp"

namespace fetilda {

/// Lowercased alphanumeric runs of `text`; the unit counted by the
/// bag-of-words baselines.
std::vector<std::string> extract_terms(std::string_view text);

using TermList = std::vector<std::string>;

/// Raw term counts times idf(t) = ln(N / (1 + df(t))) + 1, L2-normalised per
/// document, with the historic score appended as an unnormalised last column.
class TfidfModel {
 public:
  /// Vocabulary and document frequencies come from `train_docs` only.
  static TfidfModel fit(std::span<const TermList> train_docs);

  std::size_t vocabulary_size() const { return terms_.size(); }
  std::size_t num_docs() const { return num_docs_; }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<double>& idf() const { return idf_; }
  double idf(const std::string& term) const;

  /// n x (V + 1) feature matrix; terms outside the vocabulary are ignored.
  Tensor transform(std::span<const TermList> docs, std::span<const double> y_hist) const;

 private:
  std::vector<std::string> terms_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<double> df_;
  std::vector<double> idf_;
  std::size_t num_docs_ = 0;
};

/// Features log(1 + count(t)) over train terms with document frequency at
/// least `min_df`, plus one column ln(v_hist).
class Log1pModel {
 public:
  static Log1pModel fit(std::span<const TermList> train_docs, std::size_t min_df = 2);

  std::size_t vocabulary_size() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }

  /// Throws naming the record index when a historic volatility is not positive.
  Tensor transform(std::span<const TermList> docs, std::span<const double> v_hist) const;

 private:
  std::vector<std::string> terms_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// One column per feature; header row from `names` (generated when empty).
void write_feature_csv(const std::filesystem::path& path, const Tensor& features,
                       const std::vector<std::string>& names = {});

enum class RegressorKind { kLinear, kSvr, kKernelRidge };

std::string to_string(RegressorKind k);
RegressorKind parse_regressor(const std::string& s);

/// Hyperparameters; the defaults are the published settings.
struct RegressorSpec {
  RegressorKind kind = RegressorKind::kLinear;
  double ridge = 1e-10;
  double svr_c = 0.1;
  double svr_epsilon = 1e-4;
  /// 0 selects 1 / num_features.
  double svr_gamma = 0.0;
  double svr_tolerance = 1e-6;
  std::size_t svr_max_iterations = 10'000'000;
  double kr_alpha = 0.1;
  double kr_gamma = 0.1;
};

/// Least squares with an unpenalised intercept through ridge-stabilised normal
/// equations on centred data. Uses the n x n dual system when there are more
/// features than samples; both forms give the same ridge solution.
struct LinearModel {
  double intercept = 0.0;
  std::vector<double> weights;
  /// Extra ridge had to be added beyond the requested one.
  bool stabilized = false;

  static LinearModel fit(const Tensor& x, std::span<const double> y, double ridge = 1e-10);
  std::vector<double> predict(const Tensor& x) const;
};

/// Kernel ridge regression with an RBF kernel: a = (K + alpha I)^{-1} y.
struct KernelRidgeModel {
  Tensor train_x;
  std::vector<double> dual;
  double gamma = 0.1;

  static KernelRidgeModel fit(const Tensor& x, std::span<const double> y, double alpha, double gamma);
  std::vector<double> predict(const Tensor& x) const;
};

/// Epsilon-insensitive SVR with an RBF kernel, solved in the dual by
/// sequential minimal optimisation over the 2l-variable formulation.
struct SvrModel {
  Tensor train_x;
  /// alpha_i and alpha*_i of the dual, each in [0, C].
  std::vector<double> alpha;
  std::vector<double> alpha_star;
  double bias = 0.0;
  double gamma = 1.0;
  double c = 0.1;
  double epsilon = 1e-4;
  bool converged = false;
  std::size_t iterations = 0;

  static SvrModel fit(const Tensor& x, std::span<const double> y, double c, double epsilon, double gamma,
                      double tolerance = 1e-6, std::size_t max_iterations = 10'000'000);
  std::vector<double> predict(const Tensor& x) const;
  std::size_t support_vectors() const;
};

/// A fitted regressor of any kind.
class Regressor {
 public:
  static Regressor fit(const RegressorSpec& spec, const Tensor& x, std::span<const double> y);

  RegressorKind kind() const { return spec_.kind; }
  const RegressorSpec& spec() const { return spec_; }
  std::vector<double> predict(const Tensor& x) const;

  const LinearModel& linear() const { return linear_; }
  const KernelRidgeModel& kernel_ridge() const { return kernel_ridge_; }
  const SvrModel& svr() const { return svr_; }

  std::vector<NamedTensor> to_tensors() const;
  static Regressor from_tensors(const std::vector<NamedTensor>& tensors);

 private:
  RegressorSpec spec_;
  LinearModel linear_;
  KernelRidgeModel kernel_ridge_;
  SvrModel svr_;
};

double mean_squared_error(std::span<const double> pred, std::span<const double> target);

struct Selection {
  std::size_t best = 0;
  std::vector<double> val_mse;
};

/// Argmin validation MSE; ties go to the earlier kind in linear, svr,
/// kernel_ridge order, then to the earlier candidate.
Selection select_regressor(std::span<const Regressor> candidates, const Tensor& val_x, std::span<const double> val_y);

/// One regressor per kind, in linear, svr, kernel_ridge order, sharing the
/// hyperparameters of `base`.
std::vector<Regressor> fit_all_regressors(const Tensor& train_x, std::span<const double> train_y,
                                          const RegressorSpec& base = {});

/// The n x 1 design of the historic-only baseline; LinearModel supplies the
/// intercept column.
Tensor historic_features(std::span<const double> y_hist);

/// Appends `extra` as a final column.
Tensor append_column(const Tensor& x, std::span<const double> extra);

}  // namespace fetilda
