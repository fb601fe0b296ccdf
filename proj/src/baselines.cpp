#include "fetilda/baselines.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "fetilda/kernels/kernels.hpp"
#include "fetilda/numcore/linalg.hpp"

namespace fetilda {

std::vector<std::string> extract_terms(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

void check_rows(std::size_t docs, std::size_t extra, const char* what) {
  if (docs != extra) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(docs) + " documents but " +
                                std::to_string(extra) + " historic values");
  }
}

// Per-document counts of vocabulary terms, as (column, count) pairs.
std::vector<std::pair<std::size_t, double>> count_terms(const TermList& doc,
                                                        const std::map<std::string, std::size_t, std::less<>>& index) {
  std::map<std::size_t, double> counts;
  for (const auto& t : doc) {
    auto it = index.find(t);
    if (it != index.end()) counts[it->second] += 1.0;
  }
  return {counts.begin(), counts.end()};
}

std::map<std::string, std::size_t> document_frequencies(std::span<const TermList> docs) {
  std::map<std::string, std::size_t> df;
  for (const auto& doc : docs) {
    std::vector<std::string> uniq(doc.begin(), doc.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (auto& t : uniq) ++df[t];
  }
  return df;
}

}  // namespace

TfidfModel TfidfModel::fit(std::span<const TermList> train_docs) {
  TfidfModel m;
  m.num_docs_ = train_docs.size();
  const auto df = document_frequencies(train_docs);
  if (df.empty()) throw std::invalid_argument("tfidf: empty vocabulary (no terms in the training documents)");
  const double n = static_cast<double>(m.num_docs_);
  for (const auto& [term, count] : df) {
    m.index_.emplace(term, m.terms_.size());
    m.terms_.push_back(term);
    m.df_.push_back(static_cast<double>(count));
    m.idf_.push_back(std::log(n / (1.0 + static_cast<double>(count))) + 1.0);
  }
  return m;
}

double TfidfModel::idf(const std::string& term) const {
  auto it = index_.find(term);
  if (it == index_.end()) throw std::out_of_range("tfidf: term not in vocabulary: " + term);
  return idf_[it->second];
}

Tensor TfidfModel::transform(std::span<const TermList> docs, std::span<const double> y_hist) const {
  check_rows(docs.size(), y_hist.size(), "tfidf");
  const std::size_t v = terms_.size();
  Tensor x(Shape{docs.size(), v + 1});
  for (std::size_t i = 0; i < docs.size(); ++i) {
    double norm = 0.0;
    for (const auto& [col, count] : count_terms(docs[i], index_)) {
      const double w = count * idf_[col];
      x.at(i, col) = w;
      norm += w * w;
    }
    if (norm > 0.0) {
      const double inv = 1.0 / std::sqrt(norm);
      for (std::size_t j = 0; j < v; ++j) x.at(i, j) *= inv;
    }
    x.at(i, v) = y_hist[i];
  }
  return x;
}

Log1pModel Log1pModel::fit(std::span<const TermList> train_docs, std::size_t min_df) {
  Log1pModel m;
  for (const auto& [term, count] : document_frequencies(train_docs)) {
    if (count < min_df) continue;
    m.index_.emplace(term, m.terms_.size());
    m.terms_.push_back(term);
  }
  if (m.terms_.empty()) {
    throw std::invalid_argument("log1p: empty vocabulary (no term reaches document frequency " +
                                std::to_string(min_df) + ")");
  }
  return m;
}

Tensor Log1pModel::transform(std::span<const TermList> docs, std::span<const double> v_hist) const {
  check_rows(docs.size(), v_hist.size(), "log1p");
  const std::size_t v = terms_.size();
  Tensor x(Shape{docs.size(), v + 1});
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!(v_hist[i] > 0.0)) {
      throw std::invalid_argument("log1p: record " + std::to_string(i) + " has non-positive historic volatility " +
                                  std::to_string(v_hist[i]));
    }
    for (const auto& [col, count] : count_terms(docs[i], index_)) x.at(i, col) = std::log1p(count);
    x.at(i, v) = std::log(v_hist[i]);
  }
  return x;
}

void write_feature_csv(const std::filesystem::path& path, const Tensor& features,
                       const std::vector<std::string>& names) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write feature file: " + path.string());
  const std::size_t cols = features.cols();
  for (std::size_t j = 0; j < cols; ++j) {
    if (j) os << ',';
    os << (j < names.size() ? names[j] : "f" + std::to_string(j));
  }
  os << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) os << ',';
      os << features.at(i, j);
    }
    os << '\n';
  }
}

std::string to_string(RegressorKind k) {
  switch (k) {
    case RegressorKind::kLinear: return "linear";
    case RegressorKind::kSvr: return "svr";
    case RegressorKind::kKernelRidge: return "kernel_ridge";
  }
  return "?";
}

RegressorKind parse_regressor(const std::string& s) {
  if (s == "linear") return RegressorKind::kLinear;
  if (s == "svr") return RegressorKind::kSvr;
  if (s == "kernel_ridge") return RegressorKind::kKernelRidge;
  throw std::invalid_argument("unknown regressor '" + s + "'");
}

namespace {

// Solves (G + ridge I) z = rhs, raising the ridge tenfold until the factor
// succeeds. Returns the ridge actually used.
double ridge_solve(const Tensor& g, std::span<double> rhs, double ridge) {
  double scale = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) scale = std::max(scale, g.at(i, i));
  double r = ridge;
  for (int attempt = 0; attempt < 30; ++attempt) {
    Tensor a = g;
    for (std::size_t i = 0; i < a.rows(); ++i) a.at(i, i) += r;
    try {
      linalg::cholesky(a);
      linalg::cholesky_solve(a, rhs);
      return r;
    } catch (const linalg::NotPositiveDefinite&) {
      r = std::max(r * 10.0, scale * 1e-14);
    }
  }
  throw std::runtime_error("linear_fit: normal equations could not be stabilised");
}

void check_xy(const Tensor& x, std::span<const double> y, const char* what) {
  if (x.rows() != y.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(x.rows()) + " rows vs " + std::to_string(y.size()) +
                     " targets");
  }
}

}  // namespace

LinearModel LinearModel::fit(const Tensor& x, std::span<const double> y, double ridge) {
  check_xy(x, y, "linear_fit");
  if (x.rows() < 2) throw std::invalid_argument("linear_fit: need at least 2 samples");
  const std::size_t n = x.rows(), p = x.cols();
  // Centre so the intercept is unpenalised: w from the centred problem,
  // intercept = mean(y) - mean(x) . w.
  std::vector<double> x_mean(p, 0.0);
  double y_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y_mean += y[i];
    for (std::size_t j = 0; j < p; ++j) x_mean[j] += x.at(i, j);
  }
  y_mean /= static_cast<double>(n);
  for (auto& m : x_mean) m /= static_cast<double>(n);
  Tensor a(Shape{n, p});
  std::vector<double> yc(n);
  for (std::size_t i = 0; i < n; ++i) {
    yc[i] = y[i] - y_mean;
    for (std::size_t j = 0; j < p; ++j) a.at(i, j) = x.at(i, j) - x_mean[j];
  }

  std::vector<double> w(p, 0.0);
  double used = ridge;
  if (p <= n) {
    // (A^T A + rI) w = A^T y
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) w[j] += a.at(i, j) * yc[i];
    }
    used = ridge_solve(linalg::gram_columns(a), w, ridge);
  } else {
    // w = A^T (A A^T + rI)^{-1} y
    std::vector<double> z = yc;
    used = ridge_solve(linalg::gram_rows(a), z, ridge);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) w[j] += a.at(i, j) * z[i];
    }
  }
  LinearModel m;
  m.stabilized = used != ridge;
  if (m.stabilized) {
    std::cerr << "warning: linear_fit: design is rank-deficient, ridge raised to " << used << '\n';
  }
  m.intercept = y_mean;
  for (std::size_t j = 0; j < p; ++j) m.intercept -= x_mean[j] * w[j];
  m.weights = std::move(w);
  return m;
}

std::vector<double> LinearModel::predict(const Tensor& x) const {
  if (x.cols() != weights.size()) {
    throw ShapeError("linear_predict: " + std::to_string(x.cols()) + " features vs " +
                     std::to_string(weights.size()) + " weights");
  }
  std::vector<double> out(x.rows(), intercept);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < weights.size(); ++j) out[i] += x.at(i, j) * weights[j];
  }
  return out;
}

namespace {

Tensor rbf(const Tensor& a, const Tensor& b, double gamma) {
  if (a.cols() != b.cols()) {
    throw ShapeError("rbf kernel: feature widths " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  }
  Tensor k(Shape{a.rows(), b.rows()});
  kernels::rbf_gram(a.data(), b.data(), k.data(), a.rows(), b.rows(), a.cols(), gamma);
  return k;
}

std::vector<double> kernel_expand(const Tensor& train_x, const Tensor& x, double gamma,
                                  std::span<const double> coef, double bias) {
  const Tensor k = rbf(x, train_x, gamma);
  std::vector<double> out(x.rows(), bias);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < coef.size(); ++j) out[i] += k.at(i, j) * coef[j];
  }
  return out;
}

}  // namespace

KernelRidgeModel KernelRidgeModel::fit(const Tensor& x, std::span<const double> y, double alpha, double gamma) {
  check_xy(x, y, "kernel_ridge_fit");
  if (!(alpha > 0.0)) throw std::invalid_argument("kernel_ridge_fit: alpha must be positive");
  Tensor k = rbf(x, x, gamma);
  for (std::size_t i = 0; i < k.rows(); ++i) k.at(i, i) += alpha;
  KernelRidgeModel m;
  m.train_x = x;
  m.gamma = gamma;
  try {
    m.dual = linalg::solve_spd(std::move(k), y);
  } catch (const linalg::NotPositiveDefinite& e) {
    throw std::runtime_error(std::string("kernel_ridge_fit: solver failed: ") + e.what());
  }
  return m;
}

std::vector<double> KernelRidgeModel::predict(const Tensor& x) const {
  return kernel_expand(train_x, x, gamma, dual, 0.0);
}

SvrModel SvrModel::fit(const Tensor& x, std::span<const double> y, double c, double epsilon, double gamma,
                       double tolerance, std::size_t max_iterations) {
  check_xy(x, y, "svr_fit");
  if (!(c > 0.0)) throw std::invalid_argument("svr_fit: C must be positive");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("svr_fit: epsilon must be non-negative");
  const std::size_t l = x.rows();
  if (l == 0) throw std::invalid_argument("svr_fit: no samples");
  const Tensor k = rbf(x, x, gamma);

  // Variables t < l are alpha_t (sign +1), t >= l are alpha*_{t-l} (sign -1).
  // Q_st = sign_s sign_t K(s mod l, t mod l); the linear term is
  // p = [epsilon - y; epsilon + y]. Minimise 1/2 b'Qb + p'b subject to
  // sign'b = 0 and 0 <= b <= C.
  const std::size_t n = 2 * l;
  std::vector<double> beta(n, 0.0), grad(n);
  std::vector<int> sign(n);
  for (std::size_t t = 0; t < l; ++t) {
    sign[t] = 1;
    sign[t + l] = -1;
    grad[t] = epsilon - y[t];
    grad[t + l] = epsilon + y[t];
  }
  auto kq = [&](std::size_t s, std::size_t t) { return sign[s] * sign[t] * k.at(s % l, t % l); };
  auto upper = [&](std::size_t t) { return beta[t] >= c; };
  auto lower = [&](std::size_t t) { return beta[t] <= 0.0; };
  constexpr double kTau = 1e-12;

  SvrModel m;
  m.train_x = x;
  m.gamma = gamma;
  m.c = c;
  m.epsilon = epsilon;
  std::size_t iter = 0;
  for (; iter < max_iterations; ++iter) {
    // Second-order working-set selection.
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (sign[t] == 1 ? !upper(t) : !lower(t)) {
        const double v = -sign[t] * grad[t];
        if (v >= gmax) {
          gmax = v;
          i = t;
        }
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    double best_obj = std::numeric_limits<double>::infinity();
    std::size_t j = n;
    for (std::size_t t = 0; t < n && i < n; ++t) {
      if (sign[t] == 1 ? lower(t) : upper(t)) continue;
      const double v = sign[t] * grad[t];
      gmax2 = std::max(gmax2, v);
      const double diff = gmax + v;
      if (diff > 0.0) {
        double quad = k.at(i % l, i % l) + k.at(t % l, t % l) - 2.0 * sign[i] * kq(i, t);
        if (quad <= 0.0) quad = kTau;
        const double obj = -(diff * diff) / quad;
        if (obj <= best_obj) {
          best_obj = obj;
          j = t;
        }
      }
    }
    if (i == n || j == n || gmax + gmax2 < tolerance) {
      m.converged = true;
      break;
    }

    const double old_i = beta[i], old_j = beta[j];
    const double qii = k.at(i % l, i % l), qjj = k.at(j % l, j % l), qij = kq(i, j);
    if (sign[i] != sign[j]) {
      double quad = qii + qjj + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = beta[i] - beta[j];
      beta[i] += delta;
      beta[j] += delta;
      if (diff > 0.0) {
        if (beta[j] < 0.0) {
          beta[j] = 0.0;
          beta[i] = diff;
        }
      } else if (beta[i] < 0.0) {
        beta[i] = 0.0;
        beta[j] = -diff;
      }
      if (diff > 0.0) {
        if (beta[i] > c) {
          beta[i] = c;
          beta[j] = c - diff;
        }
      } else if (beta[j] > c) {
        beta[j] = c;
        beta[i] = c + diff;
      }
    } else {
      double quad = qii + qjj - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = beta[i] + beta[j];
      beta[i] -= delta;
      beta[j] += delta;
      if (sum > c) {
        if (beta[i] > c) {
          beta[i] = c;
          beta[j] = sum - c;
        }
      } else if (beta[j] < 0.0) {
        beta[j] = 0.0;
        beta[i] = sum;
      }
      if (sum > c) {
        if (beta[j] > c) {
          beta[j] = c;
          beta[i] = sum - c;
        }
      } else if (beta[i] < 0.0) {
        beta[i] = 0.0;
        beta[j] = sum;
      }
    }
    const double di = beta[i] - old_i, dj = beta[j] - old_j;
    for (std::size_t t = 0; t < n; ++t) grad[t] += kq(i, t) * di + kq(j, t) * dj;
  }
  m.iterations = iter;

  // Bias from free variables, or the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = sign[t] * grad[t];
    if (upper(t)) {
      if (sign[t] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (sign[t] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++free_count;
      free_sum += yg;
    }
  }
  const double rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : (ub + lb) / 2.0;
  m.bias = -rho;
  m.alpha.assign(beta.begin(), beta.begin() + static_cast<std::ptrdiff_t>(l));
  m.alpha_star.assign(beta.begin() + static_cast<std::ptrdiff_t>(l), beta.end());
  return m;
}

std::vector<double> SvrModel::predict(const Tensor& x) const {
  std::vector<double> coef(alpha.size());
  for (std::size_t i = 0; i < coef.size(); ++i) coef[i] = alpha[i] - alpha_star[i];
  return kernel_expand(train_x, x, gamma, coef, bias);
}

std::size_t SvrModel::support_vectors() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) n += (alpha[i] - alpha_star[i]) != 0.0;
  return n;
}

Regressor Regressor::fit(const RegressorSpec& spec, const Tensor& x, std::span<const double> y) {
  Regressor r;
  r.spec_ = spec;
  switch (spec.kind) {
    case RegressorKind::kLinear:
      r.linear_ = LinearModel::fit(x, y, spec.ridge);
      break;
    case RegressorKind::kKernelRidge:
      r.kernel_ridge_ = KernelRidgeModel::fit(x, y, spec.kr_alpha, spec.kr_gamma);
      break;
    case RegressorKind::kSvr: {
      const double gamma = spec.svr_gamma > 0.0 ? spec.svr_gamma : 1.0 / static_cast<double>(std::max<std::size_t>(1, x.cols()));
      r.svr_ = SvrModel::fit(x, y, spec.svr_c, spec.svr_epsilon, gamma, spec.svr_tolerance, spec.svr_max_iterations);
      r.spec_.svr_gamma = gamma;
      if (!r.svr_.converged) {
        std::cerr << "warning: svr_fit: iteration cap " << spec.svr_max_iterations << " reached before convergence\n";
      }
      break;
    }
  }
  return r;
}

std::vector<double> Regressor::predict(const Tensor& x) const {
  switch (spec_.kind) {
    case RegressorKind::kLinear: return linear_.predict(x);
    case RegressorKind::kKernelRidge: return kernel_ridge_.predict(x);
    case RegressorKind::kSvr: return svr_.predict(x);
  }
  throw std::logic_error("unknown regressor kind");
}

std::vector<NamedTensor> Regressor::to_tensors() const {
  std::vector<NamedTensor> out;
  out.push_back({"regressor.kind", Tensor::scalar(static_cast<double>(spec_.kind))});
  switch (spec_.kind) {
    case RegressorKind::kLinear: {
      out.push_back({"linear.intercept", Tensor::scalar(linear_.intercept)});
      out.push_back({"linear.weights", Tensor::row(linear_.weights)});
      break;
    }
    case RegressorKind::kKernelRidge: {
      out.push_back({"kernel_ridge.gamma", Tensor::scalar(kernel_ridge_.gamma)});
      out.push_back({"kernel_ridge.train_x", kernel_ridge_.train_x});
      out.push_back({"kernel_ridge.dual", Tensor::row(kernel_ridge_.dual)});
      break;
    }
    case RegressorKind::kSvr: {
      out.push_back({"svr.params", Tensor::row({svr_.gamma, svr_.c, svr_.epsilon, svr_.bias})});
      out.push_back({"svr.train_x", svr_.train_x});
      out.push_back({"svr.alpha", Tensor::row(svr_.alpha)});
      out.push_back({"svr.alpha_star", Tensor::row(svr_.alpha_star)});
      break;
    }
  }
  return out;
}

Regressor Regressor::from_tensors(const std::vector<NamedTensor>& tensors) {
  auto get = [&](const std::string& name) -> const Tensor& {
    for (const auto& t : tensors) {
      if (t.name == name) return t.tensor;
    }
    throw std::invalid_argument("regressor checkpoint lacks '" + name + "'");
  };
  auto vec = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
  Regressor r;
  r.spec_.kind = static_cast<RegressorKind>(static_cast<int>(get("regressor.kind").item()));
  switch (r.spec_.kind) {
    case RegressorKind::kLinear:
      r.linear_.intercept = get("linear.intercept").item();
      r.linear_.weights = vec(get("linear.weights"));
      break;
    case RegressorKind::kKernelRidge:
      r.kernel_ridge_.gamma = r.spec_.kr_gamma = get("kernel_ridge.gamma").item();
      r.kernel_ridge_.train_x = get("kernel_ridge.train_x");
      r.kernel_ridge_.dual = vec(get("kernel_ridge.dual"));
      break;
    case RegressorKind::kSvr: {
      const Tensor& p = get("svr.params");
      r.svr_.gamma = r.spec_.svr_gamma = p[0];
      r.svr_.c = r.spec_.svr_c = p[1];
      r.svr_.epsilon = r.spec_.svr_epsilon = p[2];
      r.svr_.bias = p[3];
      r.svr_.converged = true;
      r.svr_.train_x = get("svr.train_x");
      r.svr_.alpha = vec(get("svr.alpha"));
      r.svr_.alpha_star = vec(get("svr.alpha_star"));
      break;
    }
    default:
      throw std::invalid_argument("regressor checkpoint has an unknown kind");
  }
  return r;
}

double mean_squared_error(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("mse: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(target.size()) +
                     " targets");
  }
  if (pred.empty()) throw std::invalid_argument("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

Selection select_regressor(std::span<const Regressor> candidates, const Tensor& val_x,
                           std::span<const double> val_y) {
  if (candidates.empty()) throw std::invalid_argument("select_regressor: no candidates");
  Selection s;
  for (const auto& c : candidates) s.val_mse.push_back(mean_squared_error(c.predict(val_x), val_y));
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double a = s.val_mse[i], b = s.val_mse[s.best];
    if (a < b || (a == b && candidates[i].kind() < candidates[s.best].kind())) s.best = i;
  }
  return s;
}

std::vector<Regressor> fit_all_regressors(const Tensor& train_x, std::span<const double> train_y,
                                          const RegressorSpec& base) {
  std::vector<Regressor> out;
  for (auto kind : {RegressorKind::kLinear, RegressorKind::kSvr, RegressorKind::kKernelRidge}) {
    RegressorSpec spec = base;
    spec.kind = kind;
    out.push_back(Regressor::fit(spec, train_x, train_y));
  }
  return out;
}

Tensor historic_features(std::span<const double> y_hist) {
  return Tensor(Shape{y_hist.size(), 1}, std::vector<double>(y_hist.begin(), y_hist.end()));
}

Tensor append_column(const Tensor& x, std::span<const double> extra) {
  if (x.rows() != extra.size()) throw ShapeError("append_column: row count mismatch");
  Tensor out(Shape{x.rows(), x.cols() + 1});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(i, j);
    out.at(i, x.cols()) = extra[i];
  }
  return out;
}

}  // namespace fetilda
