#include "fetilda/corpus.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fetilda {

namespace {

constexpr std::array kKpis{Metric::kRoa, Metric::kRoe, Metric::kEps, Metric::kTqr,
                           Metric::kT1cr, Metric::kLr, Metric::kZ, Metric::kMbr};

std::runtime_error line_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  return std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

bool parse_int(const std::string& s, int& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

}  // namespace

std::string to_string(Section s) {
  switch (s) {
    case Section::kItem1A: return "Item1A";
    case Section::kItem7_7A: return "Item7_7A";
    case Section::kItem7: return "Item7";
  }
  return "?";
}

Section parse_section(const std::string& s) {
  if (s == "Item1A") return Section::kItem1A;
  if (s == "Item7_7A") return Section::kItem7_7A;
  if (s == "Item7") return Section::kItem7;
  throw std::invalid_argument("unknown section '" + s + "'");
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::kRoa: return "ROA";
    case Metric::kRoe: return "ROE";
    case Metric::kEps: return "EPS";
    case Metric::kTqr: return "TQR";
    case Metric::kT1cr: return "T1CR";
    case Metric::kLr: return "LR";
    case Metric::kZ: return "Z";
    case Metric::kMbr: return "MBR";
    case Metric::kVol: return "VOL";
  }
  return "?";
}

Metric parse_metric(const std::string& s) {
  for (Metric m : {Metric::kRoa, Metric::kRoe, Metric::kEps, Metric::kTqr, Metric::kT1cr, Metric::kLr, Metric::kZ,
                   Metric::kMbr, Metric::kVol}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown metric '" + s + "'");
}

std::span<const Metric> kpi_metrics() { return kKpis; }

std::vector<RawDocument> load_documents(const std::filesystem::path& path) {
  auto is = open_input(path);
  std::vector<RawDocument> docs;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    RawDocument d;
    try {
      const auto j = nlohmann::json::parse(line);
      d.doc_id = j.at("doc_id").get<std::string>();
      d.entity_id = j.at("entity_id").get<std::string>();
      d.fiscal_year = j.at("fiscal_year").get<int>();
      d.section = parse_section(j.at("section").get<std::string>());
      d.text = j.at("text").get<std::string>();
    } catch (const std::exception& e) {
      throw line_error(path, n, std::string("malformed document: ") + e.what());
    }
    if (d.doc_id.empty()) throw line_error(path, n, "empty doc_id");
    if (d.text.empty()) throw line_error(path, n, "empty text for " + d.doc_id);
    if (!seen.insert(d.doc_id).second) throw line_error(path, n, "duplicate doc_id " + d.doc_id);
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<TargetRecord> load_targets(const std::filesystem::path& path) {
  auto is = open_input(path);
  std::string line;
  if (!std::getline(is, line)) throw line_error(path, 1, "missing header");
  const std::vector<std::string> expected{"entity_id", "fiscal_year", "metric", "value", "hist_value"};
  if (split_csv(line) != expected) {
    throw line_error(path, 1, "header must be entity_id,fiscal_year,metric,value,hist_value");
  }
  std::vector<TargetRecord> out;
  std::set<std::tuple<std::string, int, Metric>> seen;
  for (std::size_t n = 2; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv(line);
    if (f.size() != 5) throw line_error(path, n, "expected 5 fields, got " + std::to_string(f.size()));
    TargetRecord r;
    r.entity_id = f[0];
    if (!parse_int(f[1], r.fiscal_year)) throw line_error(path, n, "non-integer fiscal_year '" + f[1] + "'");
    try {
      r.metric = parse_metric(f[2]);
    } catch (const std::invalid_argument& e) {
      throw line_error(path, n, e.what());
    }
    if (!parse_double(f[3], r.value)) throw line_error(path, n, "non-numeric value '" + f[3] + "'");
    if (!parse_double(f[4], r.hist_value)) throw line_error(path, n, "non-numeric hist_value '" + f[4] + "'");
    if (!seen.insert({r.entity_id, r.fiscal_year, r.metric}).second) {
      throw line_error(path, n, "duplicate target (" + r.entity_id + ", " + f[1] + ", " + f[2] + ")");
    }
    out.push_back(std::move(r));
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& docs_path, const std::filesystem::path& targets_path) {
  return Corpus{load_documents(docs_path), load_targets(targets_path)};
}

void write_documents(const std::filesystem::path& path, std::span<const RawDocument> docs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& d : docs) {
    nlohmann::json j{{"doc_id", d.doc_id},
                     {"entity_id", d.entity_id},
                     {"fiscal_year", d.fiscal_year},
                     {"section", to_string(d.section)},
                     {"text", d.text}};
    os << j.dump() << '\n';
  }
}

void write_targets(const std::filesystem::path& path, std::span<const TargetRecord> targets) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "entity_id,fiscal_year,metric,value,hist_value\n" << std::setprecision(17);
  for (const auto& t : targets) {
    os << t.entity_id << ',' << t.fiscal_year << ',' << to_string(t.metric) << ',' << t.value << ',' << t.hist_value
       << '\n';
  }
}

ExampleSet join_examples(const Corpus& corpus, Metric metric, std::optional<Section> section) {
  std::map<std::pair<std::string, int>, const TargetRecord*> index;
  for (const auto& t : corpus.targets) {
    if (t.metric == metric) index[{t.entity_id, t.fiscal_year}] = &t;
  }
  ExampleSet out;
  for (const auto& d : corpus.documents) {
    if (section && d.section != *section) continue;
    auto it = index.find({d.entity_id, d.fiscal_year});
    if (it == index.end()) {
      out.excluded.push_back(d.doc_id);
      continue;
    }
    out.examples.push_back({d.doc_id, d.entity_id, d.fiscal_year, d.text, it->second->value, it->second->hist_value});
  }
  return out;
}

std::vector<Fundamentals> load_fundamentals(const std::filesystem::path& path) {
  auto is = open_input(path);
  std::string line;
  if (!std::getline(is, line)) throw line_error(path, 1, "missing header");
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "entity_id" || header[1] != "fiscal_year") {
    throw line_error(path, 1, "header must start with entity_id,fiscal_year");
  }
  std::vector<Fundamentals> out;
  for (std::size_t n = 2; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) throw line_error(path, n, "field count differs from header");
    Fundamentals row;
    row.entity_id = f[0];
    if (!parse_int(f[1], row.fiscal_year)) throw line_error(path, n, "non-integer fiscal_year '" + f[1] + "'");
    for (std::size_t c = 2; c < f.size(); ++c) {
      if (f[c].empty()) continue;  // missing item
      double v;
      if (!parse_double(f[c], v)) throw line_error(path, n, "non-numeric " + header[c] + " '" + f[c] + "'");
      row.items[header[c]] = v;
    }
    out.push_back(std::move(row));
  }
  return out;
}

namespace {

double item(const Fundamentals& f, const char* name) {
  auto it = f.items.find(name);
  if (it == f.items.end()) throw std::invalid_argument(std::string("missing line item ") + name);
  return it->second;
}

double ratio(double num, double den, const char* what) {
  if (den == 0.0) throw std::domain_error(std::string("zero denominator in ") + what);
  return num / den;
}

}  // namespace

double compute_kpi(Metric metric, const Fundamentals& f) {
  switch (metric) {
    case Metric::kRoa: return ratio(item(f, "net_income"), item(f, "total_assets"), "ROA");
    case Metric::kRoe: return ratio(item(f, "net_income"), item(f, "total_equity"), "ROE");
    case Metric::kEps:
      return ratio(item(f, "net_income") - item(f, "preferred_dividends"), item(f, "common_shares"), "EPS");
    case Metric::kTqr: {
      const double liab = item(f, "liabilities_book_value");
      return ratio(item(f, "equity_market_value") + liab, item(f, "equity_book_value") + liab, "TQR");
    }
    case Metric::kT1cr: return ratio(item(f, "tier1_capital"), item(f, "risk_weighted_assets"), "T1CR");
    case Metric::kLr: return ratio(item(f, "avg_total_assets"), item(f, "avg_equity"), "LR");
    case Metric::kMbr: return ratio(item(f, "market_cap"), item(f, "book_value"), "MBR");
    case Metric::kZ: throw std::invalid_argument("Z needs the entity's ROA history; use z_score");
    case Metric::kVol: throw std::invalid_argument("VOL comes from prices; use compute_volatility");
  }
  throw std::invalid_argument("unknown metric");
}

double z_score(double roa, double car, std::span<const double> roa_history) {
  const std::size_t n = roa_history.size();
  if (n < 2) throw std::domain_error("Z: ROA deviation needs at least 2 years");
  double mean = 0.0;
  for (double v : roa_history) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : roa_history) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return ratio(roa + car, sd, "Z (ROA deviation)");
}

KpiReport compute_kpis(std::span<const Fundamentals> rows, std::size_t z_window) {
  // (entity, metric) -> year -> value
  std::map<std::pair<std::string, Metric>, std::map<int, double>> values;
  KpiReport report;
  auto skip = [&](const Fundamentals& f, Metric m, const std::string& why) {
    report.skipped.push_back(f.entity_id + " " + std::to_string(f.fiscal_year) + " " + to_string(m) + ": " + why);
  };
  std::map<std::string, std::vector<const Fundamentals*>> by_entity;
  for (const auto& f : rows) by_entity[f.entity_id].push_back(&f);

  for (auto& [entity, list] : by_entity) {
    std::sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->fiscal_year < b->fiscal_year; });
    std::map<int, double> roa_by_year;
    for (const Fundamentals* f : list) {
      for (Metric m : kKpis) {
        if (m == Metric::kZ) continue;
        try {
          const double v = compute_kpi(m, *f);
          values[{entity, m}][f->fiscal_year] = v;
          if (m == Metric::kRoa) roa_by_year[f->fiscal_year] = v;
        } catch (const std::exception& e) {
          skip(*f, m, e.what());
        }
      }
    }
    for (const Fundamentals* f : list) {
      try {
        auto it = roa_by_year.find(f->fiscal_year);
        if (it == roa_by_year.end()) throw std::domain_error("no ROA for this year");
        const double car = ratio(item(*f, "total_equity"), item(*f, "total_assets"), "CAR");
        std::vector<double> window;
        for (const auto& [year, v] : roa_by_year) {
          if (z_window == 0 || (year <= f->fiscal_year && year > f->fiscal_year - static_cast<int>(z_window))) {
            window.push_back(v);
          }
        }
        values[{entity, Metric::kZ}][f->fiscal_year] = z_score(it->second, car, window);
      } catch (const std::exception& e) {
        skip(*f, Metric::kZ, e.what());
      }
    }
  }
  for (const auto& [key, by_year] : values) {
    for (const auto& [year, v] : by_year) {
      auto prev = by_year.find(year - 1);
      if (prev == by_year.end()) {
        report.skipped.push_back(key.first + " " + std::to_string(year) + " " + to_string(key.second) +
                                 ": no previous-year value for the historic score");
        continue;
      }
      report.records.push_back({key.first, year, key.second, v, prev->second});
    }
  }
  return report;
}

double compute_volatility(std::span<const double> prices, std::size_t n) {
  if (n == 0) throw std::invalid_argument("volatility: window n must be positive");
  if (prices.size() < n + 2) {
    throw std::invalid_argument("volatility: need at least " + std::to_string(n + 2) + " prices, got " +
                                std::to_string(prices.size()));
  }
  for (std::size_t i = 0; i < prices.size(); ++i) {
    if (!(prices[i] > 0.0)) throw std::invalid_argument("volatility: non-positive price at index " + std::to_string(i));
  }
  const std::size_t first = prices.size() - (n + 1);
  std::vector<double> returns;
  returns.reserve(n + 1);
  for (std::size_t t = first; t < prices.size(); ++t) returns.push_back(prices[t] / prices[t - 1] - 1.0);
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= static_cast<double>(n + 1);
  double ss = 0.0;
  for (double r : returns) ss += (r - mean) * (r - mean);
  return std::sqrt(ss / static_cast<double>(n));
}

void sort_chronologically(std::vector<Example>& examples) {
  std::stable_sort(examples.begin(), examples.end(), [](const Example& a, const Example& b) {
    if (a.fiscal_year != b.fiscal_year) return a.fiscal_year < b.fiscal_year;
    return a.doc_id < b.doc_id;
  });
}

namespace {

std::vector<std::size_t> range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(i);
  return v;
}

void require_nonempty(const std::vector<std::size_t>& v, const std::string& name) {
  if (v.empty()) throw std::invalid_argument("split '" + name + "' is empty");
}

}  // namespace

Splits make_splits(std::vector<Example>& examples, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0, 1]");
  }
  if (!(spec.val_fraction_of_rest >= 0.0 && spec.val_fraction_of_rest <= 1.0)) {
    throw std::invalid_argument("val_fraction_of_rest must lie in [0, 1]");
  }
  sort_chronologically(examples);
  const std::size_t n = examples.size();
  std::size_t cut = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(n)));
  if (spec.year_aligned && cut > 0 && cut < n) {
    // nearest index where the fiscal year changes; ties go to the earlier one
    std::size_t down = cut, up = cut;
    while (down > 0 && examples[down - 1].fiscal_year == examples[down].fiscal_year) --down;
    while (up < n && examples[up - 1].fiscal_year == examples[up].fiscal_year) ++up;
    if (down == 0) cut = up;
    else if (up == n) cut = down;
    else cut = (cut - down <= up - cut) ? down : up;
  }
  const std::size_t rest = n - cut;
  const std::size_t n_val = static_cast<std::size_t>(std::floor(spec.val_fraction_of_rest * static_cast<double>(rest)));
  Splits s;
  s.train = range(0, cut);
  s.val = range(cut, cut + n_val);
  s.tests.push_back({"test", range(cut + n_val, n)});
  require_nonempty(s.train, "train");
  require_nonempty(s.val, "val");
  require_nonempty(s.tests[0].indices, "test");
  return s;
}

Splits make_year_splits(std::vector<Example>& examples, const YearSplitSpec& spec) {
  sort_chronologically(examples);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const int y = examples[i].fiscal_year;
    if (y >= spec.train_first && y <= spec.train_last) pool.push_back(i);
  }
  const std::size_t cut =
      static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(pool.size())));
  Splits s;
  s.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cut));
  s.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(cut), pool.end());
  require_nonempty(s.train, "train");
  require_nonempty(s.val, "val");
  for (int year = spec.test_first; year <= spec.test_last; ++year) {
    TestSet t{"test_" + std::to_string(year), {}};
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].fiscal_year == year) t.indices.push_back(i);
    }
    require_nonempty(t.indices, t.label);
    s.tests.push_back(std::move(t));
  }
  return s;
}

void write_split_manifest(const std::filesystem::path& path, std::span<const Example> examples, const Splits& splits) {
  std::vector<std::string> label(examples.size());
  for (auto i : splits.train) label.at(i) = "train";
  for (auto i : splits.val) label.at(i) = "val";
  for (const auto& t : splits.tests) {
    for (auto i : t.indices) label.at(i) = t.label;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "doc_id,split\n";
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!label[i].empty()) os << examples[i].doc_id << ',' << label[i] << '\n';
  }
}

Scaler Scaler::fit(std::span<const double> train_targets, bool enabled) {
  Scaler s;
  if (!enabled) return s;
  if (train_targets.empty()) throw std::invalid_argument("scaler: no training targets");
  const auto [lo, hi] = std::minmax_element(train_targets.begin(), train_targets.end());
  if (!(*hi > *lo)) throw std::invalid_argument("scaler: all training targets are equal");
  s.enabled_ = true;
  s.min_ = *lo;
  s.max_ = *hi;
  return s;
}

}  // namespace fetilda
