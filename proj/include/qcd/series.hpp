#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qcd/numeric.hpp"

namespace qcd {

using Date = std::chrono::year_month_day;

inline std::string to_iso(Date d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

/// Parses a date using a strftime-like pattern made of %Y, %m, %d and
/// literal characters. Returns nullopt on any mismatch or invalid date.
inline std::optional<Date> parse_date(std::string_view text, std::string_view format = "%Y-%m-%d") {
  int year = 0;
  unsigned month = 0, day = 0;
  std::size_t pos = 0;
  auto read_int = [&](std::size_t max_digits, long& out) {
    std::size_t start = pos;
    out = 0;
    while (pos < text.size() && pos - start < max_digits && text[pos] >= '0' && text[pos] <= '9') {
      out = out * 10 + (text[pos] - '0');
      ++pos;
    }
    return pos > start;
  };
  for (std::size_t i = 0; i < format.size(); ++i) {
    if (format[i] == '%' && i + 1 < format.size()) {
      long v = 0;
      const char spec = format[++i];
      if (spec == 'Y') {
        if (!read_int(4, v)) return std::nullopt;
        year = static_cast<int>(v);
      } else if (spec == 'm') {
        if (!read_int(2, v)) return std::nullopt;
        month = static_cast<unsigned>(v);
      } else if (spec == 'd') {
        if (!read_int(2, v)) return std::nullopt;
        day = static_cast<unsigned>(v);
      } else {
        return std::nullopt;
      }
    } else {
      if (pos >= text.size() || text[pos] != format[i]) return std::nullopt;
      ++pos;
    }
  }
  if (pos != text.size()) return std::nullopt;
  Date d{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!d.ok()) return std::nullopt;
  return d;
}

/// Column mapping for price CSV files. Dates are ISO-8601 unless
/// `date_format` names an alternate pattern (accepted in addition to ISO).
struct CsvSchema {
  std::string date_column = "Date";
  std::string close_column = "Close";
  std::string date_format;  // e.g. "%m/%d/%Y"; empty means ISO only
  char delimiter = ',';
  bool skip_invalid_rows = false;
};

/// Daily closing prices. Dates strictly increasing, prices finite and
/// positive, at least two observations.
class PriceSeries {
 public:
  PriceSeries(std::vector<Date> dates, std::vector<double> values, std::string source = {},
              std::vector<std::size_t> rejected_rows = {})
      : dates_(std::move(dates)),
        values_(std::move(values)),
        source_(std::move(source)),
        rejected_rows_(std::move(rejected_rows)) {
    if (dates_.size() != values_.size()) throw DataError("PriceSeries: dates and values differ in length");
    if (values_.size() < 2) throw DataError("PriceSeries: at least 2 observations required");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i]) || values_[i] <= 0.0)
        throw DataError("PriceSeries: price at position " + std::to_string(i) + " is not finite and positive");
      if (i > 0 && !(dates_[i - 1] < dates_[i]))
        throw DataError("PriceSeries: dates not strictly increasing at position " + std::to_string(i));
    }
  }

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<const Date> dates() const { return dates_; }
  const std::string& source() const { return source_; }
  // 1-based data-row numbers (header excluded) that were skipped.
  std::span<const std::size_t> rejected_rows() const { return rejected_rows_; }

 private:
  std::vector<Date> dates_;
  std::vector<double> values_;
  std::string source_;
  std::vector<std::size_t> rejected_rows_;
};

/// Price differences d_i = X_{i+1} - X_i. `dates()[i]` is the date of the
/// later price, i.e. the day the return is realized. `offset()` locates the
/// first value within the originating return series (non-zero for slices).
class ReturnSeries {
 public:
  ReturnSeries() = default;
  explicit ReturnSeries(std::vector<double> values, std::vector<Date> dates = {}, std::string origin = {},
                        std::size_t offset = 0)
      : values_(std::move(values)), dates_(std::move(dates)), origin_(std::move(origin)), offset_(offset) {
    if (!dates_.empty() && dates_.size() != values_.size())
      throw std::invalid_argument("ReturnSeries: dates and values differ in length");
    for (double v : values_)
      if (!std::isfinite(v)) throw std::invalid_argument("ReturnSeries: values must be finite");
  }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  std::span<const Date> dates() const { return dates_; }
  bool has_dates() const { return !dates_.empty(); }
  const std::string& origin() const { return origin_; }
  std::size_t offset() const { return offset_; }

  /// Half-open sub-range [begin, end) keeping origin bookkeeping.
  ReturnSeries slice(std::size_t begin, std::size_t end) const {
    require(begin <= end && end <= size(), "ReturnSeries::slice: range out of bounds");
    std::vector<double> v(values_.begin() + begin, values_.begin() + end);
    std::vector<Date> d;
    if (has_dates()) d.assign(dates_.begin() + begin, dates_.begin() + end);
    return ReturnSeries(std::move(v), std::move(d), origin_, offset_ + begin);
  }

 private:
  std::vector<double> values_;
  std::vector<Date> dates_;
  std::string origin_;
  std::size_t offset_ = 0;
};

/// Half-open index interval [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t width() const { return end - begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

struct MomentEstimate {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t count = 0;
  IndexRange range;
  // Divisor used for the variance; always count - 1 (sample standard deviation).
  std::size_t sd_divisor = 0;
  bool zero_variance = false;
};

// ---------------------------------------------------------------------------
// CSV ingestion

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '"')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '"')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == delim) {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses price CSV text. Rows are sorted by date; duplicate dates and
/// invalid rows are reported by their 1-based data-row number.
inline PriceSeries parse_price_csv(std::istream& in, const CsvSchema& schema, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file (header row required)");
  const auto header = detail::split(line, schema.delimiter);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(source + ": header has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t date_col = column(schema.date_column);
  const std::size_t close_col = column(schema.close_column);

  struct Row {
    Date date;
    double close;
    std::size_t row;
  };
  std::vector<Row> rows;
  std::vector<std::size_t> rejected;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    ++row_number;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, schema.delimiter);
    std::string problem;
    std::optional<Date> date;
    std::optional<double> close;
    if (fields.size() <= std::max(date_col, close_col)) {
      problem = "too few fields";
    } else {
      date = parse_date(fields[date_col]);
      if (!date && !schema.date_format.empty()) date = parse_date(fields[date_col], schema.date_format);
      close = detail::parse_double(fields[close_col]);
      if (!date) problem = "unparsable date '" + fields[date_col] + "'";
      else if (!close || !std::isfinite(*close) || *close <= 0.0)
        problem = "price '" + fields[close_col] + "' is not a positive number";
    }
    if (!problem.empty()) {
      if (!schema.skip_invalid_rows)
        throw DataError(source + ": row " + std::to_string(row_number) + ": " + problem);
      rejected.push_back(row_number);
      continue;
    }
    rows.push_back({*date, *close, row_number});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].date == rows[i - 1].date)
      throw DataError(source + ": row " + std::to_string(rows[i].row) + ": duplicate date " + to_iso(rows[i].date) +
                      " (also on row " + std::to_string(rows[i - 1].row) + ")");
  }
  if (rows.size() < 2)
    throw DataError(source + ": fewer than 2 valid rows (" + std::to_string(rows.size()) + ")");
  std::vector<Date> dates;
  std::vector<double> values;
  for (const auto& r : rows) {
    dates.push_back(r.date);
    values.push_back(r.close);
  }
  return PriceSeries(std::move(dates), std::move(values), source, std::move(rejected));
}

inline PriceSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_price_csv(in, schema, path.string());
}

// ---------------------------------------------------------------------------
// Returns and moments

inline ReturnSeries to_returns(const PriceSeries& series) {
  const auto x = series.values();
  const auto dates = series.dates();
  std::vector<double> d(x.size() - 1);
  std::vector<Date> when(x.size() - 1);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    d[i] = x[i + 1] - x[i];
    when[i] = dates[i + 1];
  }
  return ReturnSeries(std::move(d), std::move(when), series.source(), 0);
}

inline MomentEstimate estimate_moments(const ReturnSeries& returns, IndexRange range) {
  require(range.begin <= range.end && range.end <= returns.size(), "estimate_moments: range out of bounds");
  require(range.width() >= 2, "estimate_moments: range width must be at least 2");
  const auto s = summarize(returns.values().subspan(range.begin, range.width()));
  MomentEstimate m;
  m.mean = s.mean;
  m.sd = s.sd;
  m.count = s.count;
  m.range = range;
  m.sd_divisor = s.count - 1;
  m.zero_variance = (s.sd == 0.0);
  return m;
}

inline MomentEstimate estimate_moments(const ReturnSeries& returns) {
  return estimate_moments(returns, {0, returns.size()});
}

/// (x - mean) / sd, elementwise.
inline ReturnSeries standardize(const ReturnSeries& returns, const MomentEstimate& moments) {
  if (!(moments.sd > 0.0)) throw std::invalid_argument("standardize: standard deviation must be positive");
  std::vector<double> out(returns.size());
  const auto v = returns.values();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - moments.mean) / moments.sd;
  return ReturnSeries(std::move(out), std::vector<Date>(returns.dates().begin(), returns.dates().end()),
                      returns.origin(), returns.offset());
}

// ---------------------------------------------------------------------------
// Exploratory diagnostics

struct AcfResult {
  std::vector<double> rho;  // lags 0..max_lag
  double band = 0.0;        // 1.96 / sqrt(n)
  std::size_t count = 0;
};

inline AcfResult acf(const ReturnSeries& returns, std::size_t max_lag) {
  const auto x = returns.values();
  require(max_lag >= 1 && x.size() > max_lag, "acf: need series length > max_lag >= 1");
  const double mean = pairwise_sum(x) / static_cast<double>(x.size());
  std::vector<double> c(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) c[t] = (x[t] - mean) * (x[t] - mean);
  const double c0 = pairwise_sum(c);
  if (!(c0 > 0.0)) throw std::invalid_argument("acf: series has zero variance");
  AcfResult r;
  r.count = x.size();
  r.band = 1.96 / std::sqrt(static_cast<double>(x.size()));
  r.rho.resize(max_lag + 1);
  r.rho[0] = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    c.resize(x.size() - k);
    for (std::size_t t = 0; t + k < x.size(); ++t) c[t] = (x[t] - mean) * (x[t + k] - mean);
    r.rho[k] = pairwise_sum(c) / c0;
  }
  return r;
}

/// Equal-width bins over [min, max]; bin i covers (edges[i], edges[i+1]]
/// except the first, which is closed on the left.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

inline Histogram histogram(std::span<const double> x, std::size_t bins) {
  require(bins >= 1, "histogram: bins must be >= 1");
  require(!x.empty(), "histogram: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  double lo = *lo_it, hi = *hi_it;
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : x) {
    // first edge index strictly >= v gives the right-closed bin
    auto it = std::lower_bound(h.edges.begin() + 1, h.edges.end(), v);
    std::size_t bin = static_cast<std::size_t>(it - (h.edges.begin() + 1));
    h.counts[std::min(bin, bins - 1)] += 1;
  }
  return h;
}

struct QqPoint {
  double empirical;    // sorted centered/scaled observation
  double theoretical;  // standard normal quantile at (i - 0.5) / n
};

inline std::vector<QqPoint> qq_points(std::span<const double> x) {
  require(!x.empty(), "qq_points: empty input");
  const auto s = summarize(x);
  std::vector<double> z(x.begin(), x.end());
  const double scale = s.sd > 0.0 ? s.sd : 1.0;
  for (double& v : z) v = (v - s.mean) / scale;
  std::sort(z.begin(), z.end());
  std::vector<QqPoint> out(z.size());
  const double n = static_cast<double>(z.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    out[i] = {z[i], normal_quantile((static_cast<double>(i) + 0.5) / n)};
  return out;
}

struct LagScatter {
  std::size_t lag = 0;
  std::vector<std::pair<double, double>> points;  // (x_t, x_{t+lag})
};

struct DiagnosticBundle {
  MomentEstimate moments;
  Histogram histogram;
  std::vector<QqPoint> qq;
  std::vector<LagScatter> lag_plots;
  std::optional<AcfResult> acf;  // absent for zero-variance input
};

inline DiagnosticBundle diagnostics(const ReturnSeries& returns, std::size_t bins, std::span<const std::size_t> lags,
                                    std::size_t max_acf_lag = 20) {
  require(returns.size() >= 2, "diagnostics: need at least 2 observations");
  DiagnosticBundle b;
  b.moments = estimate_moments(returns);
  b.histogram = histogram(returns.values(), bins);
  b.qq = qq_points(returns.values());
  const auto x = returns.values();
  for (std::size_t k : lags) {
    require(k >= 1, "diagnostics: lags must be >= 1");
    if (k >= x.size())
      throw std::invalid_argument("diagnostics: lag " + std::to_string(k) + " >= series length " +
                                  std::to_string(x.size()));
    LagScatter s;
    s.lag = k;
    s.points.reserve(x.size() - k);
    for (std::size_t t = 0; t + k < x.size(); ++t) s.points.emplace_back(x[t], x[t + k]);
    b.lag_plots.push_back(std::move(s));
  }
  if (!b.moments.zero_variance) {
    std::size_t max_lag = max_acf_lag;
    for (std::size_t k : lags) max_lag = std::max(max_lag, k);
    max_lag = std::min(max_lag, x.size() - 1);
    b.acf = acf(returns, max_lag);
  }
  return b;
}

}  // namespace qcd
