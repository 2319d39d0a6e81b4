#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qcd/calib.hpp"
#include "qcd/detect.hpp"
#include "qcd/models.hpp"
#include "qcd/offline.hpp"
#include "qcd/renewal.hpp"
#include "qcd/report.hpp"
#include "qcd/series.hpp"

namespace qcd::cli {

/// Bad command line or configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"returns", "diagnose", "segment", "constants",
                                          "calibrate", "detect", "simulate"};
  return c;
}

struct RunConfig {
  std::string command;
  std::string input;
  std::string increments;
  CsvSchema schema;
  std::string schema_text;
  std::string out = "out";
  std::uint64_t seed = 1;
  std::size_t replications = 10000;
  double gamma = 100.0;
  std::optional<double> threshold_a;
  std::optional<double> threshold_h;
  std::optional<double> q;
  std::optional<double> delta;
  double mu_pre = 0.0, sigma_pre = 1.0, mu_post = 1.0, sigma_post = 1.0;
  std::string kind = "both";
  std::size_t horizon = 1000;
  std::optional<std::size_t> truncation;
  double tolerance = 0.02;
  std::size_t max_iterations = 60;
  std::size_t nu = 10000;
  std::size_t min_segment = 30;
  std::optional<double> bd_threshold;
  double alpha = 0.05;
  std::size_t bins = 30;
  std::vector<std::size_t> lags{1, 2, 3, 11, 13};
  std::size_t max_lag = 20;
  std::string split;         // ISO date or index; default: BD estimate
  std::string change_point;  // ISO date or index; default: split

  /// Effective configuration as canonical JSON (without the output path).
  ordered_json to_json() const {
    ordered_json j;
    j["command"] = command;
    j["input"] = input;
    j["increments"] = increments;
    j["schema"] = schema_text;
    j["seed"] = seed;
    j["replications"] = replications;
    j["gamma"] = gamma;
    j["threshold-a"] = threshold_a ? ordered_json(*threshold_a) : ordered_json(nullptr);
    j["threshold-h"] = threshold_h ? ordered_json(*threshold_h) : ordered_json(nullptr);
    j["q"] = q ? ordered_json(*q) : ordered_json(nullptr);
    j["delta"] = delta ? ordered_json(*delta) : ordered_json(nullptr);
    j["mu-pre"] = mu_pre;
    j["sigma-pre"] = sigma_pre;
    j["mu-post"] = mu_post;
    j["sigma-post"] = sigma_post;
    j["kind"] = kind;
    j["horizon"] = horizon;
    j["truncation"] = truncation ? ordered_json(*truncation) : ordered_json(nullptr);
    j["tolerance"] = tolerance;
    j["max-iterations"] = max_iterations;
    j["nu"] = nu;
    j["min-segment"] = min_segment;
    j["bd-threshold"] = bd_threshold ? ordered_json(*bd_threshold) : ordered_json(nullptr);
    j["alpha"] = alpha;
    j["bins"] = bins;
    j["lags"] = lags;
    j["max-lag"] = max_lag;
    j["split"] = split;
    j["change-point"] = change_point;
    return j;
  }

  std::string hash() const { return hex16(fnv1a(to_json().dump())); }
};

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(d)) throw UsageError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw UsageError(key + ": expected a nonnegative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw UsageError(key + ": integer out of range: '" + v + "'");
  }
}

inline CsvSchema parse_schema(const std::string& key, const std::string& text) {
  CsvSchema s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError(key + ": expected name=value pairs, got '" + item + "'");
    const std::string k = item.substr(0, eq), v = item.substr(eq + 1);
    if (k == "date") s.date_column = v;
    else if (k == "close") s.close_column = v;
    else if (k == "format") s.date_format = v;
    else if (k == "delimiter") {
      if (v.size() != 1) throw UsageError(key + ": delimiter must be a single character");
      s.delimiter = v[0];
    } else if (k == "skip-invalid") s.skip_invalid_rows = (v == "true" || v == "1");
    else throw UsageError(key + ": unknown schema field '" + k + "'");
  }
  return s;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto positive = [](const std::string& k, double v) {
      if (!(v > 0.0)) throw UsageError(k + ": must be positive");
      return v;
    };
    auto count = [](const std::string& k, std::uint64_t v) {
      if (v < 1) throw UsageError(k + ": must be >= 1");
      return static_cast<std::size_t>(v);
    };
    t["command"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      if (std::find(commands().begin(), commands().end(), v) == commands().end())
        throw UsageError(k + ": unknown command '" + v + "'");
      if (!c.command.empty() && c.command != v)
        throw UsageError(k + ": conflicting commands '" + c.command + "' and '" + v + "'");
      c.command = v;
    };
    t["input"] = [](RunConfig& c, const std::string&, const std::string& v) { c.input = v; };
    t["increments"] = [](RunConfig& c, const std::string&, const std::string& v) { c.increments = v; };
    t["schema"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.schema = parse_schema(k, v);
      c.schema_text = v;
    };
    t["out"] = [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; };
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_uint(k, v); };
    t["replications"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.replications = count(k, to_uint(k, v));
    };
    t["gamma"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.gamma = to_double(k, v);
      if (!(c.gamma > 1.0)) throw UsageError(k + ": must exceed 1");
    };
    t["threshold-a"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.threshold_a = positive(k, to_double(k, v));
    };
    t["threshold-h"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.threshold_h = positive(k, to_double(k, v));
    };
    t["q"] = [=](RunConfig& c, const std::string& k, const std::string& v) { c.q = positive(k, to_double(k, v)); };
    t["delta"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.delta = to_double(k, v); };
    t["mu-pre"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.mu_pre = to_double(k, v); };
    t["sigma-pre"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.sigma_pre = positive(k, to_double(k, v));
    };
    t["mu-post"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.mu_post = to_double(k, v); };
    t["sigma-post"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.sigma_post = positive(k, to_double(k, v));
    };
    t["kind"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      if (v != "cusum" && v != "sr" && v != "both") throw UsageError(k + ": expected cusum, sr or both");
      c.kind = v;
    };
    t["horizon"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.horizon = static_cast<std::size_t>(to_uint(k, v));
      if (c.horizon < 2) throw UsageError(k + ": must be >= 2");
    };
    t["truncation"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.truncation = count(k, to_uint(k, v));
    };
    t["tolerance"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.tolerance = positive(k, to_double(k, v));
    };
    t["max-iterations"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.max_iterations = count(k, to_uint(k, v));
    };
    t["nu"] = [=](RunConfig& c, const std::string& k, const std::string& v) { c.nu = count(k, to_uint(k, v)); };
    t["min-segment"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.min_segment = static_cast<std::size_t>(to_uint(k, v));
      if (c.min_segment < 2) throw UsageError(k + ": must be >= 2");
    };
    t["bd-threshold"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.bd_threshold = positive(k, to_double(k, v));
    };
    t["alpha"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.alpha = to_double(k, v);
      if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw UsageError(k + ": must lie in (0, 1)");
    };
    t["bins"] = [=](RunConfig& c, const std::string& k, const std::string& v) { c.bins = count(k, to_uint(k, v)); };
    t["lags"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.lags.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) c.lags.push_back(count(k, to_uint(k, item)));
    };
    t["max-lag"] = [=](RunConfig& c, const std::string& k, const std::string& v) {
      c.max_lag = count(k, to_uint(k, v));
    };
    t["split"] = [](RunConfig& c, const std::string&, const std::string& v) { c.split = v; };
    t["change-point"] = [](RunConfig& c, const std::string&, const std::string& v) { c.change_point = v; };
    return t;
  }();
  return table;
}

inline std::string json_scalar(const std::string& key, const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned() || v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_float()) {
    std::ostringstream s;
    s.precision(17);
    s << v.get<double>();
    return s.str();
  }
  if (v.is_array()) {
    std::string joined;
    for (const auto& e : v) joined += (joined.empty() ? "" : ",") + json_scalar(key, e);
    return joined;
  }
  throw UsageError("config key '" + key + "': unsupported value type");
}

inline void validate(const RunConfig& c) {
  if (c.command.empty()) throw UsageError("command: missing (one of returns, diagnose, segment, constants, "
                                          "calibrate, detect, simulate)");
  const bool needs_prices = c.command == "returns" || c.command == "diagnose" || c.command == "segment";
  if (needs_prices && c.input.empty()) throw UsageError("input: required by '" + c.command + "'");
  if (c.command == "detect" && c.input.empty() && c.increments.empty())
    throw UsageError("input: 'detect' needs --input (prices) or --increments");
  for (const auto* path : {&c.input, &c.increments})
    if (!path->empty() && !std::filesystem::exists(*path)) throw UsageError("input: file '" + *path + "' not found");
  if (c.q.has_value() != c.delta.has_value()) throw UsageError("q: --q and --delta must be given together");
  if (c.command == "detect") {
    if (c.kind != "sr" && !c.threshold_h) throw UsageError("threshold-h: required by 'detect' for the CUSUM chart");
    if (c.kind != "cusum" && !c.threshold_a) throw UsageError("threshold-a: required by 'detect' for the SR procedure");
  }
}

}  // namespace detail

/// Flags override config-file values. The config file is a JSON object keyed
/// by flag names without leading dashes.
inline RunConfig parse_config(const std::vector<std::string>& args) {
  CLI::App app{"Quickest change-point detection toolkit", "qcd"};
  app.allow_extras(false);
  std::string positional_command, config_path;
  std::map<std::string, std::string> flag_values;
  app.add_option("subcommand", positional_command, "returns|diagnose|segment|constants|calibrate|detect|simulate");
  app.add_option("--config", config_path, "JSON config file");
  std::map<std::string, CLI::Option*> options;
  for (const auto& [key, setter] : detail::setters()) options[key] = app.add_option("--" + key, flag_values[key]);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    throw UsageError(app.help());
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  RunConfig c;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw UsageError("config: cannot open '" + config_path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config: invalid JSON in '" + config_path + "': " + e.what());
    }
    if (!j.is_object()) throw UsageError("config: top level must be an object");
    for (const auto& [key, value] : j.items()) {
      const auto it = detail::setters().find(key);
      if (it == detail::setters().end()) throw UsageError("config key '" + key + "': unknown key");
      if (value.is_null()) continue;
      try {
        it->second(c, key, detail::json_scalar(key, value));
      } catch (const UsageError& e) {
        throw UsageError(std::string("config key ") + e.what());
      }
    }
  }
  // the command from the file may be replaced by the command line
  std::string cli_command;
  if (!positional_command.empty()) cli_command = positional_command;
  if (options["command"]->count() > 0) {
    if (!cli_command.empty() && cli_command != flag_values["command"])
      throw UsageError("command: conflicting commands '" + cli_command + "' and '" + flag_values["command"] + "'");
    cli_command = flag_values["command"];
  }
  if (!cli_command.empty()) {
    c.command.clear();
    detail::setters().at("command")(c, "command", cli_command);
  }
  for (const auto& [key, opt] : options) {
    if (key == "command" || opt->count() == 0) continue;
    try {
      detail::setters().at(key)(c, key, flag_values[key]);
    } catch (const UsageError& e) {
      throw UsageError(std::string("--") + e.what());
    }
  }
  detail::validate(c);
  return c;
}

inline RunConfig parse_config(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return parse_config(args);
}

// ---------------------------------------------------------------------------
// Command implementations

namespace detail {

inline std::string fmt(double v, int precision = 10) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

inline std::string date_or_empty(const ReturnSeries& r, std::size_t i) {
  return r.has_dates() && i < r.size() ? to_iso(r.dates()[i]) : std::string();
}

/// Resolves an ISO date or an integer into a split position (number of
/// returns before the change). A date names the last pre-change return.
inline std::size_t resolve_split(const std::string& key, const std::string& text, const ReturnSeries& r) {
  if (auto d = parse_date(text)) {
    if (!r.has_dates()) throw UsageError(key + ": dates unavailable for this series");
    const auto dates = r.dates();
    return static_cast<std::size_t>(std::upper_bound(dates.begin(), dates.end(), *d) - dates.begin());
  }
  const auto n = to_uint(key, text);
  if (n < 2 || n + 2 > r.size()) throw UsageError(key + ": split index out of range");
  return static_cast<std::size_t>(n);
}

inline ReturnSeries load_returns(const RunConfig& c) { return to_returns(load_csv(c.input, c.schema)); }

inline std::vector<double> load_increments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<double> v;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto t = qcd::detail::trim(line);
    if (t.empty()) continue;
    const auto field = qcd::detail::split(t, ',').back();
    const auto d = qcd::detail::parse_double(field);
    if (!d) {
      if (row == 1) continue;  // header
      throw DataError(path + ": row " + std::to_string(row) + ": not a number: '" + field + "'");
    }
    v.push_back(*d);
  }
  if (v.empty()) throw DataError(path + ": no increments");
  return v;
}

inline std::size_t default_split(const RunConfig& c, const ReturnSeries& r) {
  if (!c.split.empty()) return resolve_split("split", c.split, r);
  return bd_estimate(r).index;
}

inline EstimationPolicy policy_of(const RunConfig& c) {
  EstimationPolicy p;
  p.series_truncation = c.truncation;
  p.replications = c.replications;
  p.horizon = c.horizon;
  p.seed = c.seed;
  return p;
}

inline CalibrationSpec spec_of(const RunConfig& c) {
  CalibrationSpec s;
  s.gamma = c.gamma;
  s.replications = c.replications;
  s.seed = c.seed;
  s.relative_tolerance = c.tolerance;
  s.max_iterations = c.max_iterations;
  s.nu_stationary = c.nu;
  return s;
}

/// Increment source for simulation commands plus the Gaussian model whose
/// LLR it equals (used for renewal constants).
struct SimulationModel {
  IncrementSource source;
  GaussianChangeModel llr_model;
  std::string description;
};

inline SimulationModel simulation_model(const RunConfig& c, Report& report) {
  if (!c.input.empty()) {
    const auto r = load_returns(c);
    const std::size_t n = default_split(c, r);
    const auto pre = estimate_moments(r, {0, n});
    const auto post = estimate_moments(r, {n, r.size()});
    const auto src = fitted_score_source(pre, post);
    report.add("fit_split_index", static_cast<double>(n), "returns");
    report.add("fit_mu_pre", pre.mean, "currency");
    report.add("fit_sigma_pre", pre.sd, "currency");
    report.add("fit_mu_post", post.mean, "currency");
    report.add("fit_sigma_post", post.sd, "currency");
    report.add("score_q", src.params.q, "1");
    report.add("score_delta", src.params.delta, "1");
    report.add("score_c1", src.params.c1, "1");
    report.add("score_c2", src.params.c2, "1");
    report.add("score_c3", src.params.c3, "1");
    report.assumptions.push_back("Gaussian pre/post-change returns with moments fitted around the split; "
                                 "sample sd uses divisor n-1");
    return {src, standardized_model(src.params), "score fitted from " + c.input};
  }
  if (c.q) {
    const auto p = design_coefficients(*c.q, *c.delta);
    const auto model = standardized_model(p);
    GaussianScoreSource src{model, 0.0, 1.0, p};
    report.add("score_c1", p.c1, "1");
    report.add("score_c2", p.c2, "1");
    report.add("score_c3", p.c3, "1");
    return {src, model, "linear-quadratic score, standardized Gaussian data"};
  }
  GaussianChangeModel m(c.mu_pre, c.sigma_pre, c.mu_post, c.sigma_post);
  return {GaussianLlrSource{m}, m, "exact Gaussian log-likelihood ratio"};
}

inline std::vector<DetectorKind> kinds_of(const RunConfig& c) {
  if (c.kind == "cusum") return {DetectorKind::cusum};
  if (c.kind == "sr") return {DetectorKind::sr};
  return {DetectorKind::cusum, DetectorKind::sr};
}

inline void add_estimate(Report& r, const std::string& name, const PerformanceEstimate& e) {
  r.add(name, e.value, "observations", e.std_error, e.replications);
  if (e.cap_hits > 0)
    r.warnings.push_back(name + ": " + std::to_string(e.cap_hits) + " runs hit the cap of " + std::to_string(e.cap));
}

inline void add_estimate(Report& r, const std::string& name, const Estimate& e, const std::string& unit) {
  if (e.replications > 0) r.add(name, e.value, unit, e.std_error, e.replications);
  else r.add(name, e.value, unit);
}

inline void cmd_returns(const RunConfig& c, Report& report) {
  const auto prices = load_csv(c.input, c.schema);
  const auto r = to_returns(prices);
  report.add("prices", static_cast<double>(prices.size()), "observations");
  report.add("returns", static_cast<double>(r.size()), "observations");
  report.tables.push_back({"coverage", {"first_date", "last_date"},
                           {{to_iso(prices.dates().front()), to_iso(prices.dates().back())}}});
  if (!prices.rejected_rows().empty())
    report.warnings.push_back(std::to_string(prices.rejected_rows().size()) + " invalid rows skipped");
  std::ostringstream csv;
  csv.precision(17);
  csv << "index,date,return\n";
  for (std::size_t i = 0; i < r.size(); ++i) csv << (i + 1) << ',' << date_or_empty(r, i) << ',' << r[i] << '\n';
  report.artifacts.push_back({"returns", csv.str()});
}

inline void cmd_diagnose(const RunConfig& c, Report& report) {
  const auto r = load_returns(c);
  std::vector<std::pair<std::string, ReturnSeries>> parts{{"all", r}};
  if (!c.split.empty()) {
    const std::size_t n = resolve_split("split", c.split, r);
    parts.emplace_back("pre", r.slice(0, n));
    parts.emplace_back("post", r.slice(n, r.size()));
  }
  ResultTable moments{"moments", {"part", "count", "mean [currency]", "sd [currency]", "sd_divisor"}, {}};
  for (const auto& [name, part] : parts) {
    const auto b = diagnostics(part, c.bins, c.lags, c.max_lag);
    moments.rows.push_back({name, std::to_string(b.moments.count), fmt(b.moments.mean), fmt(b.moments.sd),
                            std::to_string(b.moments.sd_divisor)});
    if (b.moments.zero_variance) report.warnings.push_back(name + ": zero variance");
    std::ostringstream hist, qq, lag, ac;
    hist.precision(17);
    qq.precision(17);
    lag.precision(17);
    ac.precision(17);
    hist << "bin,left_edge,right_edge,count\n";
    for (std::size_t i = 0; i < b.histogram.counts.size(); ++i)
      hist << i << ',' << b.histogram.edges[i] << ',' << b.histogram.edges[i + 1] << ',' << b.histogram.counts[i]
           << '\n';
    qq << "empirical,theoretical\n";
    for (const auto& p : b.qq) qq << p.empirical << ',' << p.theoretical << '\n';
    lag << "lag,x_t,x_t_plus_lag\n";
    for (const auto& s : b.lag_plots)
      for (const auto& [x0, x1] : s.points) lag << s.lag << ',' << x0 << ',' << x1 << '\n';
    report.artifacts.push_back({name + "_histogram", hist.str()});
    report.artifacts.push_back({name + "_qq", qq.str()});
    report.artifacts.push_back({name + "_lags", lag.str()});
    if (b.acf) {
      ac << "lag,acf,band\n";
      ResultTable sig{name + "_significant_acf_lags", {"lag", "acf"}, {}};
      for (std::size_t k = 0; k < b.acf->rho.size(); ++k) {
        ac << k << ',' << b.acf->rho[k] << ',' << b.acf->band << '\n';
        if (k > 0 && std::abs(b.acf->rho[k]) > b.acf->band) sig.rows.push_back({std::to_string(k), fmt(b.acf->rho[k])});
      }
      report.artifacts.push_back({name + "_acf", ac.str()});
      report.add(name + "_acf_band", b.acf->band, "1");
      report.tables.push_back(std::move(sig));
    }
  }
  report.tables.insert(report.tables.begin(), std::move(moments));
}

inline void cmd_segment(const RunConfig& c, Report& report) {
  const auto r = load_returns(c);
  const auto est = bd_estimate(r);
  report.add("bd_estimate_index", static_cast<double>(est.index), "returns");
  report.add("bd_abs_max", est.trace.abs_max_value, "currency");
  if (r.has_dates())
    report.tables.push_back({"bd_estimate", {"index", "last_pre_change_date", "first_post_change_date"},
                             {{std::to_string(est.index), date_or_empty(r, est.index - 1), date_or_empty(r, est.index)}}});
  if (est.index >= 2) {
    const auto left = bd_estimate(r.slice(0, est.index));
    report.add("left_estimate_index", static_cast<double>(left.index), "returns");
    if (r.has_dates())
      report.tables.push_back({"left_estimate", {"index", "last_pre_change_date"},
                               {{std::to_string(left.index), date_or_empty(r, left.index - 1)}}});
  }
  std::ostringstream trace;
  trace.precision(17);
  trace << "n,date,Y\n";
  for (std::size_t n = 1; n <= est.trace.values.size(); ++n)
    trace << n << ',' << date_or_empty(r, n - 1) << ',' << est.trace.values[n - 1] << '\n';
  report.artifacts.push_back({"bd_trace", trace.str()});

  SegmentOptions opt;
  opt.threshold = c.bd_threshold;
  opt.min_segment = c.min_segment;
  opt.alpha = c.alpha;
  opt.seed = c.seed;
  const auto seg = bd_segment(r, opt);
  if (!c.bd_threshold)
    report.assumptions.push_back("segment thresholds: " + fmt(1.0 - c.alpha, 4) +
                                 " quantile of max |Y| under an iid Gaussian null with the segment's sd");
  ResultTable cps{"change_points", {"index", "last_pre_change_date"}, {}};
  for (auto cp : seg.change_points) cps.rows.push_back({std::to_string(cp), date_or_empty(r, cp - 1)});
  ResultTable segs{"segments", {"begin", "end", "count", "mean [currency]", "sd [currency]"}, {}};
  for (const auto& m : seg.segments)
    segs.rows.push_back({std::to_string(m.range.begin), std::to_string(m.range.end), std::to_string(m.count),
                         fmt(m.mean), fmt(m.sd)});
  ResultTable dec{"decisions", {"begin", "end", "argmax", "max_abs_Y", "threshold", "split", "reason"}, {}};
  for (const auto& d : seg.decisions)
    dec.rows.push_back({std::to_string(d.segment.begin), std::to_string(d.segment.end), std::to_string(d.argmax),
                        fmt(d.statistic), fmt(d.threshold), d.split ? "yes" : "no", d.reason});
  report.tables.push_back(std::move(cps));
  report.tables.push_back(std::move(segs));
  report.tables.push_back(std::move(dec));
}

inline void add_constants(Report& report, const RenewalConstants& k) {
  report.add("I_f", k.i_f, "nats/observation");
  report.add("I_g", k.i_g, "nats/observation");
  add_estimate(report, "zeta", k.zeta, "1");
  add_estimate(report, "varkappa", k.varkappa, "nats");
  add_estimate(report, "beta0", k.beta0, "nats");
  add_estimate(report, "beta_inf", k.beta_inf, "nats");
  add_estimate(report, "C0", k.c0, "nats");
  add_estimate(report, "C_inf", k.c_inf, "nats");
}

inline void cmd_constants(const RunConfig& c, Report& report) {
  const auto sim = simulation_model(c, report);
  const auto k = renewal_constants(sim.llr_model, policy_of(c));
  add_constants(report, k);
  if (c.threshold_h) {
    report.add("arl_approx_cusum", arl_approx(DetectorKind::cusum, *c.threshold_h, k), "observations");
    report.add("sadd_approx_cusum", delay_approx(DelayKind::cusum_sadd, *c.threshold_h, k), "observations");
    report.add("add_inf_approx_cusum", delay_approx(DelayKind::cusum_add_inf, *c.threshold_h, k), "observations");
  }
  if (c.threshold_a) {
    report.add("arl_approx_sr", arl_approx(DetectorKind::sr, *c.threshold_a, k), "observations");
    report.add("sadd_approx_sr", delay_approx(DelayKind::sr_sadd, *c.threshold_a, k), "observations");
    report.add("stadd_approx_sr", delay_approx(DelayKind::sr_stadd, *c.threshold_a, k), "observations");
  }
  report.tables.push_back({"policy", {"truncation", "replications", "horizon", "seed"},
                           {{c.truncation ? std::to_string(*c.truncation) : "auto", std::to_string(c.replications),
                             std::to_string(c.horizon), std::to_string(c.seed)}}});
}

inline void cmd_calibrate(const RunConfig& c, Report& report) {
  const auto sim = simulation_model(c, report);
  const auto spec = spec_of(c);
  ResultTable t{"calibration",
                {"detector", "threshold", "threshold_std_error", "arl [observations]", "arl_std_error",
                 "replications", "cap_hits", "iterations"},
                {}};
  for (auto kind : kinds_of(c)) {
    const DetectorConfig cfg{kind, sim.source};
    const auto sol = solve_threshold(cfg, spec);
    const std::string k = to_string(kind);
    report.add(std::string(kind == DetectorKind::cusum ? "threshold_h" : "threshold_a"), sol.threshold,
               kind == DetectorKind::cusum ? "nats" : "1", sol.threshold_std_error, sol.arl.replications);
    add_estimate(report, "arl_" + k, sol.arl);
    t.rows.push_back({k, fmt(sol.threshold), fmt(sol.threshold_std_error), fmt(sol.arl.value), fmt(sol.arl.std_error),
                      std::to_string(sol.arl.replications), std::to_string(sol.arl.cap_hits),
                      std::to_string(sol.iterations)});
  }
  report.tables.push_back(std::move(t));
  report.assumptions.push_back("ARL target gamma = " + fmt(c.gamma) + ", relative tolerance " + fmt(c.tolerance));
}

inline void cmd_detect(const RunConfig& c, Report& report) {
  std::vector<double> increments;
  IncrementMode mode = IncrementMode::score;
  std::optional<std::size_t> change_point;
  std::optional<ReturnSeries> returns;
  if (!c.increments.empty()) {
    increments = load_increments(c.increments);
    if (!c.change_point.empty()) change_point = static_cast<std::size_t>(to_uint("change-point", c.change_point));
  } else {
    returns = load_returns(c);
    const std::size_t n = default_split(c, *returns);
    const auto pre = estimate_moments(*returns, {0, n});
    const auto post = estimate_moments(*returns, {n, returns->size()});
    const auto src = fitted_score_source(pre, post);
    if (src.params.degenerate()) throw std::invalid_argument("detect: fitted score is identically zero");
    report.add("fit_split_index", static_cast<double>(n), "returns");
    report.add("score_c1", src.params.c1, "1");
    report.add("score_c2", src.params.c2, "1");
    report.add("score_c3", src.params.c3, "1");
    const auto std_returns = standardize(*returns, pre);
    for (double x : std_returns.values()) increments.push_back(linear_quadratic_score(src.params, x));
    change_point = c.change_point.empty() ? n : resolve_split("change-point", c.change_point, *returns);
  }
  report.add("increments", static_cast<double>(increments.size()), "observations");
  ResultTable alarms{"alarms", {"detector", "cycle", "global_time", "stop_time", "statistic", "date"}, {}};
  for (auto kind : kinds_of(c)) {
    const double threshold = kind == DetectorKind::cusum ? *c.threshold_h : *c.threshold_a;
    std::vector<double> values = increments;
    if (kind == DetectorKind::sr)
      for (double& v : values) v = ratio_from_log(v);
    const auto trace = multi_cyclic_run(values, kind, mode, threshold, change_point);
    const std::string k = to_string(kind);
    report.add(k + "_alarms", static_cast<double>(trace.alarms.size()), "count");
    if (trace.alarmed()) report.add(k + "_first_alarm", static_cast<double>(trace.alarms.front().global_time), "observation");
    for (const auto& a : trace.alarms)
      alarms.rows.push_back({k, std::to_string(a.cycle_index), std::to_string(a.global_time),
                             std::to_string(a.stop_time), fmt(a.statistic_at_stop),
                             returns ? date_or_empty(*returns, a.global_time - 1) : std::string()});
    if (trace.true_detection) {
      const auto& a = trace.alarms[*trace.true_detection];
      report.add(k + "_detection_time", static_cast<double>(a.global_time), "observation");
      report.add(k + "_detection_delay", static_cast<double>(*trace.detection_delay()), "observations");
      if (returns)
        report.tables.push_back({k + "_detection", {"change_point", "alarm_time", "alarm_date"},
                                 {{std::to_string(*change_point), std::to_string(a.global_time),
                                   date_or_empty(*returns, a.global_time - 1)}}});
    } else if (change_point) {
      report.warnings.push_back(k + ": no alarm after the change point");
    }
    report.artifacts.push_back({k + "_trace", to_csv(trace)});
  }
  report.tables.push_back(std::move(alarms));
}

inline void cmd_simulate(const RunConfig& c, Report& report) {
  const auto sim = simulation_model(c, report);
  const auto spec = spec_of(c);
  std::optional<RenewalConstants> k;
  try {
    k = renewal_constants(sim.llr_model, policy_of(c));
  } catch (const EstimationError& e) {
    report.warnings.push_back(std::string("renewal constants unavailable: ") + e.what());
  }
  ResultTable t{"comparison",
                {"detector", "threshold", "arl [observations]", "arl_se", "sadd [observations]", "sadd_se",
                 "stadd [observations]", "stadd_se", "arl_approx", "sadd_approx", "stadd_approx"},
                {}};
  std::map<DetectorKind, PerformanceEstimate> stadd;
  for (auto kind : kinds_of(c)) {
    const DetectorConfig cfg{kind, sim.source};
    const auto sol = solve_threshold(cfg, spec);
    const auto sadd = estimate_sadd(cfg, sol.threshold, spec);
    const auto st = estimate_stadd(cfg, sol.threshold, spec);
    stadd[kind] = st;
    const std::string name = to_string(kind);
    add_estimate(report, "arl_" + name, sol.arl);
    add_estimate(report, "sadd_" + name, sadd);
    add_estimate(report, "stadd_" + name, st);
    report.add("threshold_" + name, sol.threshold, kind == DetectorKind::cusum ? "nats" : "1");
    std::string a_arl = "", a_sadd = "", a_stadd = "";
    if (k) {
      a_arl = fmt(arl_approx(kind, sol.threshold, *k));
      a_sadd = fmt(delay_approx(kind == DetectorKind::cusum ? DelayKind::cusum_sadd : DelayKind::sr_sadd,
                                sol.threshold, *k));
      a_stadd = fmt(delay_approx(kind == DetectorKind::cusum ? DelayKind::cusum_add_inf : DelayKind::sr_stadd,
                                 sol.threshold, *k));
    }
    t.rows.push_back({name, fmt(sol.threshold), fmt(sol.arl.value), fmt(sol.arl.std_error), fmt(sadd.value),
                      fmt(sadd.std_error), fmt(st.value), fmt(st.std_error), a_arl, a_sadd, a_stadd});
  }
  if (stadd.size() == 2) {
    const auto& s = stadd[DetectorKind::sr];
    const auto& cu = stadd[DetectorKind::cusum];
    const double combined = std::sqrt(s.std_error * s.std_error + cu.std_error * cu.std_error);
    report.add("stadd_sr_minus_cusum", s.value - cu.value, "observations", combined, s.replications);
    if (s.value > cu.value + 2.0 * combined)
      report.warnings.push_back("STADD(SR) exceeds STADD(CUSUM) by more than 2 combined standard errors");
  }
  report.tables.push_back(std::move(t));
  if (k) add_constants(report, *k);
  report.assumptions.push_back("SADD estimated as the mean run length with the change in effect from the start");
  report.assumptions.push_back("STADD estimated from multi-cyclic runs with the change at nu = " + std::to_string(c.nu));
  report.assumptions.push_back("CUSUM stationary delay approximated by the limiting conditional delay expansion");
}

}  // namespace detail

/// Runs the configured command. Deterministic given the configuration.
inline Report execute(const RunConfig& c) {
  Report report;
  report.command = c.command;
  report.config = c.to_json();
  report.config_hash = c.hash();
  report.seed = c.seed;
  try {
    if (c.command == "returns") detail::cmd_returns(c, report);
    else if (c.command == "diagnose") detail::cmd_diagnose(c, report);
    else if (c.command == "segment") detail::cmd_segment(c, report);
    else if (c.command == "constants") detail::cmd_constants(c, report);
    else if (c.command == "calibrate") detail::cmd_calibrate(c, report);
    else if (c.command == "detect") detail::cmd_detect(c, report);
    else if (c.command == "simulate") detail::cmd_simulate(c, report);
    else throw UsageError("command: unknown command '" + c.command + "'");
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw std::runtime_error(c.command + ": " + e.what());
  }
  return report;
}

/// Full CLI entry point: parse, execute, emit. Returns the exit code
/// (0 success, 1 runtime error, 2 usage error).
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig config;
  try {
    config = parse_config(args);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }
  try {
    const auto report = execute(config);
    const auto files = emit(report, config.out);
    out << to_text(report);
    for (const auto& f : files) out << "wrote " << f.string() << '\n';
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace qcd::cli
