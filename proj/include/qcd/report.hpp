#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace qcd {

using ordered_json = nlohmann::ordered_json;

/// One numeric result. Monte Carlo values carry a standard error and the
/// replication count.
struct ResultValue {
  std::string name;
  double value = 0.0;
  std::string unit;
  std::optional<double> std_error;
  std::optional<std::size_t> replications;
};

struct ResultTable {
  std::string name;
  std::vector<std::string> columns;  // "name [unit]"
  std::vector<std::vector<std::string>> rows;
};

/// Plot-ready CSV emitted next to the report.
struct Artifact {
  std::string name;
  std::string csv;
};

struct Report {
  std::string command;
  std::string command_line;
  std::string config_hash;
  std::uint64_t seed = 0;
  ordered_json config;
  std::vector<ResultValue> results;
  std::vector<ResultTable> tables;
  std::vector<std::string> warnings;
  std::vector<std::string> assumptions;
  std::vector<Artifact> artifacts;

  void add(std::string name, double value, std::string unit, std::optional<double> se = std::nullopt,
           std::optional<std::size_t> reps = std::nullopt) {
    results.push_back({std::move(name), value, std::move(unit), se, reps});
  }
  const ResultValue* find(const std::string& name) const {
    for (const auto& r : results)
      if (r.name == name) return &r;
    return nullptr;
  }
};

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

/// Deterministic report body: everything except volatile metadata.
inline ordered_json report_body(const Report& r) {
  ordered_json j;
  j["command"] = r.command;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["config"] = r.config;
  auto& res = j["results"] = ordered_json::array();
  for (const auto& v : r.results) {
    ordered_json e{{"name", v.name}, {"value", v.value}, {"unit", v.unit}};
    if (v.std_error) e["std_error"] = *v.std_error;
    if (v.replications) e["replications"] = *v.replications;
    res.push_back(std::move(e));
  }
  auto& tabs = j["tables"] = ordered_json::array();
  for (const auto& t : r.tables) tabs.push_back({{"name", t.name}, {"columns", t.columns}, {"rows", t.rows}});
  j["warnings"] = r.warnings;
  j["assumptions"] = r.assumptions;
  auto& arts = j["artifacts"] = ordered_json::array();
  for (const auto& a : r.artifacts) arts.push_back(a.name);
  return j;
}

/// Human-readable key = value rendering.
inline std::string to_text(const Report& r) {
  std::ostringstream out;
  out.precision(10);
  out << "command = " << r.command << '\n';
  out << "config_hash = " << r.config_hash << '\n';
  out << "seed = " << r.seed << '\n';
  for (const auto& v : r.results) {
    out << v.name << " = " << v.value;
    if (v.std_error) out << " +/- " << *v.std_error;
    if (!v.unit.empty()) out << " [" << v.unit << ']';
    if (v.replications) out << " (" << *v.replications << " replications)";
    out << '\n';
  }
  for (const auto& t : r.tables) {
    out << "\n[" << t.name << "]\n";
    for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "\t" : "") << t.columns[i];
    out << '\n';
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
      out << '\n';
    }
  }
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
  for (const auto& a : r.assumptions) out << "assumption: " << a << '\n';
  return out.str();
}

inline std::string report_stem(const Report& r) { return r.command + "-" + r.config_hash; }

/// Writes <command>-<hash>.report.json plus one CSV per artifact. Returns
/// the paths written.
inline std::vector<std::filesystem::path> emit(const Report& r, const std::filesystem::path& outdir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(outdir, ec);
  if (ec || !fs::is_directory(outdir))
    throw std::runtime_error("cannot create output directory '" + outdir.string() + "'");
  std::vector<fs::path> written;
  auto write = [&](const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    out << content;
    out.close();
    if (!out) throw std::runtime_error("failed writing '" + p.string() + "'");
    written.push_back(p);
  };
  const std::string stem = report_stem(r);
  write(outdir / (stem + ".report.json"), report_body(r).dump(2) + "\n");
  for (const auto& a : r.artifacts) write(outdir / (stem + "." + a.name + ".csv"), a.csv);
  return written;
}

}  // namespace qcd
