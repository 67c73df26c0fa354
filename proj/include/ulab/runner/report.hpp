#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/evalsuite/metrics.hpp"
#include "ulab/runner/manifest.hpp"

// Report tables. Columns: label, UE, UT, VerbMem, KnowMem, PrivLeak; metrics
// are printed with four decimals and an empty PrivLeak is "NA" in CSV and
// null in JSON.

namespace ulab::runner {

inline std::string fmt4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

/// Shortest "%g" form, used for ratios in file names and tables.
inline std::string fmt_g(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& x) { return x ? fmt4(*x) : "NA"; }

/// CSV cells never need quoting here; commas and newlines are replaced.
inline std::string csv_safe(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
  return s;
}

struct NamedReport {
  std::string label;
  eval::EvalReport report;
};

inline json report_to_json(const eval::EvalReport& r) {
  json j = {{"UE", r.ue}, {"UT", r.ut}, {"VerbMem", r.verbmem}, {"KnowMem", r.knowmem}};
  j["PrivLeak"] = r.privleak ? json(*r.privleak) : json(nullptr);
  return j;
}

inline eval::EvalReport report_from_json(const json& j) {
  try {
    eval::EvalReport r;
    r.ue = j.at("UE").get<double>();
    r.ut = j.at("UT").get<double>();
    r.verbmem = j.at("VerbMem").get<double>();
    r.knowmem = j.at("KnowMem").get<double>();
    if (!j.at("PrivLeak").is_null()) r.privleak = j.at("PrivLeak").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed eval report: ") + e.what());
  }
}

inline const char* kReportHeader = "label,UE,UT,VerbMem,KnowMem,PrivLeak";

inline std::string reports_csv(const std::vector<NamedReport>& rs) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& [label, r] : rs)
    out += csv_safe(label) + "," + fmt4(r.ue) + "," + fmt4(r.ut) + "," + fmt4(r.verbmem) + "," + fmt4(r.knowmem) + "," +
           fmt_opt(r.privleak) + "\n";
  return out;
}

inline std::string reports_json(const std::vector<NamedReport>& rs) {
  json a = json::array();
  for (const auto& [label, r] : rs) {
    json j = report_to_json(r);
    j["label"] = label;
    a.push_back(std::move(j));
  }
  return a.dump(2) + "\n";
}

enum class ReportFormat { csv, json };

inline ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw ConfigError("unknown report format '" + s + "' (expected csv or json)");
}

inline void emit_report(const std::vector<NamedReport>& rs, ReportFormat f, const std::filesystem::path& path) {
  write_text_atomic(path, f == ReportFormat::csv ? reports_csv(rs) : reports_json(rs));
}

}  // namespace ulab::runner
