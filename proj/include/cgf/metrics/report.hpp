#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgf/metrics/metrics.hpp"

namespace cgf::metrics {

struct ReportRow {
  std::string label;
  std::optional<ReducedMetrics> reduced;
  std::optional<FullMetrics> full;
};

inline nlohmann::json to_json(const ReportRow& r) {
  nlohmann::json j{{"image", r.label}};
  if (r.reduced) {
    j["psnr"] = r.reduced->psnr;
    j["ssim"] = r.reduced->ssim;
    j["scc"] = r.reduced->scc;
    j["sam"] = r.reduced->sam;
    j["ergas"] = r.reduced->ergas;
  }
  if (r.full) {
    j["d_lambda"] = r.full->d_lambda;
    j["d_s"] = r.full->d_s;
    j["hqnr"] = r.full->hqnr;
  }
  return j;
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

// Population standard deviation.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.std += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(xs.size()));
  return m;
}

inline std::string format_mean_std(const MeanStd& m, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", digits, m.mean, digits, m.std);
  return buf;
}

class MetricsReport {
 public:
  void add(ReportRow row) { rows_.push_back(std::move(row)); }
  const std::vector<ReportRow>& rows() const { return rows_; }

  // One JSON object per line.
  std::string json_lines() const {
    std::string out;
    for (const auto& r : rows_) out += to_json(r).dump() + "\n";
    return out;
  }

  // Column name -> per-image values, in display order; absent metrics skipped.
  std::vector<std::pair<std::string, std::vector<double>>> columns() const {
    std::vector<std::pair<std::string, std::vector<double>>> cols;
    auto col = [&](const std::string& name, auto get, bool present) {
      if (!present) return;
      std::vector<double> v;
      for (const auto& r : rows_) {
        if (auto x = get(r)) v.push_back(*x);
      }
      cols.emplace_back(name, std::move(v));
    };
    const bool red = !rows_.empty() && rows_.front().reduced.has_value();
    const bool ful = !rows_.empty() && rows_.front().full.has_value();
    using O = std::optional<double>;
    col("PSNR", [](const ReportRow& r) { return r.reduced ? O(r.reduced->psnr) : O(); }, red);
    col("SSIM", [](const ReportRow& r) { return r.reduced ? O(r.reduced->ssim) : O(); }, red);
    col("SCC", [](const ReportRow& r) { return r.reduced ? O(r.reduced->scc) : O(); }, red);
    col("SAM", [](const ReportRow& r) { return r.reduced ? O(r.reduced->sam) : O(); }, red);
    col("ERGAS", [](const ReportRow& r) { return r.reduced ? O(r.reduced->ergas) : O(); }, red);
    col("D_lambda", [](const ReportRow& r) { return r.full ? O(r.full->d_lambda) : O(); }, ful);
    col("D_s", [](const ReportRow& r) { return r.full ? O(r.full->d_s) : O(); }, ful);
    col("HQNR", [](const ReportRow& r) { return r.full ? O(r.full->hqnr) : O(); }, ful);
    return cols;
  }

  // Header plus one mean±std row.
  std::string table(const std::string& label = "mean") const;

 private:
  std::vector<ReportRow> rows_;
};

// Aggregate table: header, then one mean±std row per labelled report. The
// column set comes from the first report.
inline std::string aggregate_table(const std::vector<std::pair<std::string, MetricsReport>>& groups) {
  if (groups.empty()) return "";
  const auto head_cols = groups.front().second.columns();
  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> widths(head_cols.size() + 1, 5);  // "label"
  for (const auto& [label, rep] : groups) {
    std::vector<std::string> row{label};
    for (const auto& [name, values] : rep.columns()) row.push_back(format_mean_std(mean_std(values)));
    cells.push_back(std::move(row));
  }
  // The ± sign is two bytes of UTF-8 but one column.
  auto display = [](const std::string& s) { return s.size() - (s.find("±") != std::string::npos ? 1 : 0); };
  for (std::size_t c = 0; c < head_cols.size(); ++c) widths[c + 1] = head_cols[c].first.size();
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size() && c < widths.size(); ++c) widths[c] = std::max(widths[c], display(row[c]));
  }
  auto pad = [&](const std::string& s, std::size_t w) { return s + std::string(w - display(s), ' '); };
  std::string out = pad("label", widths[0]);
  for (std::size_t c = 0; c < head_cols.size(); ++c) out += "  " + pad(head_cols[c].first, widths[c + 1]);
  out += "\n";
  for (const auto& row : cells) {
    std::string line = pad(row[0], widths[0]);
    for (std::size_t c = 1; c < row.size() && c < widths.size(); ++c) line += "  " + pad(row[c], widths[c]);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

inline std::string MetricsReport::table(const std::string& label) const { return aggregate_table({{label, *this}}); }

}  // namespace cgf::metrics
