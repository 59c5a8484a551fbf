#include "moseslab/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "moseslab/errors.hpp"
#include "moseslab/tuner.hpp"

namespace moseslab {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// RFC 4180: quote when the field holds a comma, quote, or newline.
std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line, const std::string& origin) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  std::size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          i += 2;
        } else {
          quoted = false;
          ++i;
        }
      } else {
        cur += c;
        ++i;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
      ++i;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
      ++i;
    } else {
      cur += c;
      ++i;
    }
  }
  if (quoted) fail(ErrorCode::ParseError, origin + ": unterminated quoted field");
  fields.push_back(cur);
  return fields;
}

double parse_double_field(const std::string& s, const std::string& origin) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    fail(ErrorCode::ParseError, origin + ": bad number '" + s + "'");
  return v;
}

std::uint64_t parse_seed_field(const std::string& s, const std::string& origin) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    fail(ErrorCode::ParseError, origin + ": bad seed '" + s + "'");
  return v;
}

constexpr const char* kCsvHeader =
    "strategy,seed,search_cost_ms,end_latency_ms,gain,reduction,cmat_percent";

std::string build_csv(const std::vector<MetricRow>& rows) {
  std::string out = kCsvHeader;
  out += "\n";
  for (const auto& r : rows) {
    out += csv_escape(r.strategy);
    out += ",";
    out += std::to_string(r.seed);
    out += ",";
    out += format_double(r.search_cost_ms);
    out += ",";
    out += format_double(r.end_latency_ms);
    out += ",";
    out += format_double(r.gain);
    out += ",";
    out += format_double(r.reduction);
    out += ",";
    out += format_double(r.cmat_percent);
    out += "\n";
  }
  return out;
}

std::string build_markdown(const std::vector<MetricRow>& rows) {
  const std::vector<std::string> headers = {"strategy",  "seed", "search_cost_ms",
                                            "end_latency_ms", "gain", "reduction",
                                            "cmat_percent"};
  std::vector<std::vector<std::string>> cells;
  cells.reserve(rows.size());
  for (const auto& r : rows) {
    cells.push_back({r.strategy, std::to_string(r.seed), format_double(r.search_cost_ms),
                     format_double(r.end_latency_ms), format_double(r.gain),
                     format_double(r.reduction), format_double(r.cmat_percent)});
  }
  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    width[c] = headers[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  auto pad = [](const std::string& s, std::size_t w) {
    return s + std::string(w - s.size(), ' ');
  };
  std::string out = "|";
  for (std::size_t c = 0; c < headers.size(); ++c) out += " " + pad(headers[c], width[c]) + " |";
  out += "\n|";
  for (std::size_t c = 0; c < headers.size(); ++c) out += std::string(width[c] + 2, '-') + "|";
  out += "\n";
  for (const auto& row : cells) {
    out += "|";
    for (std::size_t c = 0; c < headers.size(); ++c) out += " " + pad(row[c], width[c]) + " |";
    out += "\n";
  }
  return out;
}

// One block per strategy in first-appearance order: a '# name' line followed
// by seed<TAB>cmat lines, blocks separated by a blank line.
std::string build_plot_data(const std::vector<MetricRow>& rows) {
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.strategy) == order.end())
      order.push_back(r.strategy);
  std::string out;
  bool first = true;
  for (const auto& name : order) {
    if (!first) out += "\n";
    first = false;
    out += "# " + name + "\n";
    for (const auto& r : rows)
      if (r.strategy == name)
        out += std::to_string(r.seed) + "\t" + format_double(r.cmat_percent) + "\n";
  }
  return out;
}

}  // namespace

std::pair<double, double> gain_and_reduction(const TuneReport& reference,
                                             const TuneReport& candidate) {
  if (reference.seed != candidate.seed)
    fail(ErrorCode::MismatchedRuns, "reference seed " + std::to_string(reference.seed) +
                                        " vs candidate seed " + std::to_string(candidate.seed));
  if (reference.tasks.size() != candidate.tasks.size())
    fail(ErrorCode::MismatchedRuns, "task count differs between runs");
  for (std::size_t i = 0; i < reference.tasks.size(); ++i)
    if (reference.tasks[i].task_id != candidate.tasks[i].task_id)
      fail(ErrorCode::MismatchedRuns, "task order differs at index " + std::to_string(i));
  if (!(reference.search_cost_ms > 0.0) || !(candidate.search_cost_ms > 0.0))
    fail(ErrorCode::InvalidConfig, "search costs must be positive");
  if (!(reference.end_latency_ms > 0.0) || !(candidate.end_latency_ms > 0.0))
    fail(ErrorCode::InvalidConfig, "end latencies must be positive");
  const double gain = reference.search_cost_ms / candidate.search_cost_ms;
  const double reduction = reference.end_latency_ms / candidate.end_latency_ms;
  return {gain, reduction};
}

double cmat(double gain, double reduction) {
  if (!(gain > 0.0) || !(reduction > 0.0))
    fail(ErrorCode::InvalidConfig, "gain and reduction must be positive");
  return (gain * reduction - 1.0) * 100.0;
}

std::string build_report(const std::vector<MetricRow>& rows, ReportFormat format) {
  if (rows.empty()) fail(ErrorCode::EmptyRows, "no metric rows to report");
  switch (format) {
    case ReportFormat::Csv:
      return build_csv(rows);
    case ReportFormat::Markdown:
      return build_markdown(rows);
    case ReportFormat::PlotData:
      return build_plot_data(rows);
  }
  fail(ErrorCode::InvalidConfig, "unknown report format");
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
  std::vector<MetricRow> rows;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string origin = "line " + std::to_string(lineno);
    if (!saw_header) {
      if (line != kCsvHeader) fail(ErrorCode::ParseError, origin + ": unexpected header");
      saw_header = true;
      continue;
    }
    auto fields = split_csv_line(line, origin);
    if (fields.size() != 7)
      fail(ErrorCode::ParseError, origin + ": expected 7 fields, got " +
                                      std::to_string(fields.size()));
    MetricRow row;
    row.strategy = fields[0];
    row.seed = parse_seed_field(fields[1], origin);
    row.search_cost_ms = parse_double_field(fields[2], origin);
    row.end_latency_ms = parse_double_field(fields[3], origin);
    row.gain = parse_double_field(fields[4], origin);
    row.reduction = parse_double_field(fields[5], origin);
    row.cmat_percent = parse_double_field(fields[6], origin);
    rows.push_back(std::move(row));
  }
  if (!saw_header) fail(ErrorCode::ParseError, "missing header line");
  return rows;
}

double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorCode::EmptyRows, "median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace moseslab
