#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace moseslab {

struct TuneReport;  // tuner.hpp

// One strategy x seed outcome relative to the reference strategy.
struct MetricRow {
  std::string strategy;
  std::uint64_t seed = 0;
  double search_cost_ms = 0.0;
  double end_latency_ms = 0.0;
  double gain = 0.0;       // reference search cost / own search cost
  double reduction = 0.0;  // reference end latency / own end latency
  double cmat_percent = 0.0;
};

enum class ReportFormat { Csv, Markdown, PlotData };

// Requires the same seed and task-id sequence on both reports.
std::pair<double, double> gain_and_reduction(const TuneReport& reference,
                                             const TuneReport& candidate);

// (gain * reduction - 1) * 100.
double cmat(double gain, double reduction);

std::string build_report(const std::vector<MetricRow>& rows, ReportFormat format);

// Inverse of the csv form of build_report.
std::vector<MetricRow> parse_metrics_csv(const std::string& text);

double median(std::vector<double> values);

}  // namespace moseslab
