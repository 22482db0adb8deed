// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gsc/metrics.hpp"

namespace gsc::harness {

using metrics::MetricRecord;

inline constexpr const char* kCsvHeader = "run_id,stage,epoch,rate_index,snr_db,delay_spread_ns,metric,value,seed";

// Header line plus one line per record; reals use %.17g.
std::string to_csv(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> parse_csv(const std::string& text);
void export_csv(const std::vector<MetricRecord>& records, const std::string& path);
std::vector<MetricRecord> load_csv(const std::string& path);

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // sorted by x
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

struct BoxPlot {
  std::string title;
  std::string y_label;
  std::vector<BoxGroup> groups;
};

std::string render_svg(const LinePlot& plot);
std::string render_svg(const BoxPlot& plot);

enum class Field { kNone, kEpoch, kRateIndex, kSnr, kDelaySpread, kStage, kSeed, kMetric };

// "none", "epoch", "rate_index", "snr_db", "delay_spread_ns", "stage", "seed" or "metric".
Field parse_field(const std::string& name);

struct PlotRequest {
  enum class Kind { kLine, kBox } kind = Kind::kLine;
  std::string metric;  // comma-separated list selects several metrics
  Field x = Field::kSnr;          // line plots: numeric x axis
  Field series = Field::kRateIndex;  // line plots: one polyline per value; box plots: one box per value
  std::string title;
};

// Records of the requested metric; line points average duplicates at the same x.
LinePlot line_plot(const std::vector<MetricRecord>& records, const PlotRequest& request);
BoxPlot box_plot(const std::vector<MetricRecord>& records, const PlotRequest& request);

// Throws when no record matches the metric.
void export_svg_plot(const std::vector<MetricRecord>& records, const PlotRequest& request, const std::string& path);

}  // namespace gsc::harness
