// SPDX-License-Identifier: Apache-2.0
#include "gsc/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace gsc::harness {

namespace {

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_text(const std::string& s, const char* field) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw std::invalid_argument(std::string("CSV field ") + field + " contains a separator: '" + s + "'");
  }
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s, std::size_t row, const char* field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw std::invalid_argument("CSV row " + std::to_string(row) + ": bad " + field + " '" + s + "'");
}

long parse_long(const std::string& s, std::size_t row, const char* field) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw std::invalid_argument("CSV row " + std::to_string(row) + ": bad " + field + " '" + s + "'");
}

}  // namespace

std::string to_csv(const std::vector<MetricRecord>& records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) {
    check_text(r.run_id, "run_id");
    check_text(r.stage, "stage");
    check_text(r.metric, "metric");
    out += r.run_id + "," + r.stage + ",";
    out += (r.epoch ? std::to_string(*r.epoch) : "") + ",";
    out += (r.rate_index ? std::to_string(*r.rate_index) : "") + ",";
    out += (r.snr_db ? real(*r.snr_db) : "") + ",";
    out += (r.delay_spread_ns ? real(*r.delay_spread_ns) : "") + ",";
    out += r.metric + "," + real(r.value) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::vector<MetricRecord> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw std::invalid_argument("CSV header mismatch");
  std::vector<MetricRecord> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_row(line);
    if (f.size() != 9) throw std::invalid_argument("CSV row " + std::to_string(row) + ": expected 9 fields");
    MetricRecord r;
    r.run_id = f[0];
    r.stage = f[1];
    if (!f[2].empty()) r.epoch = parse_long(f[2], row, "epoch");
    if (!f[3].empty()) r.rate_index = parse_long(f[3], row, "rate_index");
    if (!f[4].empty()) r.snr_db = parse_real(f[4], row, "snr_db");
    if (!f[5].empty()) r.delay_spread_ns = parse_real(f[5], row, "delay_spread_ns");
    r.metric = f[6];
    r.value = parse_real(f[7], row, "value");
    try {
      std::size_t used = 0;
      r.seed = std::stoull(f[8], &used);
      if (used != f[8].size()) throw std::invalid_argument(f[8]);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("CSV row " + std::to_string(row) + ": bad seed '" + f[8] + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void export_csv(const std::vector<MetricRecord>& records, const std::string& path) {
  const std::string text = to_csv(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<MetricRecord> load_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

// ---------------------------------------------------------------------------
// SVG

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Range {
  double lo, hi;
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

Range padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double d = std::abs(lo) > 0 ? std::abs(lo) * 0.1 : 1.0;
    return {lo - d, hi + d};
  }
  const double d = (hi - lo) * 0.05;
  return {lo - d, hi + d};
}

std::string open_svg(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
                  num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + escape(title) +
       "</text>\n";
  return s;
}

std::string axes(const Range& y, const std::string& x_label, const std::string& y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string s = "<g class=\"axes\" stroke=\"black\">\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) + "\"/>\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) + "\"/>\n";
  s += "</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y.map(v, y0, y1);
    s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(py + 4) + "\" text-anchor=\"end\" font-size=\"11\">" + tick(v) +
         "</text>\n";
  }
  s += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kHeight - 18) + "\" text-anchor=\"middle\" font-size=\"13\">" +
       escape(x_label) + "</text>\n";
  s += "<text x=\"18\" y=\"" + num((y0 + y1) / 2) + "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 " +
       num((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";
  return s;
}

}  // namespace

std::string render_svg(const LinePlot& plot) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : plot.series) {
    for (auto [x, y] : s.points) {
      xlo = std::min(xlo, x), xhi = std::max(xhi, x), ylo = std::min(ylo, y), yhi = std::max(yhi, y);
    }
  }
  if (!std::isfinite(xlo)) throw std::invalid_argument("line plot has no points");
  const Range xr = padded(xlo, xhi), yr = padded(ylo, yhi);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string svg = open_svg(plot.title) + axes(yr, plot.x_label, plot.y_label);
  std::vector<double> xs;
  for (const auto& s : plot.series) {
    for (auto [x, y] : s.points) xs.push_back(x);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const std::size_t step = std::max<std::size_t>(1, xs.size() / 8);
  for (std::size_t i = 0; i < xs.size(); i += step) {
    svg += "<text x=\"" + num(xr.map(xs[i], x0, x1)) + "\" y=\"" + num(y0 + 16) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + tick(xs[i]) + "</text>\n";
  }
  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (auto [x, y] : s.points) pts += num(xr.map(x, x0, x1)) + "," + num(yr.map(y, y0, y1)) + " ";
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = kTop + 18.0 * static_cast<double>(k);
    svg += "<g class=\"legend\"><line x1=\"" + num(x1 + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(x1 + 32) +
           "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/><text x=\"" + num(x1 + 38) +
           "\" y=\"" + num(ly + 4) + "\" font-size=\"11\">" + escape(s.label) + "</text></g>\n";
  }
  return svg + "</svg>\n";
}

std::string render_svg(const BoxPlot& plot) {
  double ylo = INFINITY, yhi = -INFINITY;
  for (const auto& g : plot.groups) {
    for (double v : g.values) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
  }
  if (!std::isfinite(ylo)) throw std::invalid_argument("box plot has no values");
  const Range yr = padded(ylo, yhi);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string svg = open_svg(plot.title) + axes(yr, "", plot.y_label);
  const double slot = (x1 - x0) / static_cast<double>(plot.groups.size());
  for (std::size_t k = 0; k < plot.groups.size(); ++k) {
    std::vector<double> v = plot.groups[k].values;
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    auto quantile = [&](double q) {
      const double pos = q * static_cast<double>(v.size() - 1);
      const std::size_t i = static_cast<std::size_t>(pos);
      const double f = pos - static_cast<double>(i);
      return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
    };
    const double cx = x0 + slot * (static_cast<double>(k) + 0.5), w = std::min(40.0, slot * 0.5);
    const double q1 = yr.map(quantile(0.25), y0, y1), q3 = yr.map(quantile(0.75), y0, y1);
    const double med = yr.map(quantile(0.5), y0, y1);
    const double lo = yr.map(v.front(), y0, y1), hi = yr.map(v.back(), y0, y1);
    const char* color = kPalette[k % std::size(kPalette)];
    svg += "<g class=\"box\" stroke=\"black\">";
    svg += "<line x1=\"" + num(cx) + "\" y1=\"" + num(lo) + "\" x2=\"" + num(cx) + "\" y2=\"" + num(hi) + "\"/>";
    svg += "<rect x=\"" + num(cx - w / 2) + "\" y=\"" + num(q3) + "\" width=\"" + num(w) + "\" height=\"" +
           num(std::max(0.5, q1 - q3)) + "\" fill=\"" + color + "\" fill-opacity=\"0.5\"/>";
    svg += "<line x1=\"" + num(cx - w / 2) + "\" y1=\"" + num(med) + "\" x2=\"" + num(cx + w / 2) + "\" y2=\"" +
           num(med) + "\" stroke-width=\"2\"/>";
    svg += "</g>\n";
    svg += "<text x=\"" + num(cx) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\" font-size=\"11\">" +
           escape(plot.groups[k].label) + "</text>\n";
  }
  return svg + "</svg>\n";
}

Field parse_field(const std::string& name) {
  if (name == "none") return Field::kNone;
  if (name == "epoch") return Field::kEpoch;
  if (name == "rate_index") return Field::kRateIndex;
  if (name == "snr_db") return Field::kSnr;
  if (name == "delay_spread_ns") return Field::kDelaySpread;
  if (name == "stage") return Field::kStage;
  if (name == "seed") return Field::kSeed;
  if (name == "metric") return Field::kMetric;
  throw std::invalid_argument("unknown record field '" + name + "'");
}

namespace {

const char* field_name(Field f) {
  switch (f) {
    case Field::kNone: return "";
    case Field::kEpoch: return "epoch";
    case Field::kRateIndex: return "rate_index";
    case Field::kSnr: return "snr_db";
    case Field::kDelaySpread: return "delay_spread_ns";
    case Field::kStage: return "stage";
    case Field::kSeed: return "seed";
    case Field::kMetric: return "metric";
  }
  return "";
}

std::optional<double> numeric(const MetricRecord& r, Field f) {
  switch (f) {
    case Field::kEpoch: return r.epoch ? std::optional<double>(static_cast<double>(*r.epoch)) : std::nullopt;
    case Field::kRateIndex:
      return r.rate_index ? std::optional<double>(static_cast<double>(*r.rate_index)) : std::nullopt;
    case Field::kSnr: return r.snr_db;
    case Field::kDelaySpread: return r.delay_spread_ns;
    case Field::kSeed: return static_cast<double>(r.seed);
    default: return std::nullopt;
  }
}

std::string label(const MetricRecord& r, Field f) {
  if (f == Field::kNone) return "all";
  if (f == Field::kStage) return r.stage;
  if (f == Field::kMetric) return r.metric;
  const auto v = numeric(r, f);
  return std::string(field_name(f)) + "=" + (v ? tick(*v) : std::string("-"));
}

std::vector<std::string> metric_list(const std::string& spec) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(spec);
  while (std::getline(is, cur, ',')) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

bool selected(const std::vector<std::string>& metrics, const std::string& m) {
  return std::find(metrics.begin(), metrics.end(), m) != metrics.end();
}

}  // namespace

LinePlot line_plot(const std::vector<MetricRecord>& records, const PlotRequest& request) {
  // Keyed by (series label, x): sum and count for averaging.
  std::vector<std::string> order;
  std::map<std::string, std::map<double, std::pair<double, std::size_t>>> acc;
  const auto metrics = metric_list(request.metric);
  for (const auto& r : records) {
    if (!selected(metrics, r.metric)) continue;
    const auto x = numeric(r, request.x);
    if (!x) continue;
    const std::string key = label(r, request.series);
    if (!acc.count(key)) order.push_back(key);
    auto& cell = acc[key][*x];
    cell.first += r.value;
    cell.second += 1;
  }
  LinePlot plot{request.title.empty() ? request.metric : request.title, field_name(request.x), request.metric, {}};
  std::sort(order.begin(), order.end());
  for (const auto& key : order) {
    Series s{key, {}};
    for (const auto& [x, cell] : acc[key]) s.points.emplace_back(x, cell.first / static_cast<double>(cell.second));
    plot.series.push_back(std::move(s));
  }
  return plot;
}

BoxPlot box_plot(const std::vector<MetricRecord>& records, const PlotRequest& request) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> acc;
  const auto metrics = metric_list(request.metric);
  for (const auto& r : records) {
    if (!selected(metrics, r.metric)) continue;
    const std::string key = label(r, request.series);
    if (!acc.count(key)) order.push_back(key);
    acc[key].push_back(r.value);
  }
  BoxPlot plot{request.title.empty() ? request.metric : request.title, request.metric, {}};
  for (const auto& key : order) plot.groups.push_back({key, acc[key]});
  return plot;
}

void export_svg_plot(const std::vector<MetricRecord>& records, const PlotRequest& request, const std::string& path) {
  std::string svg;
  if (request.kind == PlotRequest::Kind::kLine) {
    const LinePlot p = line_plot(records, request);
    if (p.series.empty()) throw std::invalid_argument("no records for metric '" + request.metric + "'");
    svg = render_svg(p);
  } else {
    const BoxPlot p = box_plot(records, request);
    if (p.groups.empty()) throw std::invalid_argument("no records for metric '" + request.metric + "'");
    svg = render_svg(p);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << svg;
}

}  // namespace gsc::harness
