// Copyright 2026 The Probe Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "probe/figures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "probe/error.hpp"

namespace probe {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;
constexpr std::array<const char*, 8> kColors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                             "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

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

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (lo > hi) lo = 0, hi = 1;
    if (lo == hi) lo -= 0.5, hi += 0.5;
  }
  double map(double v, double from, double to) const { return from + (v - lo) / (hi - lo) * (to - from); }
};

std::string open_svg(const std::string& title, const std::string& x_label,
                     const std::string& y_label) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
                  "\" height=\"" + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
       escape(title) + "</text>\n";
  s += "<text x=\"" + num(kLeft + (kWidth - kLeft - kRight) / 2) + "\" y=\"" + num(kHeight - 15) +
       "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  s += "<text x=\"18\" y=\"" + num(kTop + (kHeight - kTop - kBottom) / 2) +
       "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       num(kTop + (kHeight - kTop - kBottom) / 2) + ")\">" + escape(y_label) + "</text>\n";
  s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" +
       num(kWidth - kLeft - kRight) + "\" height=\"" + num(kHeight - kTop - kBottom) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  return s;
}

std::string y_ticks(const Range& y) {
  std::string s;
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y.map(v, kHeight - kBottom, kTop);
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py + 4) + "\" text-anchor=\"end\">" +
         tick(v) + "</text>\n";
  }
  return s;
}

std::string no_data() {
  return "<text x=\"" + num(kLeft + (kWidth - kLeft - kRight) / 2) + "\" y=\"" +
         num(kTop + (kHeight - kTop - kBottom) / 2) +
         "\" text-anchor=\"middle\" fill=\"gray\">no data</text>\n";
}

}  // namespace

std::string render_svg(const LineChart& chart) {
  std::string s = open_svg(chart.title, chart.x_label, chart.y_label);
  Range x, y;
  bool any = false;
  for (const auto& series : chart.series) {
    if (series.x.size() != series.y.size()) throw Error("series x and y differ in length");
    for (std::size_t i = 0; i < series.x.size(); ++i) {
      x.add(series.x[i]);
      y.add(series.y[i]);
      any = true;
    }
  }
  if (!any) return s + no_data() + "</svg>\n";
  x.settle();
  y.settle();
  s += y_ticks(y);
  for (int i = 0; i <= 4; ++i) {
    const double v = x.lo + (x.hi - x.lo) * i / 4.0;
    s += "<text x=\"" + num(x.map(v, kLeft, kWidth - kRight)) + "\" y=\"" +
         num(kHeight - kBottom + 16) + "\" text-anchor=\"middle\">" + tick(v) + "</text>\n";
  }
  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& series = chart.series[k];
    const char* color = kColors[k % kColors.size()];
    std::string points;
    for (std::size_t i = 0; i < series.x.size(); ++i) {
      if (!std::isfinite(series.y[i])) continue;
      if (!points.empty()) points += ' ';
      points += num(x.map(series.x[i], kLeft, kWidth - kRight)) + "," +
                num(y.map(series.y[i], kHeight - kBottom, kTop));
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" +
         points + "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    s += "<line x1=\"" + num(kWidth - kRight + 10) + "\" y1=\"" + num(ly) + "\" x2=\"" +
         num(kWidth - kRight + 30) + "\" y2=\"" + num(ly) + "\" stroke=\"" + color +
         "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(kWidth - kRight + 35) + "\" y=\"" + num(ly + 4) + "\">" +
         escape(series.name) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string render_svg(const BarChart& chart) {
  std::string s = open_svg(chart.title, "", chart.y_label);
  if (chart.bars.empty()) return s + no_data() + "</svg>\n";
  Range y;
  y.add(0.0);
  for (const auto& b : chart.bars) y.add(b.value);
  y.settle();
  s += y_ticks(y);
  const double plot_w = kWidth - kLeft - kRight;
  const double slot = plot_w / static_cast<double>(chart.bars.size());
  const double base = y.map(0.0, kHeight - kBottom, kTop);
  for (std::size_t i = 0; i < chart.bars.size(); ++i) {
    const auto& b = chart.bars[i];
    const double v = std::isfinite(b.value) ? b.value : 0.0;
    const double top = y.map(v, kHeight - kBottom, kTop);
    const double x0 = kLeft + slot * (static_cast<double>(i) + 0.15);
    s += "<rect x=\"" + num(x0) + "\" y=\"" + num(std::min(top, base)) + "\" width=\"" +
         num(slot * 0.7) + "\" height=\"" + num(std::abs(base - top)) + "\" fill=\"" +
         kColors[i % kColors.size()] + "\"/>\n";
    s += "<text x=\"" + num(x0 + slot * 0.35) + "\" y=\"" + num(std::min(top, base) - 4) +
         "\" text-anchor=\"middle\">" + tick(b.value) + "</text>\n";
    s += "<text x=\"" + num(x0 + slot * 0.35) + "\" y=\"" + num(kHeight - kBottom + 16) +
         "\" text-anchor=\"middle\">" + escape(b.label) + "</text>\n";
  }
  return s + "</svg>\n";
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace probe
