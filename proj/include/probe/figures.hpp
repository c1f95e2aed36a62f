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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

// Minimal SVG charts for run reports. Output is a pure function of the
// input, so reports are byte-reproducible.

namespace probe {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

struct Bar {
  std::string label;
  double value = 0.0;
};

struct BarChart {
  std::string title;
  std::string y_label;
  std::vector<Bar> bars;
};

// Charts without data render their frame and a "no data" note.
std::string render_svg(const LineChart& chart);
std::string render_svg(const BarChart& chart);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace probe
