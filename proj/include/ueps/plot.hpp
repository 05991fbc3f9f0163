#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ueps::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Axes {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool log_x = false;
  bool log_y = false;
};

/// Static SVG line chart with markers and a legend.
std::string render_svg(const Axes& axes, const std::vector<Series>& series);
void write_svg(const std::filesystem::path& path, const Axes& axes, const std::vector<Series>& series);

}  // namespace ueps::plot
