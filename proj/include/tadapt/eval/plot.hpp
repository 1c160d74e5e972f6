#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tadapt::plot {

struct Series {
  std::vector<double> x, y;
  uint32_t rgb = 0x1f77b4;
  bool markers = false;  // draw points instead of a connected line
};

// Minimal raster plots written as PNG: axes box, series, optional vertical
// marker lines (e.g., teammate-change timestamps).
void line_plot(const std::string& path, const std::vector<Series>& series,
               const std::vector<double>& vlines = {}, int width = 900,
               int height = 540);

void scatter_plot(const std::string& path, const std::vector<Series>& series,
                  int width = 720, int height = 720);

}  // namespace tadapt::plot
