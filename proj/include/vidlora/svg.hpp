// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "vidlora/common.hpp"

#include <fstream>
#include <sstream>
#include <string>

namespace vidlora {

// Minimal vector-graphics emitter for scatter/polyline figures.
class SvgCanvas {
 public:
  SvgCanvas(double width, double height) : w_(width), h_(height) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_
        << "\" viewBox=\"0 0 " << w_ << " " << h_ << "\">\n";
    os_ << "<rect width=\"" << w_ << "\" height=\"" << h_ << "\" fill=\"white\"/>\n";
  }

  void circle(double x, double y, double r, const std::string& color) {
    os_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << color
        << "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                double width = 1.0) {
    if (pts.empty()) return;
    os_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width
        << "\" points=\"";
    for (auto& [x, y] : pts) os_ << x << "," << y << " ";
    os_ << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 11,
            const std::string& color = "#333") {
    os_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
        << "\" font-family=\"sans-serif\" fill=\"" << color << "\">" << s << "</text>\n";
  }

  std::string finish() const { return os_.str() + "</svg>\n"; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    VL_CHECK(f.good(), "svg: cannot open " + path);
    const std::string s = finish();
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  double w_, h_;
  std::ostringstream os_;
};

}  // namespace vidlora
