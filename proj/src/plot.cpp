#include "ueps/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ueps::plot {

namespace {

constexpr double kW = 640, kH = 420, kL = 70, kR = 150, kT = 40, kB = 55;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

}  // namespace

std::string render_svg(const Axes& axes, const std::vector<Series>& series) {
  auto tx = [&](double v) { return axes.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return axes.log_y ? std::log10(v) : v; };
  Range rx, ry;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: series '" + s.name + "' has mismatched lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if ((axes.log_x && s.x[i] <= 0) || (axes.log_y && s.y[i] <= 0)) {
        throw std::invalid_argument("plot: non-positive value on a log axis");
      }
      rx.add(tx(s.x[i]));
      ry.add(ty(s.y[i]));
    }
  }
  rx.pad();
  ry.pad();
  const double m = 0.05 * (ry.hi - ry.lo);
  ry.lo -= m;
  ry.hi += m;
  const double pw = kW - kL - kR;
  const double ph = kH - kT - kB;
  auto px = [&](double v) { return kL + (tx(v) - rx.lo) / (rx.hi - rx.lo) * pw; };
  auto py = [&](double v) { return kT + ph - (ty(v) - ry.lo) / (ry.hi - ry.lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(axes.title)
    << "</text>\n";
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = rx.lo + (rx.hi - rx.lo) * i / 4.0;
    const double fy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
    const double X = kL + pw * i / 4.0;
    const double Y = kT + ph - ph * i / 4.0;
    o << "<line x1=\"" << X << "\" y1=\"" << kT + ph << "\" x2=\"" << X << "\" y2=\"" << kT + ph + 5
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << X << "\" y=\"" << kT + ph + 18 << "\" text-anchor=\"middle\">"
      << fmt(axes.log_x ? std::pow(10.0, fx) : fx) << "</text>\n";
    o << "<line x1=\"" << kL - 5 << "\" y1=\"" << Y << "\" x2=\"" << kL << "\" y2=\"" << Y << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << kL - 8 << "\" y=\"" << Y + 4 << "\" text-anchor=\"end\">"
      << fmt(axes.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  o << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << escape(axes.xlabel)
    << "</text>\n";
  o << "<text transform=\"translate(16," << kT + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(axes.ylabel) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = kColors[k % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    }
    const double ly = kT + 12 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << kW - kR + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kR + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kW - kR + 35 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_svg(const std::filesystem::path& path, const Axes& axes, const std::vector<Series>& series) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << render_svg(axes, series);
}

}  // namespace ueps::plot
