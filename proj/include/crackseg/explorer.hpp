// Copyright 2026 The crackseg Authors. All Rights Reserved.
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

// Design points on the (dynamic energy efficiency, mean IoU) plane and their
// Pareto frontier, both axes maximized.

#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "crackseg/csv.hpp"
#include "crackseg/error.hpp"
#include "crackseg/metrics.hpp"

namespace crackseg {

struct DesignPoint {
  std::string id;
  int base = 0;
  std::string device;
  std::string precision;  // "model_bits/data_bits"
  double dynamic_eff = 0.0;  // frames/J
  double miou = 0.0;         // percent
  std::optional<double> wiou;
  std::optional<double> fps;
  std::optional<double> runtime_eff;
  std::string report;

  void validate() const {
    if (!(dynamic_eff > 0.0) || !std::isfinite(dynamic_eff))
      detail::fail(Errc::invalid_parameter, "point '", id, "': dynamic efficiency must be > 0");
    if (!(miou >= 0.0 && miou <= 100.0))
      detail::fail(Errc::invalid_parameter, "point '", id, "': mean IoU ", miou, " outside [0, 100]");
  }

  friend bool operator==(const DesignPoint&, const DesignPoint&) = default;
};

enum class Dominance : std::uint8_t { a_dominates, b_dominates, incomparable, equal };

inline std::string_view to_string(Dominance d) {
  switch (d) {
    case Dominance::a_dominates: return "a_dominates";
    case Dominance::b_dominates: return "b_dominates";
    case Dominance::incomparable: return "incomparable";
    case Dominance::equal: return "equal";
  }
  return "?";
}

inline Dominance dominance(const DesignPoint& a, const DesignPoint& b) {
  const bool a_ge = a.dynamic_eff >= b.dynamic_eff && a.miou >= b.miou;
  const bool b_ge = b.dynamic_eff >= a.dynamic_eff && b.miou >= a.miou;
  if (a_ge && b_ge) return Dominance::equal;
  if (a_ge) return Dominance::a_dominates;
  if (b_ge) return Dominance::b_dominates;
  return Dominance::incomparable;
}

namespace detail {

inline auto point_key(const DesignPoint& p) {
  return std::tie(p.dynamic_eff, p.miou, p.id, p.base, p.device, p.precision, p.report);
}

}  // namespace detail

/// Non-dominated points sorted by efficiency ascending (then IoU descending,
/// then id). Identical points collapse to one; distinct points sharing both
/// coordinates are all kept.
inline std::vector<DesignPoint> pareto_front(std::vector<DesignPoint> points) {
  if (points.empty()) detail::fail(Errc::invalid_parameter, "pareto_front needs at least one point");
  for (const auto& p : points) p.validate();
  std::ranges::sort(points, [](const DesignPoint& a, const DesignPoint& b) {
    if (a.dynamic_eff != b.dynamic_eff) return a.dynamic_eff > b.dynamic_eff;
    if (a.miou != b.miou) return a.miou > b.miou;
    return detail::point_key(a) < detail::point_key(b);
  });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  // sweep from the most efficient point; keep a point when its IoU beats
  // everything more efficient, or ties the current best at equal efficiency
  std::vector<DesignPoint> front;
  double best_miou = -1.0;
  double best_eff = 0.0;
  for (auto& p : points) {
    if (p.miou > best_miou) {
      best_miou = p.miou;
      best_eff = p.dynamic_eff;
      front.push_back(p);
    } else if (p.miou == best_miou && p.dynamic_eff == best_eff) {
      front.push_back(p);
    }
  }
  std::ranges::sort(front, [](const DesignPoint& a, const DesignPoint& b) {
    if (a.dynamic_eff != b.dynamic_eff) return a.dynamic_eff < b.dynamic_eff;
    if (a.miou != b.miou) return a.miou > b.miou;
    return detail::point_key(a) < detail::point_key(b);
  });
  return front;
}

/// Reads measurement rows. Required columns: base, device, model_bits,
/// data_bits, miou, and either dynamic_eff or fps + idle_w + runtime_w.
/// Printed dynamic_eff / runtime_eff columns, when present, take precedence
/// over values recomputed from the power triple.
inline std::vector<DesignPoint> points_from_table(const csv::Table& t) {
  t.require({"base", "device", "model_bits", "data_bits", "miou"});
  const bool have_triple = t.has("fps") && t.has("idle_w") && t.has("runtime_w");
  if (!t.has("dynamic_eff") && !have_triple)
    detail::fail(Errc::parse, "points table needs dynamic_eff or fps, idle_w and runtime_w columns");
  std::vector<DesignPoint> pts;
  for (const auto& r : t.rows()) {
    DesignPoint p;
    p.base = static_cast<int>(csv::parse_int(t.cell(r, "base"), "base"));
    p.device = t.cell(r, "device");
    p.precision = t.cell(r, "model_bits") + "/" + t.cell(r, "data_bits");
    p.id = t.has("id") && !t.cell(r, "id").empty()
               ? t.cell(r, "id")
               : "c" + std::to_string(p.base) + " " + p.device + " " + p.precision;
    p.miou = t.number(r, "miou");
    p.wiou = t.optional_number(r, "wiou");
    p.fps = t.optional_number(r, "fps");
    std::optional<Efficiency> eff;
    if (have_triple) {
      PlatformMeasurement m{p.device, p.precision, t.number(r, "fps"), t.number(r, "idle_w"),
                            t.number(r, "runtime_w")};
      try {
        eff = energy_efficiency(m);
      } catch (const Error& e) {
        detail::fail(e.code(), "line ", r.line, ": ", e.message());
      }
    }
    const auto printed = t.optional_number(r, "dynamic_eff");
    if (printed) p.dynamic_eff = *printed;
    else p.dynamic_eff = eff->dynamic_eff;
    p.runtime_eff = t.optional_number(r, "runtime_eff");
    if (!p.runtime_eff && eff) p.runtime_eff = eff->runtime_eff;
    if (t.has("report")) p.report = t.cell(r, "report");
    p.validate();
    pts.push_back(std::move(p));
  }
  return pts;
}

inline std::string front_csv(const std::vector<DesignPoint>& front) {
  std::ostringstream os;
  os << "id,base,device,precision,dynamic_eff,miou\n";
  for (const auto& p : front)
    os << p.id << "," << p.base << "," << p.device << "," << p.precision << "," << fixed2(p.dynamic_eff) << ","
       << fixed2(p.miou) << "\n";
  return os.str();
}

namespace detail {

struct PlotFrame {
  double lx0, lx1, y0, y1;  // log10 efficiency range, IoU range
};

inline PlotFrame plot_frame(const std::vector<DesignPoint>& pts) {
  PlotFrame f{1e300, -1e300, 1e300, -1e300};
  for (const auto& p : pts) {
    const double lx = std::log10(p.dynamic_eff);
    f.lx0 = std::min(f.lx0, lx);
    f.lx1 = std::max(f.lx1, lx);
    f.y0 = std::min(f.y0, p.miou);
    f.y1 = std::max(f.y1, p.miou);
  }
  if (f.lx1 - f.lx0 < 1e-9) {
    f.lx0 -= 0.5;
    f.lx1 += 0.5;
  }
  if (f.y1 - f.y0 < 1e-9) {
    f.y0 -= 0.5;
    f.y1 += 0.5;
  }
  return f;
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

}  // namespace detail

/// Scatter of all points (log efficiency axis) with the front as a dashed
/// polyline.
inline std::string render_svg(const std::vector<DesignPoint>& points, const std::vector<DesignPoint>& front) {
  if (points.empty()) detail::fail(Errc::invalid_parameter, "nothing to plot");
  const double W = 640, H = 420, L = 70, R = 20, T = 20, B = 60;
  const auto f = detail::plot_frame(points);
  auto px = [&](double eff) { return L + (std::log10(eff) - f.lx0) / (f.lx1 - f.lx0) * (W - L - R); };
  auto py = [&](double m) { return H - B - (m - f.y0) / (f.y1 - f.y0) * (H - T - B); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << " " << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int d = static_cast<int>(std::ceil(f.lx0)); d <= static_cast<int>(std::floor(f.lx1)); ++d) {
    const double x = px(std::pow(10.0, d));
    os << "<line x1=\"" << x << "\" y1=\"" << H - B << "\" x2=\"" << x << "\" y2=\"" << H - B + 5
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << x << "\" y=\"" << H - B + 20 << "\" font-size=\"12\" text-anchor=\"middle\">"
       << std::setprecision(0) << std::pow(10.0, d) << std::setprecision(2) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15
     << "\" font-size=\"13\" text-anchor=\"middle\">Dynamic energy efficiency [frames/J]</text>\n";
  os << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << (T + H - B) / 2 << ")\">Mean IoU [%]</text>\n";
  os << "<text x=\"" << L - 8 << "\" y=\"" << py(f.y0) + 4 << "\" font-size=\"12\" text-anchor=\"end\">" << f.y0
     << "</text>\n";
  os << "<text x=\"" << L - 8 << "\" y=\"" << py(f.y1) + 4 << "\" font-size=\"12\" text-anchor=\"end\">" << f.y1
     << "</text>\n";
  if (front.size() > 1) {
    os << "<polyline fill=\"none\" stroke=\"black\" stroke-dasharray=\"6,4\" points=\"";
    for (const auto& p : front) os << px(p.dynamic_eff) << "," << py(p.miou) << " ";
    os << "\"/>\n";
  }
  for (const auto& p : points) {
    const bool on = std::ranges::find(front, p) != front.end();
    os << "<circle cx=\"" << px(p.dynamic_eff) << "\" cy=\"" << py(p.miou) << "\" r=\"4\" fill=\""
       << (on ? "crimson" : "steelblue") << "\"><title>" << detail::xml_escape(p.id) << " (" << p.dynamic_eff
       << ", " << p.miou << ")</title></circle>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Character scatter: '*' front points, 'o' other points.
inline std::string render_ascii(const std::vector<DesignPoint>& points, const std::vector<DesignPoint>& front,
                                int width = 72, int height = 20) {
  if (points.empty()) detail::fail(Errc::invalid_parameter, "nothing to plot");
  if (width < 8 || height < 4) detail::fail(Errc::invalid_parameter, "plot area too small");
  const auto f = detail::plot_frame(points);
  std::vector<std::string> grid(static_cast<std::size_t>(height), std::string(static_cast<std::size_t>(width), ' '));
  auto put = [&](const DesignPoint& p, char ch) {
    const int x = static_cast<int>(std::lround((std::log10(p.dynamic_eff) - f.lx0) / (f.lx1 - f.lx0) * (width - 1)));
    const int y = static_cast<int>(std::lround((f.y1 - p.miou) / (f.y1 - f.y0) * (height - 1)));
    auto& c = grid[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
    if (c != '*') c = ch;
  };
  for (const auto& p : points) put(p, 'o');
  for (const auto& p : front) put(p, '*');
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "miou " << f.y1 << "\n";
  for (const auto& row : grid) os << "|" << row << "\n";
  os << "+" << std::string(static_cast<std::size_t>(width), '-') << "\n";
  os << "miou " << f.y0 << "; dynamic_eff " << std::pow(10.0, f.lx0) << " .. " << std::pow(10.0, f.lx1)
     << " frames/J (log)\n";
  return os.str();
}

}  // namespace crackseg
