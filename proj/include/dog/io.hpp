#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dog/errors.hpp"
#include "dog/eval.hpp"
#include "dog/sampler.hpp"

namespace dog::io {

namespace fs = std::filesystem;

/// Shortest text that parses back to the same double.
inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Write-temp-then-rename so readers never see a partial file.
inline void write_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string digest_line(const std::string& digest) { return "# config_digest=" + digest + "\n"; }

/// strategy,gs,fidelity_w2,diversity,blowup_rate,n_samples
inline std::string metrics_csv(const std::vector<MetricReport>& rows, const std::string& digest) {
  std::ostringstream out;
  out << digest_line(digest) << "strategy,gs,fidelity_w2,diversity,blowup_rate,n_samples\n";
  for (const auto& r : rows) {
    out << r.strategy << ',' << fmt_real(r.gs) << ',' << fmt_real(r.fidelity_w2) << ',' << fmt_real(r.diversity)
        << ',' << fmt_real(r.blowup_rate) << ',' << r.n_samples << '\n';
  }
  return out.str();
}

struct AblationRow {
  std::string axis;
  std::string arm;
  MetricReport metrics;
};

/// axis,arm,gs,fidelity_w2,diversity,blowup_rate,n_samples
inline std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& digest) {
  std::ostringstream out;
  out << digest_line(digest) << "axis,arm,gs,fidelity_w2,diversity,blowup_rate,n_samples\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.axis << ',' << r.arm << ',' << fmt_real(m.gs) << ',' << fmt_real(m.fidelity_w2) << ','
        << fmt_real(m.diversity) << ',' << fmt_real(m.blowup_rate) << ',' << m.n_samples << '\n';
  }
  return out.str();
}

/// seed,x0,x1,...
inline std::string final_samples_csv(const std::vector<Trajectory>& trajs, const std::string& digest) {
  std::ostringstream out;
  out << digest_line(digest) << "seed";
  const Eigen::Index d = trajs.empty() ? 0 : trajs.front().final_sample.size();
  for (Eigen::Index i = 0; i < d; ++i) out << ",x" << i;
  out << '\n';
  for (const auto& tr : trajs) {
    out << tr.seed;
    for (double v : tr.final_sample) out << ',' << fmt_real(v);
    out << '\n';
  }
  return out.str();
}

/// Header lines start with '#'; then one step per line: t,x_0..x_{d-1},g_t
inline std::string trajectory_text(const Trajectory& tr, std::string_view strategy) {
  std::ostringstream out;
  out << "# dog-trajectory 1\n";
  out << "# seed=" << tr.seed << "\n";
  out << "# config_digest=" << tr.config_digest << "\n";
  out << "# strategy=" << strategy << "\n";
  out << "# degenerate_steps=" << tr.degenerate_step_count << "\n";
  out << "# max_state_norm=" << fmt_real(tr.max_state_norm) << "\n";
  out << "t";
  const Eigen::Index d = tr.final_sample.size();
  for (Eigen::Index i = 0; i < d; ++i) out << ",x" << i;
  out << ",g_t\n";
  for (const auto& s : tr.steps) {
    out << s.t;
    for (double v : s.x_t) out << ',' << fmt_real(v);
    out << ',' << fmt_real(s.g_t) << '\n';
  }
  return out.str();
}

inline std::string loss_csv(const std::vector<double>& losses, const std::string& digest) {
  std::ostringstream out;
  out << digest_line(digest) << "epoch,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << fmt_real(losses[i]) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// SVG line plots

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

namespace detail {

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  return colors[i % (sizeof colors / sizeof colors[0])];
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Panels side by side, shared legend at the bottom. Non-finite points are dropped.
inline std::string svg_plot(const std::vector<Panel>& panels, const std::string& digest) {
  constexpr double pw = 360, ph = 260, ml = 60, mr = 20, mt = 40, mb = 50, legend_h = 24;
  const double width = pw * static_cast<double>(panels.size());
  std::size_t n_series = 0;
  for (const auto& p : panels) n_series = std::max(n_series, p.series.size());
  const double height = ph + legend_h * static_cast<double>((n_series + 3) / 4) + 10;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<!-- config_digest=" << digest << " -->\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const auto& p = panels[pi];
    const double ox = pw * static_cast<double>(pi);
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : p.series)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    ymin = std::min(ymin, 0.0);
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double x0 = ox + ml, x1 = ox + pw - mr, y0 = ph - mb, y1 = mt;
    auto sx = [&](double v) { return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0); };
    auto sy = [&](double v) { return y0 - (v - ymin) / (ymax - ymin) * (y0 - y1); };

    out << "<text x=\"" << ox + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
        << detail::escape(p.title) << "</text>\n";
    out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double xv = xmin + (xmax - xmin) * k / 4.0;
      const double yv = ymin + (ymax - ymin) * k / 4.0;
      out << "<text x=\"" << sx(xv) << "\" y=\"" << y0 + 14 << "\" text-anchor=\"middle\">" << fmt_real(std::round(xv * 100) / 100)
          << "</text>\n";
      out << "<text x=\"" << x0 - 4 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">"
          << fmt_real(std::round(yv * 1000) / 1000) << "</text>\n";
    }
    out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << y0 + 32 << "\" text-anchor=\"middle\">"
        << detail::escape(p.x_label) << "</text>\n";
    out << "<text x=\"" << ox + 14 << "\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 "
        << ox + 14 << ' ' << (y0 + y1) / 2 << ")\">" << detail::escape(p.y_label) << "</text>\n";
    for (std::size_t si = 0; si < p.series.size(); ++si) {
      const auto& s = p.series[si];
      std::ostringstream pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        pts << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
        out << "<circle cx=\"" << sx(s.x[i]) << "\" cy=\"" << sy(s.y[i]) << "\" r=\"3\" fill=\"" << detail::palette(si)
            << "\"/>\n";
      }
      out << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << detail::palette(si) << "\" points=\""
          << pts.str() << "\"/>\n";
    }
  }
  if (!panels.empty()) {
    const auto& labels = panels.front().series;
    for (std::size_t si = 0; si < labels.size(); ++si) {
      const double lx = 20 + 150.0 * static_cast<double>(si % 4);
      const double ly = ph + legend_h * static_cast<double>(si / 4) + 10;
      out << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"14\" height=\"10\" fill=\"" << detail::palette(si)
          << "\"/>\n";
      out << "<text x=\"" << lx + 20 << "\" y=\"" << ly << "\">" << detail::escape(labels[si].label) << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace dog::io
