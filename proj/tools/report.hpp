#pragma once

// CSV and SVG writers. Numbers go through std::to_chars, so output bytes do
// not depend on the locale.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bayesupdate::cli {

inline std::string format_number(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
  return std::string(buf.data(), res.ptr);
}

inline std::string format_number(long v) { return std::to_string(v); }
inline std::string format_number(int v) { return std::to_string(v); }

// Short form for plot coordinates.
inline std::string coord(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, 2);
  return std::string(buf.data(), res.ptr);
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open " + path + " for writing");
    row_strings(header);
  }

  template <typename... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(values), first = false), ...);
    out_ << '\n';
  }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  /// A leading label followed by the entries of `values`.
  template <typename Label>
  void row_with(const Label& label, std::span<const double> values) {
    out_ << cell(label);
    for (double v : values) out_ << ',' << format_number(v);
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("CSV write failed");
  }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(std::string_view s) { return std::string(s); }
  static std::string cell(const char* s) { return s; }
  template <typename T>
  static std::string cell(const T& v) {
    return format_number(v);
  }

  std::ofstream out_;
};

inline std::vector<std::string> numbered_header(const std::string& first, const std::string& prefix, long count) {
  std::vector<std::string> h{first};
  for (long i = 1; i <= count; ++i) h.push_back(prefix + std::to_string(i));
  return h;
}

// ---------------------------------------------------------------------------
// SVG

class Svg {
 public:
  Svg(double width, double height) : width_(width), height_(height) {
    body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(width) + "\" height=\"" + coord(height) +
             "\" viewBox=\"0 0 " + coord(width) + " " + coord(height) + "\">\n";
    body_ += "<rect x=\"0\" y=\"0\" width=\"" + coord(width) + "\" height=\"" + coord(height) + "\" fill=\"white\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill) {
    body_ += "<rect x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" width=\"" + coord(w) + "\" height=\"" + coord(h) +
             "\" fill=\"" + fill + "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    body_ += "<line x1=\"" + coord(x1) + "\" y1=\"" + coord(y1) + "\" x2=\"" + coord(x2) + "\" y2=\"" + coord(y2) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + coord(width) + "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"1.50\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      body_ += (i ? " " : "") + coord(pts[i].first) + "," + coord(pts[i].second);
    }
    body_ += "\"/>\n";
  }

  void text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 12) {
    body_ += "<text x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" font-family=\"sans-serif\" font-size=\"" +
             std::to_string(size) + "\" text-anchor=\"" + anchor + "\">" + escape(s) + "</text>\n";
  }

  double width() const noexcept { return width_; }
  double height() const noexcept { return height_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << body_ << "</svg>\n";
    if (!out) throw std::runtime_error("SVG write failed: " + path);
  }

 private:
  static std::string escape(const std::string& s) {
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

  double width_;
  double height_;
  std::string body_;
};

inline std::string grey(double v) {
  const int level = static_cast<int>(std::lround(255.0 * (1.0 - std::clamp(v, 0.0, 1.0))));
  return "rgb(" + std::to_string(level) + "," + std::to_string(level) + "," + std::to_string(level) + ")";
}

/// Bar chart of relative frequencies of 0..counts.size()-1 with a dashed
/// line at the uniform level.
inline void histogram_svg(const std::string& path, const std::vector<long>& counts, const std::string& title) {
  const double w = 480, h = 320, left = 50, right = 15, top = 30, bottom = 40;
  Svg svg(w, h);
  double total = 0.0;
  for (long c : counts) total += static_cast<double>(c);
  double peak = 1.0 / static_cast<double>(counts.size());
  for (long c : counts) peak = std::max(peak, static_cast<double>(c) / total);
  const double ymax = peak * 1.1;
  const double pw = w - left - right, ph = h - top - bottom;
  const double bw = pw / static_cast<double>(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double f = static_cast<double>(counts[k]) / total;
    const double bh = ph * f / ymax;
    svg.rect(left + bw * static_cast<double>(k) + 0.5, top + ph - bh, std::max(bw - 1.0, 0.5), bh, "steelblue");
  }
  const double uy = top + ph - ph * (1.0 / static_cast<double>(counts.size())) / ymax;
  svg.line(left, uy, left + pw, uy, "black", 0.8);
  svg.line(left, top + ph, left + pw, top + ph, "black");
  svg.line(left, top, left, top + ph, "black");
  svg.text(w / 2, 18, title, "middle");
  svg.text(left, h - 12, "0", "middle", 10);
  svg.text(left + pw, h - 12, std::to_string(counts.size() - 1), "middle", 10);
  svg.text(w / 2, h - 12, "Z", "middle", 11);
  svg.text(left - 5, top + 10, coord(ymax), "end", 10);
  svg.save(path);
}

/// Grey-scale image of a rows x cols matrix with entries in [0, 1]; black is 1.
inline void heatmap_svg(const std::string& path, const Eigen::MatrixXd& values, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel) {
  const double cell_w = std::max(1.0, 800.0 / static_cast<double>(values.cols()));
  const double cell_h = std::max(1.0, 400.0 / static_cast<double>(values.rows()));
  const double left = 40, top = 30, bottom = 30;
  const double pw = cell_w * static_cast<double>(values.cols());
  const double ph = cell_h * static_cast<double>(values.rows());
  Svg svg(pw + left + 10, ph + top + bottom);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      svg.rect(left + cell_w * static_cast<double>(c), top + cell_h * static_cast<double>(r), cell_w + 0.05,
               cell_h + 0.05, grey(values(r, c)));
    }
  }
  svg.text(left + pw / 2, 18, title, "middle");
  svg.text(left + pw / 2, top + ph + 20, xlabel, "middle", 11);
  svg.text(12, top + ph / 2, ylabel, "middle", 11);
  svg.save(path);
}

struct Series {
  std::string label;
  std::vector<double> y;
  std::string colour;
};

/// Line plot of several series against 1..len.
inline void line_plot_svg(const std::string& path, const std::vector<Series>& series, const std::string& title,
                          const std::string& xlabel) {
  const double w = 560, h = 340, left = 55, right = 130, top = 30, bottom = 40;
  Svg svg(w, h);
  double lo = 0.0, hi = 1e-12;
  std::size_t len = 1;
  for (const Series& s : series) {
    for (double v : s.y) hi = std::max(hi, v);
    len = std::max(len, s.y.size());
  }
  hi *= 1.05;
  const double pw = w - left - right, ph = h - top - bottom;
  const auto px = [&](std::size_t i) { return left + pw * (len > 1 ? static_cast<double>(i) / (len - 1) : 0.5); };
  const auto py = [&](double v) { return top + ph - ph * (v - lo) / (hi - lo); };
  svg.line(left, top + ph, left + pw, top + ph, "black");
  svg.line(left, top, left, top + ph, "black");
  for (std::size_t k = 0; k < series.size(); ++k) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < series[k].y.size(); ++i) pts.emplace_back(px(i), py(series[k].y[i]));
    svg.polyline(pts, series[k].colour);
    const double ly = top + 15 + 18 * static_cast<double>(k);
    svg.line(left + pw + 10, ly - 4, left + pw + 30, ly - 4, series[k].colour, 2.0);
    svg.text(left + pw + 35, ly, series[k].label, "start", 11);
  }
  svg.text(left + pw / 2, 18, title, "middle");
  svg.text(left + pw / 2, h - 10, xlabel, "middle", 11);
  svg.text(left - 5, top + 10, coord(hi), "end", 10);
  svg.text(left - 5, top + ph, coord(lo), "end", 10);
  svg.save(path);
}

}  // namespace bayesupdate::cli
