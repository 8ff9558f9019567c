#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "sasatr/io.hpp"
#include "sasatr/stats.hpp"

// Minimal static SVG figures: overlaid ROC curves, AUC box plots and
// 2-D scatter plots coloured by group.
namespace sasatr::plot {

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                           "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

inline const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

/// Square plot frame mapping data [x0,x1]x[y0,y1] onto the canvas.
struct Frame {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double left = 60, top = 30, size = 400;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * size; }
  double py(double y) const { return top + (y1 - y) / (y1 - y0) * size; }
};

inline std::string open_svg(double w, double h, const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + num(w / 2) + "\" y=\"18\" text-anchor=\"middle\">" + escape(title) + "</text>\n";
}

inline std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  std::string s = "<rect x=\"" + num(f.left) + "\" y=\"" + num(f.top) + "\" width=\"" + num(f.size) +
                  "\" height=\"" + num(f.size) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 4.0, y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s += "<text x=\"" + num(f.px(x)) + "\" y=\"" + num(f.top + f.size + 16) + "\" text-anchor=\"middle\">" + num(x) +
         "</text>\n";
    s += "<text x=\"" + num(f.left - 6) + "\" y=\"" + num(f.py(y) + 4) + "\" text-anchor=\"end\">" + num(y) +
         "</text>\n";
  }
  s += "<text x=\"" + num(f.left + f.size / 2) + "\" y=\"" + num(f.top + f.size + 34) + "\" text-anchor=\"middle\">" +
       escape(xlabel) + "</text>\n";
  s += "<text transform=\"translate(16," + num(f.top + f.size / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       escape(ylabel) + "</text>\n";
  return s;
}

inline std::string legend(const std::vector<std::string>& names, double x, double y) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double yy = y + 16.0 * static_cast<double>(i);
    s += "<rect x=\"" + num(x) + "\" y=\"" + num(yy - 9) + "\" width=\"10\" height=\"10\" fill=\"" + colour(i) +
         "\"/>\n<text x=\"" + num(x + 14) + "\" y=\"" + num(yy) + "\">" + escape(names[i]) + "</text>\n";
  }
  return s;
}

inline std::string roc_svg(const std::vector<std::pair<std::string, stats::RocCurve>>& curves) {
  Frame f;
  std::string s = open_svg(640, 480, "ROC") + axes(f, "false positive rate", "true positive rate");
  std::vector<std::string> names;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    std::string pts;
    for (const auto& p : curves[i].second.points) pts += num(f.px(p.fpr)) + "," + num(f.py(p.tpr)) + " ";
    s += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" + std::string(colour(i)) + "\" points=\"" + pts +
         "\"/>\n";
    names.push_back(curves[i].first + " (" + io::fmt(curves[i].second.auc, 3) + ")");
  }
  return s + legend(names, f.left + f.size + 12, f.top + 10) + "</svg>\n";
}

/// Box from lower to upper quartile, median line, whiskers to min and max.
inline std::string box_svg(const std::vector<stats::AucEnsemble>& ensembles) {
  double lo = 1.0, hi = 0.0;
  for (const auto& e : ensembles)
    for (double a : e.aucs) {
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  if (!(hi > lo)) {
    lo -= 0.01;
    hi += 0.01;
  }
  const double pad = 0.05 * (hi - lo);
  Frame f{0, 1, lo - pad, hi + pad};
  std::string s = open_svg(520, 500, "Bootstrap AUC") + axes(f, "", "AUC");
  const double slot = f.size / static_cast<double>(std::max<std::size_t>(1, ensembles.size()));
  for (std::size_t i = 0; i < ensembles.size(); ++i) {
    const auto& a = ensembles[i].aucs;
    const double q1 = stats::quantile(a, 0.25), q2 = stats::quantile(a, 0.5), q3 = stats::quantile(a, 0.75);
    const double mn = *std::min_element(a.begin(), a.end()), mx = *std::max_element(a.begin(), a.end());
    const double cx = f.left + slot * (static_cast<double>(i) + 0.5), hw = slot * 0.3;
    const std::string c = colour(i);
    s += "<line x1=\"" + num(cx) + "\" x2=\"" + num(cx) + "\" y1=\"" + num(f.py(mn)) + "\" y2=\"" + num(f.py(mx)) +
         "\" stroke=\"black\"/>\n";
    s += "<rect x=\"" + num(cx - hw) + "\" y=\"" + num(f.py(q3)) + "\" width=\"" + num(2 * hw) + "\" height=\"" +
         num(f.py(q1) - f.py(q3)) + "\" fill=\"" + c + "\" fill-opacity=\"0.5\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(cx - hw) + "\" x2=\"" + num(cx + hw) + "\" y1=\"" + num(f.py(q2)) + "\" y2=\"" +
         num(f.py(q2)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(cx) + "\" y=\"" + num(f.top + f.size + 30) + "\" text-anchor=\"middle\">" +
         escape(ensembles[i].name) + "</text>\n";
  }
  return s + "</svg>\n";
}

/// Points coloured by group, groups in sorted order.
inline std::string scatter_svg(const Eigen::MatrixXd& xy, const std::vector<std::string>& groups,
                               const std::string& title) {
  std::map<std::string, std::size_t> index;
  for (const auto& g : groups) index.emplace(g, 0);
  std::size_t next = 0;
  std::vector<std::string> names;
  for (auto& [g, i] : index) {
    i = next++;
    names.push_back(g);
  }
  const double xmin = xy.col(0).minCoeff(), xmax = xy.col(0).maxCoeff();
  const double ymin = xy.col(1).minCoeff(), ymax = xy.col(1).maxCoeff();
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-9}) * 1.05;
  const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  Frame f{cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2};
  std::string s = open_svg(600, 480, title) + axes(f, "t-SNE 1", "t-SNE 2");
  for (Eigen::Index i = 0; i < xy.rows(); ++i)
    s += "<circle r=\"2.5\" cx=\"" + num(f.px(xy(i, 0))) + "\" cy=\"" + num(f.py(xy(i, 1))) + "\" fill=\"" +
         colour(index[groups[static_cast<std::size_t>(i)]]) + "\" fill-opacity=\"0.7\"/>\n";
  return s + legend(names, f.left + f.size + 12, f.top + 10) + "</svg>\n";
}

}  // namespace sasatr::plot
