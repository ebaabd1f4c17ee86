#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "centrifuge/videoio.hpp"

// Minimal raster charts written as PNG: a bar chart and a heat table, with a
// 5x7 bitmap font for labels.

namespace centrifuge::plot {

using Color = std::array<std::uint8_t, 3>;

namespace detail {

struct Glyph {
  char c;
  std::array<const char*, 7> rows;
};

// clang-format off
inline constexpr Glyph kFont[] = {
  {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
  {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
  {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
  {'3', {"#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "}},
  {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
  {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
  {'6', {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "}},
  {'7', {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "}},
  {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
  {'9', {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "}},
  {'a', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
  {'b', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
  {'c', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
  {'d', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
  {'e', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
  {'f', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
  {'g', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"}},
  {'h', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
  {'i', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
  {'j', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
  {'k', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
  {'l', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
  {'m', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
  {'n', {"#   #", "#   #", "##  #", "# # #", "#  ##", "#   #", "#   #"}},
  {'o', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
  {'p', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
  {'q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
  {'r', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
  {'s', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
  {'t', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
  {'u', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
  {'v', {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "}},
  {'w', {"#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "}},
  {'x', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
  {'y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
  {'z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
  {'.', {"     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "}},
  {',', {"     ", "     ", "     ", "     ", " ##  ", "  #  ", " #   "}},
  {'-', {"     ", "     ", "     ", "#####", "     ", "     ", "     "}},
  {'_', {"     ", "     ", "     ", "     ", "     ", "     ", "#####"}},
  {':', {"     ", " ##  ", " ##  ", "     ", " ##  ", " ##  ", "     "}},
  {'/', {"     ", "    #", "   # ", "  #  ", " #   ", "#    ", "     "}},
  {'(', {"   # ", "  #  ", " #   ", " #   ", " #   ", "  #  ", "   # "}},
  {')', {" #   ", "  #  ", "   # ", "   # ", "   # ", "  #  ", " #   "}},
  {'=', {"     ", "     ", "#####", "     ", "#####", "     ", "     "}},
  {'%', {"##   ", "##  #", "   # ", "  #  ", " #   ", "#  ##", "   ##"}},
  {'+', {"     ", "  #  ", "  #  ", "#####", "  #  ", "  #  ", "     "}},
};
// clang-format on

inline const Glyph* glyph(char c) {
  if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  for (const auto& g : kFont)
    if (g.c == c) return &g;
  return nullptr;
}

}  // namespace detail

class Canvas {
 public:
  Canvas(int width, int height, Color background = {255, 255, 255}) : img_{width, height, {}} {
    img_.rgb.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t p = 0; p < img_.rgb.size(); p += 3) std::copy(background.begin(), background.end(), &img_.rgb[p]);
  }

  int width() const { return img_.width; }
  int height() const { return img_.height; }

  void pixel(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
    std::copy(c.begin(), c.end(), &img_.rgb[(static_cast<std::size_t>(y) * img_.width + x) * 3]);
  }
  void rect(int x0, int y0, int x1, int y1, Color c) {
    for (int y = std::min(y0, y1); y < std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x < std::max(x0, x1); ++x) pixel(x, y, c);
  }
  /// Text with its top-left corner at (x, y); unknown characters render as blanks.
  void text(int x, int y, const std::string& s, Color c = {0, 0, 0}, int scale = 1) {
    for (char ch : s) {
      if (const auto* g = detail::glyph(ch))
        for (int r = 0; r < 7; ++r)
          for (int k = 0; k < 5; ++k)
            if (g->rows[r][k] == '#') rect(x + k * scale, y + r * scale, x + (k + 1) * scale, y + (r + 1) * scale, c);
      x += 6 * scale;
    }
  }
  static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

  void save(const fs::path& path) const { png::write(path, img_); }
  const png::Image& image() const { return img_; }

 private:
  png::Image img_;
};

inline std::string format_value(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Vertical bars, one per label, with the value printed above each bar.
inline Canvas bar_chart(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<double>& values, const std::vector<Color>& colors = {}) {
  const int bar = 48, gap = 16, left = 20, top = 40, plot_h = 220, bottom = 40;
  const int n = static_cast<int>(values.size());
  int label_w = 0;
  for (const auto& l : labels) label_w = std::max(label_w, Canvas::text_width(l));
  const int slot = std::max(bar + gap, label_w + 8);
  Canvas cv(std::max(left * 2 + n * slot, Canvas::text_width(title, 2) + 2 * left), top + plot_h + bottom);
  cv.text(left, 10, title, {0, 0, 0}, 2);
  double vmax = 0;
  for (double v : values)
    if (std::isfinite(v)) vmax = std::max(vmax, v);
  if (vmax <= 0) vmax = 1;
  const int base_y = top + plot_h;
  cv.rect(left - 4, base_y, cv.width() - left + 4, base_y + 1, {0, 0, 0});
  for (int i = 0; i < n; ++i) {
    const double v = std::isfinite(values[i]) ? std::max(0.0, values[i]) : 0.0;
    const int h = static_cast<int>(std::round((plot_h - 16) * v / vmax));
    const int x = left + i * slot + (slot - bar) / 2;
    const Color c = i < static_cast<int>(colors.size()) ? colors[i] : Color{70, 110, 170};
    cv.rect(x, base_y - h, x + bar, base_y, c);
    cv.rect(x, base_y - h, x + bar, base_y - h + 1, {0, 0, 0});
    const auto txt = format_value(values[i]);
    cv.text(x + (bar - Canvas::text_width(txt)) / 2, base_y - h - 10, txt);
    if (i < static_cast<int>(labels.size()))
      cv.text(left + i * slot + (slot - Canvas::text_width(labels[i])) / 2, base_y + 8, labels[i]);
  }
  return cv;
}

/// Grid of cells shaded from white (table minimum) to dark red (table
/// maximum), each annotated with its value.
inline Canvas heat_table(const std::string& title, const std::vector<std::string>& rows,
                         const std::vector<std::string>& cols, const std::vector<std::vector<double>>& values) {
  int row_w = 0, col_w = 60;
  for (const auto& r : rows) row_w = std::max(row_w, Canvas::text_width(r));
  for (const auto& c : cols) col_w = std::max(col_w, Canvas::text_width(c) + 10);
  const int cell_h = 36, left = 16, top = 56;
  Canvas cv(std::max(left * 2 + row_w + 10 + col_w * static_cast<int>(cols.size()), Canvas::text_width(title, 2) + 32),
            top + cell_h * static_cast<int>(rows.size()) + 16);
  cv.text(left, 10, title, {0, 0, 0}, 2);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : values)
    for (double v : r)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  const int x0 = left + row_w + 10;
  for (std::size_t j = 0; j < cols.size(); ++j)
    cv.text(x0 + static_cast<int>(j) * col_w + (col_w - Canvas::text_width(cols[j])) / 2, top - 14, cols[j]);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int y = top + static_cast<int>(i) * cell_h;
    cv.text(left, y + cell_h / 2 - 3, rows[i]);
    for (std::size_t j = 0; j < cols.size() && j < values[i].size(); ++j) {
      const double v = values[i][j];
      const double t = std::isfinite(v) && hi > lo ? (v - lo) / (hi - lo) : 0.0;
      const Color c{static_cast<std::uint8_t>(255 - 75 * t), static_cast<std::uint8_t>(255 - 205 * t),
                    static_cast<std::uint8_t>(255 - 205 * t)};
      const int x = x0 + static_cast<int>(j) * col_w;
      cv.rect(x, y, x + col_w, y + cell_h, c);
      cv.rect(x, y, x + col_w, y + 1, {120, 120, 120});
      cv.rect(x, y, x + 1, y + cell_h, {120, 120, 120});
      const auto txt = format_value(v);
      cv.text(x + (col_w - Canvas::text_width(txt)) / 2, y + cell_h / 2 - 3, txt, t > 0.6 ? Color{255, 255, 255} : Color{0, 0, 0});
    }
  }
  return cv;
}

}  // namespace centrifuge::plot
