#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>

#include "prt/error.hpp"
#include "prt/evaluation.hpp"

namespace prt {

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w * h), Rgb{255, 255, 255}) {}

  void set(int x, int y, Rgb c) {
    if (x >= 0 && y >= 0 && x < w_ && y < h_) px_[static_cast<std::size_t>(y * w_ + x)] = c;
  }

  void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      for (int t = 0; t < thickness; ++t) set(x0, y0 + t, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    line(x0, y0, x1, y0, c);
    line(x1, y0, x1, y1, c);
    line(x1, y1, x0, y1, c);
    line(x0, y1, x0, y0, c);
  }

  void text(int x, int y, const std::string& s, Rgb c, int scale = 2);

  void write_png(const std::filesystem::path& path) const;

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

// 5x7 bitmap glyphs, one byte per row, bit 4 = leftmost column.
const std::array<std::uint8_t, 7>* glyph(char ch) {
  static const std::array<std::uint8_t, 7> letters[26] = {
      {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},
      {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E},
      {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}, {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},
      {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}, {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
      {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}, {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},
      {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}, {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},
      {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}, {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},
      {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},
      {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}, {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},
      {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}, {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},
      {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},
      {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}, {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},
      {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}};
  static const std::array<std::uint8_t, 7> digits[10] = {
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};
  static const std::array<std::uint8_t, 7> open{0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02};
  static const std::array<std::uint8_t, 7> close{0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08};
  static const std::array<std::uint8_t, 7> dot{0, 0, 0, 0, 0, 0x0C, 0x0C};
  static const std::array<std::uint8_t, 7> dash{0, 0, 0, 0x1F, 0, 0, 0};
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (u >= 'A' && u <= 'Z') return &letters[u - 'A'];
  if (u >= '0' && u <= '9') return &digits[u - '0'];
  switch (u) {
    case '(': return &open;
    case ')': return &close;
    case '.': return &dot;
    case '-': return &dash;
    default: return nullptr;
  }
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  for (char ch : s) {
    if (const auto* g = glyph(ch)) {
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if ((*g)[static_cast<std::size_t>(row)] & (0x10 >> col))
            for (int dy = 0; dy < scale; ++dy)
              for (int dx = 0; dx < scale; ++dx) set(x + col * scale + dx, y + row * scale + dy, c);
    }
    x += 6 * scale;
  }
}

void Canvas::write_png(const std::filesystem::path& path) const {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write plot " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed encoding plot " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w_), static_cast<png_uint_32>(h_), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(w_) * 3);
  for (int y = 0; y < h_; ++y) {
    for (int x = 0; x < w_; ++x) {
      const Rgb& p = px_[static_cast<std::size_t>(y * w_ + x)];
      row[static_cast<std::size_t>(3 * x)] = p.r;
      row[static_cast<std::size_t>(3 * x + 1)] = p.g;
      row[static_cast<std::size_t>(3 * x + 2)] = p.b;
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<double> concat(const std::vector<Window>& ws, double& span_s, double& fs) {
  std::vector<double> out;
  span_s = 0.0;
  fs = ws.empty() ? 0.0 : ws.front().sampling_rate_hz;
  for (const auto& w : ws) {
    if (w.sampling_rate_hz != fs) throw ArgumentError("plot: windows with differing sampling rates");
    out.insert(out.end(), w.samples.begin(), w.samples.end());
    span_s += static_cast<double>(w.samples.size()) / w.sampling_rate_hz;
  }
  return out;
}

}  // namespace

void render_comparison_plot(const std::vector<Window>& reference, const std::vector<Window>& synthetic,
                            const CleanedRespSignal& processed, const std::filesystem::path& out_path) {
  double ref_span = 0, syn_span = 0, ref_fs = 0, syn_fs = 0;
  const auto ref = concat(reference, ref_span, ref_fs);
  const auto syn = concat(synthetic, syn_span, syn_fs);
  const double proc_span = processed.samples.empty() ? 0.0 : processed.duration_s();
  if (ref.empty() || syn.empty() || processed.samples.empty()) throw ArgumentError("plot: empty trace");
  if (std::abs(ref_span - syn_span) > 1e-6 || std::abs(ref_span - proc_span) > 1e-6)
    throw ArgumentError("plot: reference, synthetic and processed spans differ");

  constexpr int kWidth = 960, kPanel = 200, kLeft = 60, kRight = 20, kTop = 16, kGap = 24, kBottom = 56;
  const int height = kTop + 3 * kPanel + 2 * kGap + kBottom;
  Canvas canvas(kWidth, height);
  const Rgb black{0, 0, 0}, grey{200, 200, 200};

  struct Trace {
    const std::vector<double>* y;
    double fs;
    Rgb color;
    const char* label;
  };
  const Trace traces[3] = {{&ref, ref_fs, {31, 119, 180}, "Reference respiratory signal"},
                           {&syn, syn_fs, {214, 39, 40}, "Synthetic respiratory signal"},
                           {&processed.samples, processed.sampling_rate_hz, {44, 160, 44},
                            "Processed synthetic respiratory signal"}};
  const int plot_w = kWidth - kLeft - kRight;
  for (int p = 0; p < 3; ++p) {
    const int top = kTop + p * (kPanel + kGap);
    const int bottom = top + kPanel;
    for (double t = 0.0; t <= ref_span + 1e-9; t += 10.0) {
      const int x = kLeft + static_cast<int>(std::lround(t / ref_span * plot_w));
      canvas.line(x, top, x, bottom, grey);
    }
    canvas.rect(kLeft, top, kLeft + plot_w, bottom, black);
    const auto& y = *traces[p].y;
    const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
    const double lo = *lo_it, hi = *hi_it;
    const double range = hi > lo ? hi - lo : 1.0;
    auto px = [&](std::size_t i) {
      const double t = static_cast<double>(i) / traces[p].fs;
      return kLeft + static_cast<int>(std::lround(t / ref_span * plot_w));
    };
    auto py = [&](double v) {
      return bottom - 8 - static_cast<int>(std::lround((v - lo) / range * (kPanel - 16 - 18)));
    };
    for (std::size_t i = 1; i < y.size(); ++i) canvas.line(px(i - 1), py(y[i - 1]), px(i), py(y[i]), traces[p].color, 2);
    canvas.text(kLeft + 6, top + 4, traces[p].label, black, 2);
  }
  const int axis_y = kTop + 3 * kPanel + 2 * kGap + 4;
  for (double t = 0.0; t <= ref_span + 1e-9; t += 10.0) {
    const int x = kLeft + static_cast<int>(std::lround(t / ref_span * plot_w));
    const std::string label = std::to_string(static_cast<int>(std::lround(t)));
    canvas.text(x - static_cast<int>(label.size()) * 6, axis_y, label, black, 2);
  }
  canvas.text(kLeft + plot_w / 2 - 48, axis_y + 22, "Time (s)", black, 2);
  canvas.write_png(out_path);
}

}  // namespace prt
