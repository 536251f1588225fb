#include "prt/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "prt/error.hpp"

namespace prt::dsp {

namespace {

enum class Kind { Low, High };

std::vector<Biquad> butter(Kind kind, int order, double cutoff_hz, double fs) {
  if (order < 2 || order % 2 != 0) throw ArgumentError("butterworth order must be even and >= 2");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < fs / 2.0))
    throw ArgumentError("butterworth cutoff must lie in (0, fs/2)");
  const double w0 = 2.0 * std::numbers::pi * cutoff_hz / fs;
  const double cw = std::cos(w0);
  const double sw = std::sin(w0);
  std::vector<Biquad> sections;
  for (int k = 0; k < order / 2; ++k) {
    // Q of the k-th conjugate pole pair of the analog prototype.
    const double q = 1.0 / (2.0 * std::sin((2.0 * k + 1.0) * std::numbers::pi / (2.0 * order)));
    const double alpha = sw / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad s;
    if (kind == Kind::Low) {
      s.b0 = (1.0 - cw) / 2.0 / a0;
      s.b1 = (1.0 - cw) / a0;
      s.b2 = s.b0;
    } else {
      s.b0 = (1.0 + cw) / 2.0 / a0;
      s.b1 = -(1.0 + cw) / a0;
      s.b2 = s.b0;
    }
    s.a1 = -2.0 * cw / a0;
    s.a2 = (1.0 - alpha) / a0;
    sections.push_back(s);
  }
  return sections;
}

}  // namespace

std::vector<double> Biquad::apply(std::span<const double> x) const {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  // Start in the steady state for a constant input equal to x[0].
  const double den = 1.0 + a1 + a2;
  const double dc = std::abs(den) > 1e-300 ? (b0 + b1 + b2) / den : 0.0;
  double x1 = x[0], x2 = x[0];
  double y1 = dc * x[0], y2 = dc * x[0];
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = b0 * x[i] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x[i];
    y2 = y1;
    y1 = v;
    y[i] = v;
  }
  return y;
}

std::vector<Biquad> butter_lowpass(int order, double cutoff_hz, double fs) {
  return butter(Kind::Low, order, cutoff_hz, fs);
}

std::vector<Biquad> butter_highpass(int order, double cutoff_hz, double fs) {
  return butter(Kind::High, order, cutoff_hz, fs);
}

std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x,
                             std::size_t pad) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  pad = std::min(pad, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  for (const auto& s : sections) ext = s.apply(ext);
  std::reverse(ext.begin(), ext.end());
  for (const auto& s : sections) ext = s.apply(ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::pair<double, double> linear_fit(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) return {0.0, 0.0};
  if (n == 1) return {x[0], 0.0};
  const double tm = (static_cast<double>(n) - 1.0) / 2.0;
  const double xm = mean(x);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - tm;
    sxy += dt * (x[i] - xm);
    sxx += dt * dt;
  }
  const double slope = sxy / sxx;
  return {xm - slope * tm, slope};
}

std::vector<double> detrend_linear(std::span<const double> x) {
  const auto [intercept, slope] = linear_fit(x);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - (intercept + slope * static_cast<double>(i));
  return y;
}

std::vector<double> moving_average(std::span<const double> x, std::size_t width) {
  const std::size_t n = x.size();
  std::vector<double> y(n);
  if (n == 0 || width <= 1) {
    std::copy(x.begin(), x.end(), y.begin());
    return y;
  }
  const std::size_t half = width / 2;
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + (width - half));
    y[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return y;
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size()));
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n <= 1) return w;
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n - 1));
  return w;
}

double dtft_power(std::span<const double> x, double freq_hz, double fs) {
  const double w = 2.0 * std::numbers::pi * freq_hz / fs;
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    re += x[i] * std::cos(w * static_cast<double>(i));
    im -= x[i] * std::sin(w * static_cast<double>(i));
  }
  return re * re + im * im;
}

}  // namespace prt::dsp
