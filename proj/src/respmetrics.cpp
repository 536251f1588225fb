#include "prt/respmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>

#include "prt/dsp.hpp"
#include "prt/error.hpp"

namespace prt {

namespace {

constexpr double kDurationTolerance = 1e-9;

std::string band_tag(const RespConfig& cfg) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "bandpass_%.2f-%.2fHz_zero_phase", cfg.band_low_hz, cfg.band_high_hz);
  return buf;
}

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

std::vector<double> frequency_grid(const RespConfig& cfg) {
  std::vector<double> f;
  for (int j = 0;; ++j) {
    const double v = cfg.band_low_hz + j * cfg.frequency_step_hz;
    if (v > cfg.band_high_hz + 1e-12) break;
    f.push_back(v);
  }
  return f;
}

}  // namespace

std::string to_string(RRMethod m) { return m == RRMethod::PEAK_COUNT ? "PEAK_COUNT" : "SPECTRAL"; }

CleanedRespSignal denoise(std::span<const double> samples, double fs, const RespConfig& cfg) {
  if (!(fs > 2.0 * cfg.band_high_hz))
    throw ArgumentError("denoise: sampling rate must exceed twice the upper band edge");
  if (static_cast<double>(samples.size()) / fs < 10.0 - kDurationTolerance)
    throw ArgumentError("denoise: at least 10 s of data required");
  for (double v : samples)
    if (!std::isfinite(v)) throw ArgumentError("denoise: non-finite sample");

  CleanedRespSignal out;
  out.sampling_rate_hz = fs;

  auto x = dsp::detrend_linear(samples);
  out.preprocessing_applied.push_back("detrend_linear");

  // A purely linear (or constant) input leaves only rounding residue.
  const double in_scale = max_abs(samples);
  if (in_scale == 0.0 || max_abs(x) <= 1e-10 * in_scale) {
    out.samples.assign(samples.size(), 0.0);
    out.preprocessing_applied.push_back(band_tag(cfg));
    out.preprocessing_applied.push_back("moving_average");
    out.preprocessing_applied.push_back("demean");
    return out;
  }

  auto sections = dsp::butter_highpass(2, cfg.band_low_hz, fs);
  const auto low = dsp::butter_lowpass(2, cfg.band_high_hz, fs);
  sections.insert(sections.end(), low.begin(), low.end());
  const auto pad = static_cast<std::size_t>(std::ceil(fs / cfg.band_low_hz));
  x = dsp::filtfilt(sections, x, pad);
  out.preprocessing_applied.push_back(band_tag(cfg));

  auto width = static_cast<std::size_t>(std::lround(cfg.smoothing_s * fs));
  if (width % 2 == 0) ++width;
  x = dsp::moving_average(x, width);
  out.preprocessing_applied.push_back("moving_average");

  const double m = dsp::mean(x);
  for (double& v : x) v -= m;
  out.preprocessing_applied.push_back("demean");

  out.samples = std::move(x);
  return out;
}

std::vector<std::size_t> detect_breath_peaks(const CleanedRespSignal& cleaned, const RespConfig& cfg) {
  const auto& x = cleaned.samples;
  const std::size_t n = x.size();
  if (n < 3) return {};
  const double sd = dsp::stddev(x);
  if (!(sd > 0.0)) return {};

  // Local maxima; plateaus report their middle sample.
  std::vector<std::size_t> peaks;
  for (std::size_t i = 1; i + 1 < n;) {
    if (x[i - 1] < x[i]) {
      std::size_t ahead = i + 1;
      while (ahead < n - 1 && x[ahead] == x[i]) ++ahead;
      if (x[ahead] < x[i]) {
        peaks.push_back((i + ahead - 1) / 2);
        i = ahead;
        continue;
      }
    }
    ++i;
  }

  std::vector<std::size_t> prominent;
  const double min_prominence = cfg.min_prominence_std * sd;
  for (std::size_t p : peaks) {
    double left_min = x[p];
    for (std::size_t i = p; i-- > 0;) {
      if (x[i] > x[p]) break;
      left_min = std::min(left_min, x[i]);
    }
    double right_min = x[p];
    for (std::size_t i = p + 1; i < n; ++i) {
      if (x[i] > x[p]) break;
      right_min = std::min(right_min, x[i]);
    }
    if (x[p] - std::max(left_min, right_min) >= min_prominence) prominent.push_back(p);
  }

  // Refractory spacing: keep the tallest peaks first.
  const double min_gap = cfg.min_breath_spacing_s * cleaned.sampling_rate_hz;
  std::vector<std::size_t> order(prominent.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[prominent[a]] > x[prominent[b]]; });
  std::vector<bool> keep(prominent.size(), true);
  for (std::size_t oi : order) {
    if (!keep[oi]) continue;
    for (std::size_t j = 0; j < prominent.size(); ++j) {
      if (j == oi || !keep[j]) continue;
      const double gap = std::abs(static_cast<double>(prominent[j]) - static_cast<double>(prominent[oi]));
      if (gap < min_gap) keep[j] = false;
    }
  }
  std::vector<std::size_t> result;
  for (std::size_t j = 0; j < prominent.size(); ++j)
    if (keep[j]) result.push_back(prominent[j]);
  return result;
}

std::vector<double> detect_breaths(const CleanedRespSignal& cleaned, const RespConfig& cfg) {
  const auto peaks = detect_breath_peaks(cleaned, cfg);
  const auto& x = cleaned.samples;
  const double fs = cleaned.sampling_rate_hz;
  std::vector<double> onsets;
  onsets.reserve(peaks.size());
  std::size_t lower = 0;  // first index after the previous peak
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    const std::size_t p = peaks[k];
    double onset = -1.0;
    for (std::size_t j = p; j > lower; --j) {
      if (x[j - 1] < 0.0 && x[j] >= 0.0) {
        onset = static_cast<double>(j - 1) + (0.0 - x[j - 1]) / (x[j] - x[j - 1]);
        break;
      }
    }
    if (onset < 0.0) {
      // No rising zero crossing: fall back to the trough before the peak.
      std::size_t arg = lower;
      for (std::size_t j = lower; j <= p; ++j)
        if (x[j] < x[arg]) arg = j;
      // A first peak whose rise starts high above zero began before the record.
      if (k == 0 && arg == 0 && x[0] > 0.5 * dsp::stddev(x)) {
        lower = p + 1;
        continue;
      }
      onset = static_cast<double>(arg);
    }
    const double t = onset / fs;
    if (onsets.empty() || t > onsets.back()) onsets.push_back(t);
    lower = p + 1;
  }

  // A breath that starts inside the record but peaks after its end: rising
  // crossing after the last peak followed by a prominent rise.
  if (!peaks.empty() && x.size() >= 2) {
    const double min_rise = cfg.min_prominence_std * dsp::stddev(x);
    std::size_t j = peaks.back() + 1;
    double trough = x[peaks.back()];
    for (; j < x.size(); ++j) {
      trough = std::min(trough, x[j - 1]);
      if (x[j - 1] < 0.0 && x[j] >= 0.0) break;
    }
    if (j < x.size()) {
      const double crossing = static_cast<double>(j - 1) + (0.0 - x[j - 1]) / (x[j] - x[j - 1]);
      const double top = *std::max_element(x.begin() + static_cast<std::ptrdiff_t>(j), x.end());
      const double t = crossing / fs;
      if (top - trough >= min_rise && (onsets.empty() || t - onsets.back() >= cfg.min_breath_spacing_s))
        onsets.push_back(t);
    }
  }
  return onsets;
}

RREstimate estimate_rr_count(std::span<const double> samples, double fs, const RespConfig& cfg) {
  if (!(fs > 0.0)) throw ArgumentError("estimate_rr_count: sampling rate must be positive");
  const double duration = static_cast<double>(samples.size()) / fs;
  if (duration < 30.0 - kDurationTolerance)
    throw ArgumentError("estimate_rr_count: at least 30 s of data required");

  const auto cleaned = denoise(samples, fs, cfg);
  const auto onsets = detect_breaths(cleaned, cfg);

  RREstimate est;
  est.method = RRMethod::PEAK_COUNT;
  est.duration_s = duration;
  est.breath_count = static_cast<int>(onsets.size());
  est.rate_brpm = est.breath_count * 60.0 / duration;
  if (onsets.size() >= 3) {
    std::vector<double> intervals;
    for (std::size_t i = 1; i < onsets.size(); ++i) intervals.push_back(onsets[i] - onsets[i - 1]);
    const double m = dsp::mean(intervals);
    const double cv = m > 0.0 ? dsp::stddev(intervals) / m : 1.0;
    est.confidence = std::clamp(1.0 - cv, 0.0, 1.0);
  }
  return est;
}

SoftRate soft_spectral_rate(std::span<const double> samples, double fs, double beta,
                            const RespConfig& cfg, std::vector<double>* gradient) {
  const std::size_t n = samples.size();
  if (gradient) gradient->assign(n, 0.0);
  SoftRate out;
  if (n < 3 || !(fs > 0.0)) {
    out.degenerate = true;
    return out;
  }

  const std::size_t seg_len = std::min<std::size_t>(
      n, std::max<std::size_t>(3, static_cast<std::size_t>(std::lround(cfg.welch_segment_s * fs))));
  const std::size_t step = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(seg_len) * (1.0 - cfg.welch_overlap))));
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + seg_len <= n; s += step) starts.push_back(s);
  const double inv_segments = 1.0 / static_cast<double>(starts.size());

  const auto freqs = frequency_grid(cfg);
  const std::size_t m = freqs.size();
  const auto window = dsp::hann(seg_len);

  // Windowed, detrended segments and their DTFT on the grid.
  std::vector<std::vector<double>> windowed(starts.size());
  std::vector<std::vector<std::complex<double>>> spectra(starts.size(), std::vector<std::complex<double>>(m));
  std::vector<double> power(m, 0.0);
  double residual_energy = 0.0, input_energy = 0.0;
  for (double v : samples) input_energy += v * v;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    auto u = dsp::detrend_linear(samples.subspan(starts[s], seg_len));
    for (std::size_t i = 0; i < seg_len; ++i) {
      residual_energy += u[i] * u[i];
      u[i] *= window[i];
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double w = 2.0 * std::numbers::pi * freqs[j] / fs;
      const std::complex<double> rot(std::cos(w), -std::sin(w));
      std::complex<double> phase(1.0, 0.0), z(0.0, 0.0);
      for (std::size_t i = 0; i < seg_len; ++i) {
        z += u[i] * phase;
        phase *= rot;
      }
      spectra[s][j] = z;
      power[j] += std::norm(z) * inv_segments;
    }
    windowed[s] = std::move(u);
  }

  const double mean_power = std::accumulate(power.begin(), power.end(), 0.0) / static_cast<double>(m);
  if (input_energy == 0.0 || residual_energy <= 1e-24 * input_energy || !(mean_power > 0.0)) {
    out.degenerate = true;
    return out;
  }

  std::vector<double> weights(m);
  double amax = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) amax = std::max(amax, beta * power[j] / mean_power);
  double z = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    weights[j] = std::exp(beta * power[j] / mean_power - amax);
    z += weights[j];
  }
  double centroid = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    weights[j] /= z;
    centroid += weights[j] * freqs[j];
  }
  out.rate_brpm = 60.0 * centroid;

  if (!gradient) return out;

  // d rate / d normalised power, then through the band-mean normalisation.
  std::vector<double> g_norm(m);
  double gp_dot = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    g_norm[j] = 60.0 * beta * weights[j] * (freqs[j] - centroid);
    gp_dot += g_norm[j] * power[j];
  }
  std::vector<double> g_power(m);
  for (std::size_t j = 0; j < m; ++j)
    g_power[j] = g_norm[j] / mean_power - gp_dot / (static_cast<double>(m) * mean_power * mean_power);

  for (std::size_t s = 0; s < starts.size(); ++s) {
    std::vector<double> gv(seg_len, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      const double coef = 2.0 * inv_segments * g_power[j];
      const double re = spectra[s][j].real(), im = spectra[s][j].imag();
      const double w = 2.0 * std::numbers::pi * freqs[j] / fs;
      const std::complex<double> rot(std::cos(w), -std::sin(w));
      std::complex<double> phase(1.0, 0.0);  // cos(theta) - i sin(theta)
      for (std::size_t i = 0; i < seg_len; ++i) {
        gv[i] += coef * (re * phase.real() + im * phase.imag());
        phase *= rot;
      }
    }
    for (std::size_t i = 0; i < seg_len; ++i) gv[i] *= window[i];
    // Linear detrend is an orthogonal projection, hence self-adjoint.
    const auto gx = dsp::detrend_linear(gv);
    for (std::size_t i = 0; i < seg_len; ++i) (*gradient)[starts[s] + i] += gx[i];
  }
  return out;
}

RREstimate estimate_rr_spectral(std::span<const double> samples, double fs, double beta,
                                const RespConfig& cfg) {
  if (!(fs > 0.0)) throw ArgumentError("estimate_rr_spectral: sampling rate must be positive");
  const double duration = static_cast<double>(samples.size()) / fs;
  if (duration < 30.0 - kDurationTolerance)
    throw ArgumentError("estimate_rr_spectral: at least 30 s of data required");

  RREstimate est;
  est.method = RRMethod::SPECTRAL;
  est.duration_s = duration;
  const auto soft = soft_spectral_rate(samples, fs, beta, cfg);
  if (soft.degenerate) return est;
  est.rate_brpm = soft.rate_brpm;
  est.breath_count = static_cast<int>(std::lround(est.rate_brpm * duration / 60.0));

  // Confidence: share of band power near the estimated frequency, relative to
  // what a flat spectrum would put there.
  const auto freqs = frequency_grid(cfg);
  const std::size_t seg_len = std::min<std::size_t>(
      samples.size(), static_cast<std::size_t>(std::lround(cfg.welch_segment_s * fs)));
  const std::size_t step = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(seg_len) * (1.0 - cfg.welch_overlap))));
  const auto window = dsp::hann(seg_len);
  std::vector<double> power(freqs.size(), 0.0);
  for (std::size_t s = 0; s + seg_len <= samples.size(); s += step) {
    auto u = dsp::detrend_linear(samples.subspan(s, seg_len));
    for (std::size_t i = 0; i < seg_len; ++i) u[i] *= window[i];
    for (std::size_t j = 0; j < freqs.size(); ++j) power[j] += dsp::dtft_power(u, freqs[j], fs);
  }
  const double center = est.rate_brpm / 60.0;
  double near = 0.0, total = 0.0;
  std::size_t near_bins = 0;
  for (std::size_t j = 0; j < freqs.size(); ++j) {
    total += power[j];
    if (std::abs(freqs[j] - center) <= cfg.confidence_halfwidth_hz) {
      near += power[j];
      ++near_bins;
    }
  }
  const double uniform = static_cast<double>(near_bins) / static_cast<double>(freqs.size());
  if (total > 0.0 && uniform < 1.0)
    est.confidence = std::clamp((near / total - uniform) / (1.0 - uniform), 0.0, 1.0);
  return est;
}

double mae(std::span<const double> estimates, std::span<const double> references) {
  if (estimates.size() != references.size())
    throw ArgumentError("mae: estimates and references differ in length");
  if (estimates.empty()) throw ArgumentError("mae: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i) sum += std::abs(estimates[i] - references[i]);
  return sum / static_cast<double>(estimates.size());
}

}  // namespace prt
