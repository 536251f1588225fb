#pragma once

// Small signal-processing building blocks shared by preprocess and respmetrics.

#include <span>
#include <vector>

namespace prt::dsp {

/// Second-order IIR section, direct form I. a0 is normalised to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;

  std::vector<double> apply(std::span<const double> x) const;
};

/// Butterworth sections via the bilinear transform with pre-warping.
/// `order` must be even; one biquad per pole pair.
std::vector<Biquad> butter_lowpass(int order, double cutoff_hz, double fs);
std::vector<Biquad> butter_highpass(int order, double cutoff_hz, double fs);

/// Forward-backward filtering through all sections with odd-symmetric edge
/// extension of `pad` samples (clamped to n - 1).
std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x,
                             std::size_t pad);

/// Least-squares line through (i, x[i]); returns {intercept, slope}.
std::pair<double, double> linear_fit(std::span<const double> x);

std::vector<double> detrend_linear(std::span<const double> x);

/// Centered moving average of `width` samples; edges use the available samples.
std::vector<double> moving_average(std::span<const double> x, std::size_t width);

double mean(std::span<const double> x);
double stddev(std::span<const double> x);  // population

/// Symmetric Hann window of length n.
std::vector<double> hann(std::size_t n);

/// Power of the DTFT of x at `freq_hz` (not normalised).
double dtft_power(std::span<const double> x, double freq_hz, double fs);

}  // namespace prt::dsp
