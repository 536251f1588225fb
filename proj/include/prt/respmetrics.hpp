#pragma once

// Respiratory waveform cleaning, breath detection and rate estimation.

#include <span>
#include <string>
#include <vector>

namespace prt {

enum class RRMethod { PEAK_COUNT, SPECTRAL };

struct RREstimate {
  double rate_brpm = 0.0;
  int breath_count = 0;
  RRMethod method = RRMethod::PEAK_COUNT;
  double duration_s = 0.0;
  double confidence = 0.0;
};

struct CleanedRespSignal {
  std::vector<double> samples;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> preprocessing_applied;

  double duration_s() const { return static_cast<double>(samples.size()) / sampling_rate_hz; }
};

struct RespConfig {
  double band_low_hz = 0.1;
  double band_high_hz = 0.8;
  double smoothing_s = 0.25;
  double min_prominence_std = 0.3;  // peak prominence threshold, in units of signal std
  double min_breath_spacing_s = 1.25;

  // Spectral estimator
  double welch_segment_s = 30.0;
  double welch_overlap = 0.5;
  double frequency_step_hz = 0.002;
  double spectral_beta = 50.0;
  double confidence_halfwidth_hz = 0.05;
};

/// Linear detrend, zero-phase band-pass, moving-average smoothing, demean.
CleanedRespSignal denoise(std::span<const double> samples, double fs, const RespConfig& cfg = {});

/// Sorted onset times (s) of detected breaths.
std::vector<double> detect_breaths(const CleanedRespSignal& cleaned, const RespConfig& cfg = {});

/// Peak indices that survive the prominence and spacing rules (exposed for plotting/tests).
std::vector<std::size_t> detect_breath_peaks(const CleanedRespSignal& cleaned,
                                             const RespConfig& cfg = {});

RREstimate estimate_rr_count(std::span<const double> samples, double fs, const RespConfig& cfg = {});

RREstimate estimate_rr_spectral(std::span<const double> samples, double fs, double beta,
                                const RespConfig& cfg = {});

/// The smooth rate functional behind estimate_rr_spectral: Welch periodogram on
/// a dense grid over the respiratory band, normalised by its band mean, then a
/// softmax(beta * .)-weighted frequency centroid times 60. When `gradient` is
/// non-null it receives d(rate)/d(samples). `degenerate` is set when the band
/// carries no energy (rate and gradient are then 0).
struct SoftRate {
  double rate_brpm = 0.0;
  bool degenerate = false;
};
SoftRate soft_spectral_rate(std::span<const double> samples, double fs, double beta,
                            const RespConfig& cfg, std::vector<double>* gradient = nullptr);

/// Mean absolute error between paired estimates and references.
double mae(std::span<const double> estimates, std::span<const double> references);

std::string to_string(RRMethod m);

}  // namespace prt
