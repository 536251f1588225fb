#pragma once

// Normalisation, anti-aliased rate conversion and windowing of raw records
// into aligned PPG/respiration window pairs.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prt/dataset.hpp"

namespace prt {

struct Window {
  std::string subject_id;
  std::size_t window_index = 0;
  double start_time_s = 0.0;
  double sampling_rate_hz = 30.0;
  std::vector<double> samples;

  /// Length equals window_s * rate, values in [0, 1], all finite.
  void validate(std::size_t expected_length) const;
};

struct WindowPair {
  Window ppg;
  Window resp;
};

struct Normalized {
  std::vector<double> samples;
  bool degenerate = false;  // constant input: every output is 0.5
};

Normalized normalize_minmax(std::span<const double> samples);

/// Band-limited rate conversion (downsampling only). Output length is
/// floor(len * to_hz / from_hz); from_hz == to_hz returns the input unchanged.
std::vector<double> resample(std::span<const double> samples, double from_hz, double to_hz);

/// Low-pass cutoff used by resample for a given target rate.
double resample_cutoff_hz(double to_hz);

struct WindowingConfig {
  double window_s = 30.0;
  double stride_s = 30.0;
  double target_rate_hz = 30.0;
  bool renormalize_per_window = true;
};

/// Cuts a record (already at the target rate and normalised) into windows at
/// offsets 0, stride, 2*stride, ...; the trailing partial window is dropped.
std::vector<Window> make_windows(const SignalRecord& record, double window_s = 30.0,
                                 double stride_s = 30.0, bool renormalize = true);

struct PairingResult {
  std::vector<WindowPair> pairs;
  std::size_t dropped = 0;
};

PairingResult make_pairs(const std::vector<Window>& ppg_windows, const std::vector<Window>& resp_windows);

/// Full per-subject pipeline: normalise, resample, window, pair.
PairingResult prepare_subject(const SubjectBundle& bundle, const WindowingConfig& cfg = {});

// Window-pair store: `windows.bin` holds f64 samples (ppg then resp per pair,
// native little-endian), `manifest.csv` indexes it with columns
//   subject_id,window_index,start_time_s,sampling_rate_hz,length,ppg_offset,resp_offset
// where offsets are byte offsets into windows.bin.
void write_window_store(const std::vector<WindowPair>& pairs, const std::filesystem::path& dir);
std::vector<WindowPair> read_window_store(const std::filesystem::path& dir);

}  // namespace prt
