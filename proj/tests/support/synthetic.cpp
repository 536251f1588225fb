#include "synthetic.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>

#include "prt/error.hpp"

namespace prt::testing {

std::vector<double> sinusoid(double f, double fs, double seconds, double phase) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs + phase);
  return x;
}

std::vector<double> add_noise_snr(const std::vector<double>& x, double snr_db, std::uint64_t seed) {
  double power = 0.0;
  for (double v : x) power += v * v;
  power /= static_cast<double>(x.size());
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  auto y = x;
  for (double& v : y) v += noise(rng);
  return y;
}

SubjectBundle make_subject(const SyntheticSpec& spec) {
  const double pi = std::numbers::pi;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.fs));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> phase0(0.0, 2.0 * pi);

  SubjectBundle b;
  b.subject_id = spec.subject_id;
  b.ppg = {spec.subject_id, Channel::PPG, spec.fs, std::vector<double>(n)};
  b.resp = {spec.subject_id, Channel::RESP_IMPEDANCE, spec.fs, std::vector<double>(n)};

  const double rp = phase0(rng);
  double cardiac_phase = phase0(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.fs;
    const double breath = std::sin(2.0 * pi * spec.breath_hz * t + rp);
    b.resp.samples[i] = breath + 0.05 * t / spec.duration_s + spec.resp_noise * unit(rng);
    // Respiratory sinus arrhythmia, amplitude and baseline modulation.
    cardiac_phase += 2.0 * pi * spec.heart_hz * (1.0 + 0.05 * breath) / spec.fs;
    const double pulse = std::pow(0.5 * (1.0 + std::sin(cardiac_phase)), 3.0);
    b.ppg.samples[i] = (1.0 + 0.25 * breath) * pulse + 0.3 * breath + spec.ppg_noise * unit(rng);
  }

  if (spec.annotations) {
    // Onsets at the rising zero crossings of the breathing sinusoid.
    std::vector<double> onsets;
    const double period = 1.0 / spec.breath_hz;
    double t = (2.0 * pi - rp) / (2.0 * pi * spec.breath_hz);
    while (t - period >= 0.0) t -= period;
    for (; t < spec.duration_s; t += period) onsets.push_back(t);
    for (AnnotatorId id : {AnnotatorId::A1, AnnotatorId::A2}) {
      std::uniform_real_distribution<double> jitter(-spec.annotator_jitter_s, spec.annotator_jitter_s);
      BreathAnnotation a{spec.subject_id, id, {}};
      for (double o : onsets) {
        // Quantise to the sample grid, as the archive stores sample indices.
        const double q = std::round((o + jitter(rng)) * spec.fs) / spec.fs;
        if (q >= 0.0 && q < spec.duration_s && (a.onset_times_s.empty() || q > a.onset_times_s.back()))
          a.onset_times_s.push_back(q);
      }
      b.annotations.push_back(std::move(a));
    }
  } else {
    b.annotation_status = AnnotationStatus::MISSING;
    b.annotation_note = "synthetic subject without annotations";
  }
  return b;
}

void write_bidmc_csv(const SubjectBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream sig(dir / (bundle.subject_id + "_Signals.csv"));
  if (!sig) throw IoError("cannot write synthetic signals");
  sig << "Time [s], RESP, PLETH, V, AVR, II\n" << std::setprecision(17);
  for (std::size_t i = 0; i < bundle.ppg.samples.size(); ++i)
    sig << static_cast<double>(i) / bundle.ppg.sampling_rate_hz << "," << bundle.resp.samples[i] << ","
        << bundle.ppg.samples[i] << ",0,0,0\n";
  if (bundle.annotations.empty()) return;
  std::ofstream br(dir / (bundle.subject_id + "_Breaths.csv"));
  br << " breaths ann1, breaths ann2\n";
  const auto& a1 = bundle.annotations[0].onset_times_s;
  const auto& a2 = bundle.annotations.size() > 1 ? bundle.annotations[1].onset_times_s : a1;
  for (std::size_t i = 0; i < std::max(a1.size(), a2.size()); ++i) {
    if (i < a1.size()) br << std::llround(a1[i] * bundle.ppg.sampling_rate_hz) + 1;
    br << ",";
    if (i < a2.size()) br << std::llround(a2[i] * bundle.ppg.sampling_rate_hz) + 1;
    br << "\n";
  }
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("prt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace prt::testing
