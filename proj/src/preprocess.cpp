#include "prt/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "prt/error.hpp"

namespace prt {

namespace {

constexpr double kCutoffFraction = 0.45;  // of the target rate
constexpr double kKernelZeroCrossings = 16.0;
constexpr double kKaiserBeta = 8.0;

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double r) {
  if (std::abs(r) >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / std::cyl_bessel_i(0.0, kKaiserBeta);
}

std::size_t round_count(double v) { return static_cast<std::size_t>(std::llround(v)); }

}  // namespace

void Window::validate(std::size_t expected_length) const {
  if (samples.size() != expected_length)
    throw ArgumentError("window " + subject_id + "#" + std::to_string(window_index) + " has length " +
                        std::to_string(samples.size()) + ", expected " + std::to_string(expected_length));
  for (double v : samples)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw ArgumentError("window " + subject_id + "#" + std::to_string(window_index) +
                          " has a sample outside [0, 1]");
}

Normalized normalize_minmax(std::span<const double> samples) {
  if (samples.empty()) throw ArgumentError("normalize_minmax: empty input");
  double lo = samples[0], hi = samples[0];
  for (double v : samples) {
    if (!std::isfinite(v)) throw ArgumentError("normalize_minmax: non-finite sample");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Normalized out;
  out.samples.resize(samples.size());
  if (hi == lo) {
    std::fill(out.samples.begin(), out.samples.end(), 0.5);
    out.degenerate = true;
    return out;
  }
  const double range = hi - lo;
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.samples[i] = std::clamp((samples[i] - lo) / range, 0.0, 1.0);
  return out;
}

double resample_cutoff_hz(double to_hz) { return kCutoffFraction * to_hz; }

std::vector<double> resample(std::span<const double> samples, double from_hz, double to_hz) {
  if (!(to_hz > 0.0) || !(from_hz > 0.0)) throw ArgumentError("resample: rates must be positive");
  if (to_hz > from_hz) throw UnsupportedUpsampleError("resample: upsampling is not supported");
  if (to_hz == from_hz) return {samples.begin(), samples.end()};

  const std::size_t n_in = samples.size();
  const auto n_out = static_cast<std::size_t>(std::floor(static_cast<double>(n_in) * to_hz / from_hz + 1e-9));
  const double nu = resample_cutoff_hz(to_hz) / from_hz;  // cycles per input sample
  const double half = kKernelZeroCrossings / (2.0 * nu);
  const double ratio = from_hz / to_hz;

  std::vector<double> out(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double t = static_cast<double>(k) * ratio;
    const auto lo = static_cast<std::ptrdiff_t>(std::max(0.0, std::ceil(t - half)));
    const auto hi = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(n_in) - 1.0, std::floor(t + half)));
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t j = lo; j <= hi; ++j) {
      const double tau = t - static_cast<double>(j);
      const double w = 2.0 * nu * sinc(2.0 * nu * tau) * kaiser(tau / half);
      acc += w * samples[static_cast<std::size_t>(j)];
      wsum += w;
    }
    // Normalising by the tap sum keeps DC exact, including at the truncated edges.
    out[k] = acc / wsum;
  }
  return out;
}

std::vector<Window> make_windows(const SignalRecord& record, double window_s, double stride_s,
                                 bool renormalize) {
  if (!(stride_s > 0.0)) throw ArgumentError("make_windows: stride must be positive");
  if (!(window_s > 0.0)) throw ArgumentError("make_windows: window length must be positive");
  const double fs = record.sampling_rate_hz;
  const std::size_t len = round_count(window_s * fs);
  const std::size_t stride = std::max<std::size_t>(1, round_count(stride_s * fs));
  std::vector<Window> windows;
  const auto& x = record.samples;
  for (std::size_t start = 0, idx = 0; start + len <= x.size(); start += stride, ++idx) {
    Window w;
    w.subject_id = record.subject_id;
    w.window_index = idx;
    w.start_time_s = static_cast<double>(start) / fs;
    w.sampling_rate_hz = fs;
    std::span<const double> view(x.data() + start, len);
    if (renormalize)
      w.samples = normalize_minmax(view).samples;
    else
      w.samples.assign(view.begin(), view.end());
    windows.push_back(std::move(w));
  }
  return windows;
}

PairingResult make_pairs(const std::vector<Window>& ppg_windows, const std::vector<Window>& resp_windows) {
  PairingResult result;
  std::string subject;
  for (const auto* list : {&ppg_windows, &resp_windows})
    for (const auto& w : *list) {
      if (subject.empty()) subject = w.subject_id;
      if (w.subject_id != subject) throw ArgumentError("make_pairs: windows from different subjects");
    }
  std::map<std::size_t, const Window*> resp_by_index;
  for (const auto& w : resp_windows) resp_by_index[w.window_index] = &w;
  for (const auto& p : ppg_windows) {
    auto it = resp_by_index.find(p.window_index);
    if (it == resp_by_index.end()) continue;
    result.pairs.push_back({p, *it->second});
  }
  result.dropped = ppg_windows.size() + resp_windows.size() - 2 * result.pairs.size();
  return result;
}

PairingResult prepare_subject(const SubjectBundle& bundle, const WindowingConfig& cfg) {
  auto convert = [&](const SignalRecord& rec) {
    SignalRecord out;
    out.subject_id = rec.subject_id;
    out.channel = rec.channel;
    out.sampling_rate_hz = cfg.target_rate_hz;
    out.samples = resample(normalize_minmax(rec.samples).samples, rec.sampling_rate_hz, cfg.target_rate_hz);
    return make_windows(out, cfg.window_s, cfg.stride_s, cfg.renormalize_per_window);
  };
  return make_pairs(convert(bundle.ppg), convert(bundle.resp));
}

void write_window_store(const std::vector<WindowPair>& pairs, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream bin(dir / "windows.bin", std::ios::binary | std::ios::trunc);
  std::ofstream csv(dir / "manifest.csv", std::ios::trunc);
  if (!bin || !csv) throw IoError("cannot write window store in " + dir.string());
  csv << "subject_id,window_index,start_time_s,sampling_rate_hz,length,ppg_offset,resp_offset\n";
  std::uint64_t offset = 0;
  csv.precision(17);
  for (const auto& p : pairs) {
    if (p.ppg.samples.size() != p.resp.samples.size())
      throw ArgumentError("window pair halves differ in length");
    const std::uint64_t bytes = p.ppg.samples.size() * sizeof(double);
    csv << p.ppg.subject_id << ',' << p.ppg.window_index << ',' << p.ppg.start_time_s << ','
        << p.ppg.sampling_rate_hz << ',' << p.ppg.samples.size() << ',' << offset << ',' << offset + bytes
        << '\n';
    bin.write(reinterpret_cast<const char*>(p.ppg.samples.data()), static_cast<std::streamsize>(bytes));
    bin.write(reinterpret_cast<const char*>(p.resp.samples.data()), static_cast<std::streamsize>(bytes));
    offset += 2 * bytes;
  }
  if (!bin || !csv) throw IoError("failed writing window store in " + dir.string());
}

std::vector<WindowPair> read_window_store(const std::filesystem::path& dir) {
  std::ifstream bin(dir / "windows.bin", std::ios::binary);
  std::ifstream csv(dir / "manifest.csv");
  if (!bin || !csv) throw LoadError("window store not found in " + dir.string());
  std::string line;
  std::getline(csv, line);
  std::vector<WindowPair> pairs;
  auto read_at = [&](std::uint64_t off, std::size_t n) {
    std::vector<double> v(n);
    bin.seekg(static_cast<std::streamoff>(off));
    bin.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!bin) throw FormatError("window store truncated in " + dir.string());
    return v;
  };
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 7) throw FormatError("malformed manifest row: " + line);
    try {
      Window w;
      w.subject_id = f[0];
      w.window_index = std::stoull(f[1]);
      w.start_time_s = std::stod(f[2]);
      w.sampling_rate_hz = std::stod(f[3]);
      const std::size_t n = std::stoull(f[4]);
      WindowPair p{w, w};
      p.ppg.samples = read_at(std::stoull(f[5]), n);
      p.resp.samples = read_at(std::stoull(f[6]), n);
      pairs.push_back(std::move(p));
    } catch (const std::invalid_argument&) {
      throw FormatError("malformed manifest row: " + line);
    } catch (const std::out_of_range&) {
      throw FormatError("malformed manifest row: " + line);
    }
  }
  return pairs;
}

}  // namespace prt
