#include "prt/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "prt/error.hpp"
#include "prt/respmetrics.hpp"

namespace prt {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

constexpr char kArchiveMagic[8] = {'P', 'R', 'T', 'A', 'R', 'C', '0', '1'};
constexpr std::uint32_t kArchiveVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  put(os, static_cast<std::uint64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

struct Reader {
  std::istream& is;
  std::string file;

  template <typename T>
  T get() {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("truncated archive " + file);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 20)) throw FormatError("corrupt string length in archive " + file);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw FormatError("truncated archive " + file);
    return s;
  }
  std::vector<double> get_doubles() {
    const auto n = get<std::uint64_t>();
    if (n > (1ull << 32)) throw FormatError("corrupt sample count in archive " + file);
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw FormatError("truncated archive " + file);
    return v;
  }
};

}  // namespace

std::string to_string(Channel c) { return c == Channel::PPG ? "PPG" : "RESP_IMPEDANCE"; }
std::string to_string(AnnotatorId a) { return a == AnnotatorId::A1 ? "A1" : "A2"; }
std::string to_string(AnnotationStatus s) {
  switch (s) {
    case AnnotationStatus::OK: return "OK";
    case AnnotationStatus::MISSING: return "MISSING";
    case AnnotationStatus::UNREADABLE: return "UNREADABLE";
  }
  return "?";
}

void SignalRecord::validate() const {
  if (!(sampling_rate_hz > 0.0)) throw ArgumentError(subject_id + ": sampling rate must be positive");
  if (samples.empty()) throw ArgumentError(subject_id + ": empty " + to_string(channel) + " record");
  for (double v : samples)
    if (!std::isfinite(v)) throw ArgumentError(subject_id + ": non-finite " + to_string(channel) + " sample");
}

void BreathAnnotation::validate(double recording_duration_s) const {
  for (std::size_t i = 0; i < onset_times_s.size(); ++i) {
    const double t = onset_times_s[i];
    if (!(t >= 0.0) || t > recording_duration_s)
      throw ArgumentError(subject_id + ": annotation outside recording");
    if (i > 0 && !(t > onset_times_s[i - 1]))
      throw ArgumentError(subject_id + ": annotation onsets not strictly increasing");
  }
}

const BreathAnnotation* SubjectBundle::annotation(AnnotatorId id) const {
  for (const auto& a : annotations)
    if (a.annotator_id == id) return &a;
  return nullptr;
}

void SubjectBundle::validate() const {
  ppg.validate();
  resp.validate();
  if (std::abs(ppg.duration_s() - resp.duration_s()) >= 1.0 / kBidmcRateHz)
    throw ArgumentError(subject_id + ": PPG and respiration durations differ");
  for (const auto& a : annotations) a.validate(ppg.duration_s());
}

SubjectBundle load_bidmc_subject(const std::string& subject_id, const std::filesystem::path& signals_csv,
                                 const std::filesystem::path& breaths_csv) {
  std::ifstream in(signals_csv);
  if (!in) throw LoadError(subject_id + ": cannot open " + signals_csv.string());

  std::string line;
  if (!std::getline(in, line)) throw LoadError(subject_id + ": empty file " + signals_csv.string());
  const auto header = split_csv(line);
  int time_col = -1, resp_col = -1, ppg_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto h = lower(header[i]);
    if (h.rfind("time", 0) == 0) time_col = static_cast<int>(i);
    else if (h == "resp") resp_col = static_cast<int>(i);
    else if (h == "pleth") ppg_col = static_cast<int>(i);
  }
  if (resp_col < 0 || ppg_col < 0)
    throw FormatError(subject_id + ": " + signals_csv.string() + " lacks RESP/PLETH columns");

  SubjectBundle b;
  b.subject_id = subject_id;
  b.ppg = {subject_id, Channel::PPG, kBidmcRateHz, {}};
  b.resp = {subject_id, Channel::RESP_IMPEDANCE, kBidmcRateHz, {}};
  std::vector<double> times;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    double p = 0, r = 0, t = 0;
    const auto need = static_cast<std::size_t>(std::max({time_col, resp_col, ppg_col}));
    if (f.size() <= need || !parse_double(f[static_cast<std::size_t>(ppg_col)], p) ||
        !parse_double(f[static_cast<std::size_t>(resp_col)], r) ||
        (time_col >= 0 && !parse_double(f[static_cast<std::size_t>(time_col)], t)) || !std::isfinite(p) ||
        !std::isfinite(r))
      throw LoadError(subject_id + ": corrupt row " + std::to_string(row) + " in " + signals_csv.string());
    b.ppg.samples.push_back(p);
    b.resp.samples.push_back(r);
    if (time_col >= 0) times.push_back(t);
  }
  if (b.ppg.samples.empty()) throw LoadError(subject_id + ": no samples in " + signals_csv.string());
  if (times.size() >= 2) {
    const double rate = static_cast<double>(times.size() - 1) / (times.back() - times.front());
    if (!(std::abs(rate - kBidmcRateHz) < 0.5))
      throw FormatError(subject_id + ": " + signals_csv.string() + " sampled at " + std::to_string(rate) +
                        " Hz, expected 125 Hz");
  }

  // Breath annotations: sample indices (1-based, as exported from MATLAB).
  std::ifstream bin(breaths_csv);
  if (!bin) {
    b.annotation_status = AnnotationStatus::MISSING;
    b.annotation_note = "annotation file not found: " + breaths_csv.string();
  } else {
    const double duration = b.ppg.duration_s();
    std::vector<std::vector<double>> cols;
    bool ok = static_cast<bool>(std::getline(bin, line));
    if (ok) {
      const auto h = split_csv(line);
      cols.resize(h.size());
      std::size_t brow = 1;
      while (ok && std::getline(bin, line)) {
        ++brow;
        if (trim(line).empty()) continue;
        const auto f = split_csv(line);
        for (std::size_t c = 0; c < f.size() && c < cols.size(); ++c) {
          if (f[c].empty()) continue;
          double idx = 0;
          if (!parse_double(f[c], idx)) {
            ok = false;
            b.annotation_note = "unparseable value on row " + std::to_string(brow) + " of " + breaths_csv.string();
            break;
          }
          const double t = (idx - 1.0) / kBidmcRateHz;
          if (t >= 0.0 && t <= duration) cols[c].push_back(t);
        }
      }
    } else {
      b.annotation_note = "empty annotation file " + breaths_csv.string();
    }
    if (!ok || cols.empty()) {
      b.annotation_status = AnnotationStatus::UNREADABLE;
      if (b.annotation_note.empty()) b.annotation_note = "no annotation columns in " + breaths_csv.string();
    } else {
      for (std::size_t c = 0; c < cols.size() && c < 2; ++c) {
        auto& v = cols[c];
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        b.annotations.push_back({subject_id, c == 0 ? AnnotatorId::A1 : AnnotatorId::A2, std::move(v)});
      }
    }
  }
  b.validate();
  return b;
}

std::vector<SubjectBundle> load_bidmc(const std::filesystem::path& root_path) {
  std::error_code ec;
  if (!std::filesystem::is_directory(root_path, ec))
    throw LoadError("dataset root is not a directory: " + root_path.string());
  const std::string suffix = "_Signals.csv";
  std::vector<std::pair<std::string, std::filesystem::path>> found;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root_path, ec)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      found.emplace_back(name.substr(0, name.size() - suffix.size()), entry.path());
  }
  if (found.empty()) throw LoadError("no *_Signals.csv files under " + root_path.string());
  std::sort(found.begin(), found.end());
  std::vector<SubjectBundle> bundles;
  bundles.reserve(found.size());
  for (const auto& [id, path] : found)
    bundles.push_back(load_bidmc_subject(id, path, path.parent_path() / (id + "_Breaths.csv")));
  return bundles;
}

ReferenceRR reference_rr(const SubjectBundle& bundle, double segment_start_s, double segment_len_s) {
  const double duration = bundle.resp.duration_s();
  const double tol = 1.0 / bundle.resp.sampling_rate_hz;
  if (!(segment_len_s > 0.0) || segment_start_s < 0.0 || segment_start_s + segment_len_s > duration + tol)
    throw RangeError(bundle.subject_id + ": segment [" + std::to_string(segment_start_s) + ", " +
                     std::to_string(segment_start_s + segment_len_s) + ") outside recording of " +
                     std::to_string(duration) + " s");

  ReferenceRR ref;
  const double end = segment_start_s + segment_len_s;
  double count_sum = 0.0;
  for (AnnotatorId id : {AnnotatorId::A1, AnnotatorId::A2}) {
    const auto* a = bundle.annotation(id);
    if (!a || a->onset_times_s.empty()) continue;
    const auto lo = std::lower_bound(a->onset_times_s.begin(), a->onset_times_s.end(), segment_start_s);
    const auto hi = std::lower_bound(a->onset_times_s.begin(), a->onset_times_s.end(), end);
    count_sum += static_cast<double>(hi - lo);
    ++ref.annotators_used;
  }
  if (ref.annotators_used > 0) {
    ref.from_annotations = true;
    ref.brpm = count_sum / ref.annotators_used * (60.0 / segment_len_s);
    ref.low_confidence = count_sum == 0.0;
    return ref;
  }

  const double fs = bundle.resp.sampling_rate_hz;
  const auto first = static_cast<std::size_t>(std::llround(segment_start_s * fs));
  const auto count = std::min(static_cast<std::size_t>(std::llround(segment_len_s * fs)),
                              bundle.resp.samples.size() - first);
  const auto est = estimate_rr_count(std::span<const double>(bundle.resp.samples).subspan(first, count), fs);
  ref.brpm = est.rate_brpm;
  ref.low_confidence = est.breath_count == 0;
  return ref;
}

void write_archive(const SubjectBundle& bundle, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write archive " + file.string());
  os.write(kArchiveMagic, sizeof kArchiveMagic);
  put(os, kArchiveVersion);
  put_string(os, bundle.subject_id);
  put(os, static_cast<std::uint8_t>(bundle.annotation_status));
  put_string(os, bundle.annotation_note);
  put(os, std::uint32_t{2});
  for (const auto* rec : {&bundle.ppg, &bundle.resp}) {
    put(os, static_cast<std::uint8_t>(rec->channel));
    put(os, rec->sampling_rate_hz);
    put_doubles(os, rec->samples);
  }
  put(os, static_cast<std::uint32_t>(bundle.annotations.size()));
  for (const auto& a : bundle.annotations) {
    put(os, static_cast<std::uint8_t>(a.annotator_id));
    put_doubles(os, a.onset_times_s);
  }
  if (!os) throw IoError("failed writing archive " + file.string());
}

SubjectBundle read_archive(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw LoadError("cannot open archive " + file.string());
  Reader r{is, file.string()};
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(std::begin(magic), std::end(magic), std::begin(kArchiveMagic)))
    throw FormatError("not a subject archive: " + file.string());
  if (r.get<std::uint32_t>() != kArchiveVersion) throw FormatError("unsupported archive version in " + file.string());

  SubjectBundle b;
  b.subject_id = r.get_string();
  const auto status = r.get<std::uint8_t>();
  if (status > 2) throw FormatError("bad annotation status in " + file.string());
  b.annotation_status = static_cast<AnnotationStatus>(status);
  b.annotation_note = r.get_string();
  const auto channels = r.get<std::uint32_t>();
  bool have_ppg = false, have_resp = false;
  for (std::uint32_t c = 0; c < channels; ++c) {
    SignalRecord rec;
    rec.subject_id = b.subject_id;
    const auto tag = r.get<std::uint8_t>();
    if (tag > 1) throw FormatError("bad channel tag in " + file.string());
    rec.channel = static_cast<Channel>(tag);
    rec.sampling_rate_hz = r.get<double>();
    rec.samples = r.get_doubles();
    if (rec.channel == Channel::PPG) {
      b.ppg = std::move(rec);
      have_ppg = true;
    } else {
      b.resp = std::move(rec);
      have_resp = true;
    }
  }
  if (!have_ppg || !have_resp) throw FormatError("archive lacks a channel: " + file.string());
  const auto n_ann = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_ann; ++i) {
    BreathAnnotation a;
    a.subject_id = b.subject_id;
    const auto id = r.get<std::uint8_t>();
    if (id > 1) throw FormatError("bad annotator id in " + file.string());
    a.annotator_id = static_cast<AnnotatorId>(id);
    a.onset_times_s = r.get_doubles();
    b.annotations.push_back(std::move(a));
  }
  try {
    b.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("invalid archive ") + file.string() + ": " + e.what());
  }
  return b;
}

std::vector<SubjectBundle> read_archive_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw LoadError("archive directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == kArchiveExtension) files.push_back(e.path());
  if (files.empty()) throw LoadError("no subject archives in " + dir.string());
  std::vector<SubjectBundle> out;
  for (const auto& f : files) out.push_back(read_archive(f));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
  return out;
}

}  // namespace prt
