#pragma once

// Ingestion of BIDMC-style PPG/respiration recordings and their breath
// annotations, plus the per-subject intermediate archive.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace prt {

enum class Channel { PPG, RESP_IMPEDANCE };

enum class AnnotatorId { A1, A2 };

/// Whether a subject's breath annotations could be read.
enum class AnnotationStatus { OK, MISSING, UNREADABLE };

std::string to_string(Channel c);
std::string to_string(AnnotatorId a);
std::string to_string(AnnotationStatus s);

/// Single-channel physiological time series.
struct SignalRecord {
  std::string subject_id;
  Channel channel = Channel::PPG;
  double sampling_rate_hz = 0.0;
  std::vector<double> samples;

  double duration_s() const { return static_cast<double>(samples.size()) / sampling_rate_hz; }

  /// Throws ArgumentError when rate <= 0, samples empty, or any sample non-finite.
  void validate() const;
};

struct BreathAnnotation {
  std::string subject_id;
  AnnotatorId annotator_id = AnnotatorId::A1;
  std::vector<double> onset_times_s;  // strictly increasing

  void validate(double recording_duration_s) const;
};

struct SubjectBundle {
  std::string subject_id;
  SignalRecord ppg;
  SignalRecord resp;
  std::vector<BreathAnnotation> annotations;
  AnnotationStatus annotation_status = AnnotationStatus::OK;
  std::string annotation_note;  // reason when status != OK

  const BreathAnnotation* annotation(AnnotatorId id) const;

  /// Checks both records and the duration-alignment invariant.
  void validate() const;
};

inline constexpr double kBidmcRateHz = 125.0;

/// Loads every `<subject>_Signals.csv` (with optional `<subject>_Breaths.csv`)
/// under root_path. Bundles are sorted by subject_id.
std::vector<SubjectBundle> load_bidmc(const std::filesystem::path& root_path);

/// Loads one subject from explicit file paths. `breaths_csv` may not exist.
SubjectBundle load_bidmc_subject(const std::string& subject_id,
                                 const std::filesystem::path& signals_csv,
                                 const std::filesystem::path& breaths_csv);

struct ReferenceRR {
  double brpm = 0.0;
  bool from_annotations = false;
  bool low_confidence = false;
  int annotators_used = 0;
};

/// Reference respiratory rate over [start, start + len). Annotated onsets are
/// counted when present (mean of per-annotator counts if both exist); otherwise
/// the impedance channel is run through estimate_rr_count.
ReferenceRR reference_rr(const SubjectBundle& bundle, double segment_start_s,
                         double segment_len_s = 60.0);

// Intermediate archive: one binary file per subject. Layout (little-endian):
//   magic "PRTARC01" | u32 version
//   u32 len + bytes    subject_id
//   u8                 annotation status, u32 len + bytes note
//   u32 channel count, then per channel:
//       u8 channel tag | f64 rate | u64 n | f64[n] samples
//   u32 annotation count, then per annotation:
//       u8 annotator | u64 n | f64[n] onset times (s)
void write_archive(const SubjectBundle& bundle, const std::filesystem::path& file);
SubjectBundle read_archive(const std::filesystem::path& file);

/// Reads all `*.prtarc` files in a directory, sorted by subject_id.
std::vector<SubjectBundle> read_archive_dir(const std::filesystem::path& dir);

inline constexpr const char* kArchiveExtension = ".prtarc";

}  // namespace prt
