#pragma once

// Subject-disjoint cross-validation, per-minute RR error records and reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "prt/dataset.hpp"
#include "prt/preprocess.hpp"
#include "prt/respmetrics.hpp"
#include "prt/translator.hpp"

namespace prt {

struct FoldAssignment {
  int k = 5;
  std::uint64_t seed = 0;
  std::map<std::string, int> fold_of;  // subject_id -> fold index

  std::vector<std::string> subjects_in(int fold) const;
  std::vector<int> fold_sizes() const;
};

/// Seeded shuffle followed by round-robin assignment.
FoldAssignment split_subject_folds(const std::vector<std::string>& subject_ids, int k = 5, std::uint64_t seed = 0);

struct SegmentRecord {
  int fold = 0;
  std::string subject_id;
  int minute_index = 0;
  double rr_estimated = 0.0;
  double rr_reference = 0.0;
  double abs_error = 0.0;
};

struct Exclusion {
  std::string subject_id;
  std::string reason;
};

struct FoldEvaluation {
  std::vector<SegmentRecord> records;
  std::vector<Exclusion> excluded;
};

/// Maps one window pair to a synthetic respiration window.
using WindowTranslator = std::function<Window(const WindowPair&)>;

/// For each subject: windows (30 s, non-overlapping) are translated, adjacent
/// pairs joined into 60 s segments, and the estimated rate compared with the
/// reference rate over the same minute. Subjects without readable annotations
/// (when `require_annotations`) or without a full minute are excluded.
FoldEvaluation evaluate_fold(const WindowTranslator& translator, const std::vector<SubjectBundle>& test_subjects,
                             const WindowingConfig& windowing = {}, int fold = 0, bool require_annotations = true);

FoldEvaluation evaluate_fold(const TranslatorBundle& bundle, const std::vector<SubjectBundle>& test_subjects,
                             const WindowingConfig& windowing = {}, int fold = 0, bool require_annotations = true);

struct FoldSummary {
  int fold = 0;
  std::vector<std::string> train_subjects;
  std::vector<std::string> val_subjects;
  std::vector<std::string> test_subjects;
  double mae = 0.0;
  int segments = 0;
  int best_epoch = 0;
  bool early_stopped = false;
  bool ok = true;
  std::string error;
  std::string checkpoint;
};

struct EvaluationReport {
  int k = 5;
  std::uint64_t seed = 0;
  bool partial = false;
  std::vector<double> per_fold_mae;  // surviving folds only
  double mean_mae = 0.0;
  double std_mae = 0.0;  // population std across folds
  std::vector<FoldSummary> folds;
  std::vector<SegmentRecord> per_segment;
  std::vector<Exclusion> excluded;
  nlohmann::json config;
  nlohmann::json metadata;
};

struct CrossValidationConfig {
  TranslatorConfig translator;
  WindowingConfig windowing;  // evaluation windowing (stride must equal window length)
  double train_stride_s = 30.0;
  int k_folds = 5;
  std::uint64_t seed = 0;
  bool require_annotations = true;
  std::filesystem::path output_dir;  // checkpoints/logs per fold when non-empty
};

/// Optional hook replacing the trained translator for a fold (used for
/// oracle runs); receives the fold index and its training subjects.
using TranslatorFactory =
    std::function<WindowTranslator(int fold, const std::vector<SubjectBundle>& train_subjects)>;

EvaluationReport run_cross_validation(const std::vector<SubjectBundle>& dataset, const CrossValidationConfig& cfg,
                                      const TranslatorFactory& factory = {});

/// Fills per_fold_mae / mean / std from per_segment records and fold statuses.
void aggregate(EvaluationReport& report);

nlohmann::json to_json(const EvaluationReport& report);
void write_report(const EvaluationReport& report, const std::filesystem::path& json_file,
                  const std::filesystem::path& summary_file);
std::string summary_table(const EvaluationReport& report);

/// Three stacked traces (reference, synthetic, processed synthetic) on a shared
/// time axis, written as PNG. Spans must match.
void render_comparison_plot(const std::vector<Window>& reference, const std::vector<Window>& synthetic,
                            const CleanedRespSignal& processed, const std::filesystem::path& out_path);

}  // namespace prt
