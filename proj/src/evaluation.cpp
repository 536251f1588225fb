#include "prt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "prt/error.hpp"

namespace prt {

std::vector<std::string> FoldAssignment::subjects_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of)
    if (f == fold) out.push_back(id);
  return out;
}

std::vector<int> FoldAssignment::fold_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (const auto& [id, f] : fold_of) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

FoldAssignment split_subject_folds(const std::vector<std::string>& subject_ids, int k, std::uint64_t seed) {
  if (k < 1) throw ArgumentError("split_subject_folds: k must be >= 1");
  std::vector<std::string> ids = subject_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ArgumentError("split_subject_folds: duplicate subject id");
  if (ids.size() < static_cast<std::size_t>(k))
    throw ArgumentError("split_subject_folds: " + std::to_string(ids.size()) + " subjects cannot fill " +
                        std::to_string(k) + " folds");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldAssignment a;
  a.k = k;
  a.seed = seed;
  for (std::size_t i = 0; i < ids.size(); ++i) a.fold_of[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return a;
}

FoldEvaluation evaluate_fold(const WindowTranslator& translator, const std::vector<SubjectBundle>& test_subjects,
                             const WindowingConfig& windowing, int fold, bool require_annotations) {
  WindowingConfig w = windowing;
  w.stride_s = w.window_s;
  const double per_minute = 60.0 / w.window_s;
  const auto windows_per_minute = static_cast<std::size_t>(std::llround(per_minute));
  if (windows_per_minute == 0 || std::abs(per_minute - static_cast<double>(windows_per_minute)) > 1e-9)
    throw ArgumentError("evaluate_fold: window length must divide 60 s");

  FoldEvaluation out;
  for (const auto& subject : test_subjects) {
    if (require_annotations && subject.annotation_status != AnnotationStatus::OK) {
      out.excluded.push_back({subject.subject_id, "annotations " + to_string(subject.annotation_status) +
                                                      (subject.annotation_note.empty() ? "" : ": " + subject.annotation_note)});
      continue;
    }
    const auto pairs = prepare_subject(subject, w).pairs;
    std::map<std::size_t, const WindowPair*> by_index;
    for (const auto& p : pairs) by_index[p.ppg.window_index] = &p;

    int minutes = 0;
    for (std::size_t first = 0;; first += windows_per_minute) {
      std::vector<const WindowPair*> group;
      for (std::size_t j = 0; j < windows_per_minute; ++j) {
        auto it = by_index.find(first + j);
        if (it == by_index.end()) break;
        group.push_back(it->second);
      }
      if (group.size() < windows_per_minute) break;
      std::vector<double> synthetic;
      for (const auto* p : group) {
        const Window s = translator(*p);
        synthetic.insert(synthetic.end(), s.samples.begin(), s.samples.end());
      }
      const auto est = estimate_rr_count(synthetic, w.target_rate_hz);
      const auto ref = reference_rr(subject, group.front()->ppg.start_time_s, 60.0);
      SegmentRecord r;
      r.fold = fold;
      r.subject_id = subject.subject_id;
      r.minute_index = minutes++;
      r.rr_estimated = est.rate_brpm;
      r.rr_reference = ref.brpm;
      r.abs_error = std::abs(est.rate_brpm - ref.brpm);
      out.records.push_back(r);
    }
    if (minutes == 0) out.excluded.push_back({subject.subject_id, "no complete 60 s segment"});
  }
  return out;
}

FoldEvaluation evaluate_fold(const TranslatorBundle& bundle, const std::vector<SubjectBundle>& test_subjects,
                             const WindowingConfig& windowing, int fold, bool require_annotations) {
  return evaluate_fold([&](const WindowPair& p) { return translate(p.ppg, bundle); }, test_subjects, windowing,
                       fold, require_annotations);
}

void aggregate(EvaluationReport& report) {
  report.per_fold_mae.clear();
  for (auto& f : report.folds) {
    if (!f.ok) continue;
    std::vector<double> est, ref;
    for (const auto& r : report.per_segment)
      if (r.fold == f.fold) {
        est.push_back(r.rr_estimated);
        ref.push_back(r.rr_reference);
      }
    if (est.empty()) {
      f.ok = false;
      f.error = "no evaluable segments";
      continue;
    }
    f.mae = mae(est, ref);
    f.segments = static_cast<int>(est.size());
    report.per_fold_mae.push_back(f.mae);
  }
  report.partial = std::any_of(report.folds.begin(), report.folds.end(), [](const auto& f) { return !f.ok; });
  const auto& v = report.per_fold_mae;
  if (v.empty()) {
    report.mean_mae = report.std_mae = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  report.mean_mae = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double m : v) ss += (m - report.mean_mae) * (m - report.mean_mae);
  report.std_mae = std::sqrt(ss / static_cast<double>(v.size()));
}

EvaluationReport run_cross_validation(const std::vector<SubjectBundle>& dataset, const CrossValidationConfig& cfg,
                                      const TranslatorFactory& factory) {
  cfg.translator.validate();
  std::vector<std::string> ids;
  std::map<std::string, const SubjectBundle*> by_id;
  for (const auto& b : dataset) {
    ids.push_back(b.subject_id);
    by_id[b.subject_id] = &b;
  }
  const auto folds = split_subject_folds(ids, cfg.k_folds, cfg.seed);

  EvaluationReport report;
  report.k = cfg.k_folds;
  report.seed = cfg.seed;
  report.config = {{"translator", cfg.translator},
                   {"window_s", cfg.windowing.window_s},
                   {"target_rate_hz", cfg.windowing.target_rate_hz},
                   {"train_stride_s", cfg.train_stride_s},
                   {"k_folds", cfg.k_folds},
                   {"seed", cfg.seed},
                   {"require_annotations", cfg.require_annotations}};
  report.metadata = {
      {"segment_rule", "60 s segments = two adjacent non-overlapping 30 s translated windows, concatenated"},
      {"reference_rule", "annotated breath onsets counted per minute; mean of per-annotator counts when both exist"},
      {"std_rule", "population standard deviation across folds"},
      {"validation_rule", "fold (test + 1) mod k held out from training for early stopping"}};

  auto collect = [&](const std::vector<std::string>& names) {
    std::vector<SubjectBundle> out;
    for (const auto& n : names) out.push_back(*by_id.at(n));
    return out;
  };
  auto pairs_of = [&](const std::vector<SubjectBundle>& subjects, double stride) {
    WindowingConfig w = cfg.windowing;
    w.stride_s = stride;
    std::vector<WindowPair> out;
    for (const auto& s : subjects) {
      auto p = prepare_subject(s, w).pairs;
      out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    return out;
  };

  std::set<std::string> excluded_seen;
  for (int f = 0; f < cfg.k_folds; ++f) {
    FoldSummary summary;
    summary.fold = f;
    summary.test_subjects = folds.subjects_in(f);
    const int val_fold = cfg.k_folds > 2 ? (f + 1) % cfg.k_folds : -1;
    for (int g = 0; g < cfg.k_folds; ++g) {
      if (g == f) continue;
      auto s = folds.subjects_in(g);
      auto& dst = g == val_fold ? summary.val_subjects : summary.train_subjects;
      dst.insert(dst.end(), s.begin(), s.end());
    }
    for (const auto& t : summary.test_subjects)
      if (std::find(summary.train_subjects.begin(), summary.train_subjects.end(), t) != summary.train_subjects.end() ||
          std::find(summary.val_subjects.begin(), summary.val_subjects.end(), t) != summary.val_subjects.end())
        throw std::logic_error("fold " + std::to_string(f) + " is not subject-disjoint");

    try {
      const auto train_subjects = collect(summary.train_subjects);
      const auto test_subjects = collect(summary.test_subjects);
      WindowTranslator translator;
      std::optional<TranslatorBundle> trained;
      if (factory) {
        translator = factory(f, train_subjects);
      } else {
        const auto train_pairs = pairs_of(train_subjects, cfg.train_stride_s);
        const auto val_pairs = pairs_of(collect(summary.val_subjects), cfg.windowing.window_s);
        std::filesystem::path fold_dir;
        if (!cfg.output_dir.empty()) {
          fold_dir = cfg.output_dir / ("fold_" + std::to_string(f));
          std::filesystem::create_directories(fold_dir);
          std::filesystem::remove(fold_dir / "training_log.csv");
        }
        TranslatorConfig tc = cfg.translator;
        tc.seed = cfg.translator.seed + static_cast<std::uint64_t>(f);
        auto result = train(train_pairs, val_pairs, tc, [&](const EpochLog& row) {
          if (!fold_dir.empty()) append_training_log(fold_dir / "training_log.csv", row);
        });
        summary.best_epoch = result.best_epoch;
        summary.early_stopped = result.early_stopped;
        if (result.diverged) throw TrainingDivergence(result.message, {});
        trained.emplace(std::move(result.bundle));
        if (!fold_dir.empty()) {
          summary.checkpoint = (fold_dir / "checkpoint.prt").string();
          save_checkpoint(*trained, summary.checkpoint);
        }
        translator = [&trained](const WindowPair& p) { return translate(p.ppg, *trained); };
      }
      auto eval = evaluate_fold(translator, test_subjects, cfg.windowing, f, cfg.require_annotations);
      report.per_segment.insert(report.per_segment.end(), eval.records.begin(), eval.records.end());
      for (auto& e : eval.excluded)
        if (excluded_seen.insert(e.subject_id).second) report.excluded.push_back(e);
    } catch (const Error& e) {
      summary.ok = false;
      summary.error = e.what();
    }
    report.folds.push_back(summary);
  }
  aggregate(report);
  return report;
}

nlohmann::json to_json(const EvaluationReport& report) {
  nlohmann::json j;
  j["format"] = "prt-evaluation-report";
  j["version"] = 1;
  j["k"] = report.k;
  j["seed"] = report.seed;
  j["partial"] = report.partial;
  j["per_fold_mae"] = report.per_fold_mae;
  j["mean_mae"] = report.mean_mae;
  j["std_mae"] = report.std_mae;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : report.folds)
    j["folds"].push_back({{"fold", f.fold},
                          {"ok", f.ok},
                          {"error", f.error},
                          {"mae", f.ok ? nlohmann::json(f.mae) : nlohmann::json(nullptr)},
                          {"segments", f.segments},
                          {"best_epoch", f.best_epoch},
                          {"early_stopped", f.early_stopped},
                          {"train_subjects", f.train_subjects},
                          {"val_subjects", f.val_subjects},
                          {"test_subjects", f.test_subjects},
                          {"checkpoint", f.checkpoint}});
  j["per_segment"] = nlohmann::json::array();
  for (const auto& r : report.per_segment)
    j["per_segment"].push_back({{"fold", r.fold},
                                {"subject_id", r.subject_id},
                                {"minute_index", r.minute_index},
                                {"rr_estimated", r.rr_estimated},
                                {"rr_reference", r.rr_reference},
                                {"abs_error", r.abs_error}});
  j["excluded_subjects"] = nlohmann::json::array();
  for (const auto& e : report.excluded) j["excluded_subjects"].push_back({{"subject_id", e.subject_id}, {"reason", e.reason}});
  j["config"] = report.config;
  j["metadata"] = report.metadata;
  return j;
}

std::string summary_table(const EvaluationReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "fold  segments  MAE (brpm)  status\n";
  for (const auto& f : report.folds) {
    os << f.fold << "     " << f.segments << "        ";
    if (f.ok)
      os << f.mae << "       ok\n";
    else
      os << "-           failed: " << f.error << '\n';
  }
  os << "mean MAE " << report.mean_mae << " +/- " << report.std_mae << " brpm over " << report.per_fold_mae.size()
     << " fold(s)" << (report.partial ? " [PARTIAL]" : "") << '\n';
  if (!report.excluded.empty()) {
    os << "excluded subjects:\n";
    for (const auto& e : report.excluded) os << "  " << e.subject_id << ": " << e.reason << '\n';
  }
  return os.str();
}

void write_report(const EvaluationReport& report, const std::filesystem::path& json_file,
                  const std::filesystem::path& summary_file) {
  std::ofstream js(json_file, std::ios::trunc);
  if (!js) throw IoError("cannot write report " + json_file.string());
  js << to_json(report).dump(2) << '\n';
  std::ofstream txt(summary_file, std::ios::trunc);
  if (!txt) throw IoError("cannot write summary " + summary_file.string());
  txt << summary_table(report);
  if (!js || !txt) throw IoError("failed writing report files");
}

}  // namespace prt
