#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "prt/evaluation.hpp"
#include "synthetic.hpp"

using namespace prt;

namespace {

std::vector<std::string> ids(int n) {
  std::vector<std::string> v;
  for (int i = 1; i <= n; ++i) v.push_back("bidmc_" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  return v;
}

std::vector<SubjectBundle> cohort(int n, double duration_s) {
  std::vector<SubjectBundle> out;
  for (int i = 0; i < n; ++i) {
    testing::SyntheticSpec s;
    s.subject_id = "syn" + std::to_string(i);
    s.duration_s = duration_s;
    s.breath_hz = 0.15 + 0.05 * i;
    s.seed = 100 + static_cast<std::uint64_t>(i);
    out.push_back(testing::make_subject(s));
  }
  return out;
}

WindowTranslator identity() {
  return [](const WindowPair& p) { return p.resp; };
}

}  // namespace

TEST_CASE("fold split is disjoint, balanced and seeded") {
  const auto a = split_subject_folds(ids(53), 5, 0);
  auto sizes = a.fold_sizes();
  std::sort(sizes.begin(), sizes.end(), std::greater<>());
  CHECK(sizes == std::vector<int>{11, 11, 11, 10, 10});
  std::set<std::string> seen;
  for (int f = 0; f < 5; ++f)
    for (const auto& s : a.subjects_in(f)) CHECK(seen.insert(s).second);
  CHECK(seen.size() == 53);

  auto shuffled = ids(53);
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(split_subject_folds(shuffled, 5, 0).fold_of == a.fold_of);
  CHECK(split_subject_folds(ids(53), 5, 1).fold_of != a.fold_of);

  for (int n = 5; n < 30; ++n) {
    const auto s = split_subject_folds(ids(n), 5, static_cast<std::uint64_t>(n)).fold_sizes();
    CHECK(*std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()) <= 1);
  }
  CHECK_THROWS_AS(split_subject_folds(ids(3), 5, 0), ArgumentError);
  CHECK_THROWS_AS(split_subject_folds({"a", "a", "b"}, 2, 0), ArgumentError);
}

TEST_CASE("evaluate_fold stitches minutes and excludes unannotated subjects") {
  auto subjects = cohort(2, 150.0);
  subjects[1].annotations.clear();
  subjects[1].annotation_status = AnnotationStatus::UNREADABLE;
  subjects[1].annotation_note = "corrupt";
  const auto e = evaluate_fold(identity(), subjects, {}, 3);
  // 150 s gives five windows, two full minutes; the trailing window is dropped.
  REQUIRE(e.records.size() == 2);
  for (const auto& r : e.records) {
    CHECK(r.fold == 3);
    CHECK(r.subject_id == "syn0");
    CHECK(r.abs_error == doctest::Approx(std::abs(r.rr_estimated - r.rr_reference)));
  }
  CHECK(e.records[1].minute_index == 1);
  REQUIRE(e.excluded.size() == 1);
  CHECK(e.excluded[0].subject_id == "syn1");

  const auto keep = evaluate_fold(identity(), subjects, {}, 0, false);
  CHECK(keep.records.size() == 4);

  const auto short_one = evaluate_fold(identity(), cohort(1, 45.0), {}, 0);
  CHECK(short_one.records.empty());
  REQUIRE(short_one.excluded.size() == 1);
}

TEST_CASE("identity translator stays within the estimator noise floor") {
  const auto e = evaluate_fold(identity(), cohort(4, 240.0), {}, 0);
  REQUIRE(e.records.size() == 16);
  std::vector<double> est, ref;
  for (const auto& r : e.records) {
    est.push_back(r.rr_estimated);
    ref.push_back(r.rr_reference);
  }
  CHECK(mae(est, ref) < 1.0);
}

TEST_CASE("cross validation with an oracle translator") {
  CrossValidationConfig cfg;
  cfg.k_folds = 3;
  cfg.seed = 4;
  const auto data = cohort(6, 120.0);
  const auto report = run_cross_validation(data, cfg, [](int, const std::vector<SubjectBundle>&) { return identity(); });
  REQUIRE(report.folds.size() == 3);
  CHECK_FALSE(report.partial);
  CHECK(report.per_fold_mae.size() == 3);
  for (const auto& f : report.folds) {
    for (const auto& t : f.test_subjects) {
      CHECK(std::find(f.train_subjects.begin(), f.train_subjects.end(), t) == f.train_subjects.end());
      CHECK(std::find(f.val_subjects.begin(), f.val_subjects.end(), t) == f.val_subjects.end());
    }
    CHECK(f.train_subjects.size() + f.val_subjects.size() + f.test_subjects.size() == 6);
  }
  // Per-segment records re-aggregate to the same fold means.
  double sum = 0.0;
  for (int f = 0; f < 3; ++f) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : report.per_segment)
      if (r.fold == f) {
        s += r.abs_error;
        ++n;
      }
    sum += s / n;
  }
  CHECK(std::abs(sum / 3.0 - report.mean_mae) <= 1e-9);
  double ss = 0.0;
  for (double m : report.per_fold_mae) ss += (m - report.mean_mae) * (m - report.mean_mae);
  CHECK(report.std_mae == doctest::Approx(std::sqrt(ss / 3.0)));

  const auto again = run_cross_validation(data, cfg, [](int, const std::vector<SubjectBundle>&) { return identity(); });
  CHECK(to_json(again).dump() == to_json(report).dump());

  const auto dir = testing::scratch_dir("report");
  write_report(report, dir / "report.json", dir / "summary.txt");
  std::ifstream js(dir / "report.json");
  const auto parsed = nlohmann::json::parse(js);
  CHECK(parsed["folds"].size() == 3);
  CHECK(parsed["mean_mae"].get<double>() == doctest::Approx(report.mean_mae));
  CHECK(summary_table(report).find("mean MAE") != std::string::npos);
}

TEST_CASE("failed folds mark the report partial") {
  CrossValidationConfig cfg;
  cfg.k_folds = 3;
  const auto data = cohort(6, 120.0);
  const auto report = run_cross_validation(data, cfg, [](int fold, const std::vector<SubjectBundle>&) -> WindowTranslator {
    if (fold == 1) throw TrainingDivergence("synthetic divergence", {});
    return identity();
  });
  CHECK(report.partial);
  CHECK(report.per_fold_mae.size() == 2);
  CHECK_FALSE(report.folds[1].ok);
  CHECK(report.folds[1].error.find("divergence") != std::string::npos);
}

TEST_CASE("cross validation trains, logs and checkpoints each fold") {
  CrossValidationConfig cfg;
  cfg.k_folds = 3;
  cfg.translator.generator_filters = 4;
  cfg.translator.discriminator_filters = 4;
  cfg.translator.residual_blocks = 1;
  cfg.translator.epochs = 1;
  cfg.output_dir = testing::scratch_dir("cv_train");
  const auto report = run_cross_validation(cohort(3, 60.0), cfg);
  REQUIRE(report.folds.size() == 3);
  for (const auto& f : report.folds) {
    CHECK(f.ok);
    CHECK(f.val_subjects.size() == 1);
    CHECK(std::filesystem::exists(f.checkpoint));
    CHECK(std::filesystem::exists(cfg.output_dir / ("fold_" + std::to_string(f.fold)) / "training_log.csv"));
  }
}

TEST_CASE("comparison plot") {
  testing::SyntheticSpec s;
  s.duration_s = 60.0;
  const auto pairs = prepare_subject(testing::make_subject(s)).pairs;
  std::vector<Window> ref{pairs[0].resp, pairs[1].resp}, syn{pairs[0].ppg, pairs[1].ppg};
  std::vector<double> joined;
  for (const auto& w : syn) joined.insert(joined.end(), w.samples.begin(), w.samples.end());
  const auto cleaned = denoise(joined, 30.0);
  const auto dir = testing::scratch_dir("plot");
  render_comparison_plot(ref, syn, cleaned, dir / "a.png");
  render_comparison_plot(ref, syn, cleaned, dir / "b.png");
  REQUIRE(std::filesystem::file_size(dir / "a.png") > 0);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
  CHECK(slurp(dir / "a.png").substr(1, 3) == "PNG");
  CHECK_THROWS_AS(render_comparison_plot({ref[0]}, syn, cleaned, dir / "c.png"), ArgumentError);
  CHECK_THROWS_AS(render_comparison_plot({}, {}, cleaned, dir / "c.png"), ArgumentError);
  CHECK_THROWS_AS(render_comparison_plot(ref, syn, cleaned, dir / "no" / "such" / "d.png"), IoError);
}
