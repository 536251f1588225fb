// Acceptance suite: one PASS/FAIL line per criterion. Exit status is non-zero
// when any binding criterion (1-6) fails. Criterion 7 needs the BIDMC
// recordings (PRT_DATASET_ROOT) and PRT_FULL_REPRODUCTION=1; otherwise it is
// reported as not run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "prt/dataset.hpp"
#include "prt/evaluation.hpp"
#include "prt/respmetrics.hpp"
#include "prt/translator.hpp"
#include "synthetic.hpp"

using namespace prt;

namespace {

enum class Status { PASS, FAIL, NOT_RUN };

struct Outcome {
  Status status = Status::FAIL;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

class Detail {
 public:
  bool ok = true;
  void check(bool cond, const std::string& what) {
    if (!cond) ok = false;
    parts_.push_back((cond ? "" : "FAILED ") + what);
  }
  std::string str() const {
    std::string s;
    for (const auto& p : parts_) s += (s.empty() ? "" : "; ") + p;
    return s;
  }

 private:
  std::vector<std::string> parts_;
};

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// ---------------------------------------------------------------- 1
Outcome loss_fidelity() {
  Detail d;
  std::mt19937_64 rng(1);
  double worst_cyc = 0.0, worst_rr = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto x = uniform(900, rng), y = uniform(900, rng);
    worst_cyc = std::max(worst_cyc, cycle_loss(x, x, y, y).value);
    auto resp = testing::sinusoid(0.1 + 0.03 * t, 30.0, 30.0, 0.2 * t);
    for (double& v : resp) v = 0.5 + 0.45 * v;
    for (auto mode : {RRLossMode::SOFT_SPECTRAL, RRLossMode::HARD_NO_GRADIENT})
      worst_rr = std::max(worst_rr, rr_loss(resp, resp, 30.0, mode, 10.0).value);
  }
  d.check(worst_cyc == 0.0, "cycle_loss on exact reconstructions = " + fmt("%g", worst_cyc));
  d.check(worst_rr == 0.0, "rr_loss on identical signals = " + fmt("%g", worst_rr));

  TranslatorConfig cfg;
  const double total = total_objective({1.0, 1.0, 0.5, 0.2, 0.0}, cfg).total;
  d.check(std::abs(total - 9.0) <= 1e-12, "total(1,1,0.5,0.2; lambda=10) = " + fmt("%.12g", total));
  double worst_rel = 0.0;
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int t = 0; t < 1000; ++t) {
    cfg.lambda_cyc = u(rng) + 1e-3;
    cfg.lambda_rr = u(rng);
    const LossBreakdown p{u(rng), u(rng), u(rng), u(rng), 0.0};
    const double expect = p.adv_G + p.adv_F + cfg.lambda_cyc * p.cyc + cfg.lambda_rr * p.rr;
    worst_rel = std::max(worst_rel, std::abs(total_objective(p, cfg).total - expect) / expect);
  }
  d.check(worst_rel <= 1e-6, "weighted recombination rel. error " + fmt("%.1e", worst_rel));

  const std::vector<double> logits(110, 0.0);  // sigmoid(0) = 0.5
  const double v = adversarial_loss(logits, logits, GanLossForm::CROSS_ENTROPY).objective;
  d.check(std::abs(v + 2.0 * std::log(2.0)) <= 1e-6, "cross-entropy objective at D=0.5 = " + fmt("%.9f", v));
  return {d.ok ? Status::PASS : Status::FAIL, d.str()};
}

// ---------------------------------------------------------------- 2
Outcome gradient_checks() {
  Detail d;
  std::mt19937_64 rng(2);
  double worst_cyc = 0.0, worst_rr = 0.0;
  const double h = 1e-6;
  RespConfig resp;
  resp.welch_segment_s = 8.0;
  const double fs = 2.0;  // 16 samples span 8 s; the band stays below Nyquist
  for (int t = 0; t < 25; ++t) {
    const auto x = uniform(16, rng), y = uniform(16, rng);
    auto xr = uniform(16, rng), yr = uniform(16, rng);
    const auto c = cycle_loss(x, xr, y, yr);
    for (std::size_t i = 0; i < 16; ++i) {
      for (int which = 0; which < 2; ++which) {
        auto& v = which == 0 ? xr : yr;
        const double o = v[i];
        v[i] = o + h;
        const double up = cycle_loss(x, xr, y, yr).value;
        v[i] = o - h;
        const double dn = cycle_loss(x, xr, y, yr).value;
        v[i] = o;
        const double an = which == 0 ? c.grad_x_rec[i] : c.grad_y_rec[i];
        worst_cyc = std::max(worst_cyc, testing::rel_error((up - dn) / (2 * h), an));
      }
    }
    const auto l = rr_loss(y, yr, fs, RRLossMode::SOFT_SPECTRAL, 10.0, 1, resp);
    if (l.degenerate) continue;
    for (std::size_t i = 0; i < 16; ++i) {
      const double o = yr[i];
      yr[i] = o + h;
      const double up = rr_loss(y, yr, fs, RRLossMode::SOFT_SPECTRAL, 10.0, 1, resp).value;
      yr[i] = o - h;
      const double dn = rr_loss(y, yr, fs, RRLossMode::SOFT_SPECTRAL, 10.0, 1, resp).value;
      yr[i] = o;
      worst_rr = std::max(worst_rr, testing::rel_error((up - dn) / (2 * h), l.grad_y_rec[i]));
    }
  }
  d.check(worst_cyc < 1e-4, "cycle_loss max rel. error " + fmt("%.2e", worst_cyc));
  d.check(worst_rr < 1e-4, "SOFT_SPECTRAL rr_loss max rel. error " + fmt("%.2e", worst_rr));
  return {d.ok ? Status::PASS : Status::FAIL, d.str()};
}

// ---------------------------------------------------------------- 3
Outcome estimator_oracle() {
  Detail d;
  double clean_count = 0.0, clean_spec = 0.0, noisy_count = 0.0, noisy_spec = 0.0;
  std::uint64_t seed = 1000;
  for (double brpm = 6.0; brpm <= 42.0 + 1e-9; brpm += 1.0) {
    for (double phase : {0.0, 0.9, 2.3}) {
      const auto x = testing::sinusoid(brpm / 60.0, 30.0, 60.0, phase);
      clean_count = std::max(clean_count, std::abs(estimate_rr_count(x, 30.0).rate_brpm - brpm));
      clean_spec = std::max(clean_spec, std::abs(estimate_rr_spectral(x, 30.0, 50.0).rate_brpm - brpm));
      const auto n = testing::add_noise_snr(x, 10.0, seed++);
      noisy_count = std::max(noisy_count, std::abs(estimate_rr_count(n, 30.0).rate_brpm - brpm));
      noisy_spec = std::max(noisy_spec, std::abs(estimate_rr_spectral(n, 30.0, 50.0).rate_brpm - brpm));
    }
  }
  d.check(clean_count <= 1.0, "count, clean, max error " + fmt("%.3f", clean_count));
  d.check(clean_spec <= 1.0, "spectral, clean, max error " + fmt("%.3f", clean_spec));
  d.check(noisy_count <= 2.0, "count, 10 dB, max error " + fmt("%.3f", noisy_count));
  d.check(noisy_spec <= 2.0, "spectral, 10 dB, max error " + fmt("%.3f", noisy_spec));

  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto a = uniform(100, rng, -40.0, 40.0), b = uniform(100, rng, -40.0, 40.0);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    worst = std::max(worst, std::abs(mae(a, b) - s / 100.0));
  }
  d.check(worst <= 1e-12, "mae vs brute force " + fmt("%.1e", worst));
  return {d.ok ? Status::PASS : Status::FAIL, d.str()};
}

// ---------------------------------------------------------------- 4
std::vector<WindowPair> toy_pairs(int subjects, double duration_s, std::uint64_t seed) {
  std::vector<WindowPair> out;
  for (int s = 0; s < subjects; ++s) {
    testing::SyntheticSpec sp;
    sp.subject_id = "toy" + std::to_string(s);
    sp.duration_s = duration_s;
    sp.breath_hz = s % 2 ? 0.3 : 0.22;
    sp.seed = seed + static_cast<std::uint64_t>(s);
    auto p = prepare_subject(testing::make_subject(sp)).pairs;
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

Outcome shape_determinism() {
  Detail d;
  TranslatorConfig cfg;
  cfg.seed = 11;
  const TranslatorBundle b(cfg);
  std::mt19937_64 rng(4);
  bool shapes = true;
  for (int t = 0; t < 5; ++t) {
    const auto x = uniform(900, rng);
    for (const Generator* g : {&b.G, &b.F}) {
      const auto y = g->apply(x);
      shapes = shapes && y.size() == 900;
      for (double v : y) shapes = shapes && std::isfinite(v) && v >= 0.0 && v <= 1.0;
    }
  }
  d.check(shapes, "G and F keep 900 samples in [0,1]");

  const auto pairs = toy_pairs(1, 60.0, 50);
  cfg.epochs = 1;
  const auto r1 = train(pairs, {}, cfg);
  const auto r2 = train(pairs, {}, cfg);
  const bool same = !r1.epochs.empty() && !r2.epochs.empty() && r1.epochs[0].loss == r2.epochs[0].loss;
  d.check(same, "first-epoch LossBreakdown bitwise identical (total " + fmt("%.17g", r1.epochs[0].loss.total) + ")");

  std::vector<std::string> ids;
  for (int i = 1; i <= 53; ++i) ids.push_back("bidmc_" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  const auto folds = split_subject_folds(ids, 5, 0);
  auto sizes = folds.fold_sizes();
  std::sort(sizes.rbegin(), sizes.rend());
  std::set<std::string> seen;
  bool disjoint = true;
  for (int f = 0; f < 5; ++f)
    for (const auto& s : folds.subjects_in(f)) disjoint = seen.insert(s).second && disjoint;
  d.check(disjoint && seen.size() == 53, "folds subject-disjoint and covering");
  std::ostringstream os;
  for (int s : sizes) os << s << ' ';
  d.check(sizes == std::vector<int>{11, 11, 11, 10, 10}, "fold sizes " + os.str());
  return {d.ok ? Status::PASS : Status::FAIL, d.str()};
}

// ---------------------------------------------------------------- 5
Outcome smoke_training() {
  Detail d;
  // Two synthetic subjects, four minutes each: 16 window pairs.
  std::vector<SubjectBundle> subjects;
  std::vector<WindowPair> pairs;
  for (int s = 0; s < 2; ++s) {
    testing::SyntheticSpec sp;
    sp.subject_id = "smoke" + std::to_string(s);
    sp.duration_s = 240.0;
    sp.breath_hz = s ? 0.3 : 0.22;
    sp.seed = 10 + static_cast<std::uint64_t>(s);
    subjects.push_back(testing::make_subject(sp));
    auto p = prepare_subject(subjects.back()).pairs;
    pairs.insert(pairs.end(), p.begin(), p.end());
  }
  // Toy-sized networks so 200 iterations fit the time budget on one core.
  TranslatorConfig cfg;
  cfg.generator_filters = 8;
  cfg.discriminator_filters = 8;
  cfg.residual_blocks = 2;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 1000;
  cfg.max_iterations = 200;
  cfg.seed = 3;
  const auto r = train(pairs, {}, cfg);
  d.check(!r.diverged && r.iterations.size() == 200, std::to_string(r.iterations.size()) + " iterations");
  if (r.iterations.size() < 40) return {Status::FAIL, d.str()};

  auto window_mean = [&](std::size_t from, std::size_t n, double LossBreakdown::*field) {
    double s = 0.0;
    for (std::size_t i = from; i < from + n; ++i) s += r.iterations[i].*field;
    return s / static_cast<double>(n);
  };
  const std::size_t n = r.iterations.size();
  const double first_total = window_mean(0, 20, &LossBreakdown::total);
  const double last_total = window_mean(n - 20, 20, &LossBreakdown::total);
  d.check(last_total < first_total, "total loss, mean of first 20 iterations " + fmt("%.3f", first_total) +
                                        " -> last 20 " + fmt("%.3f", last_total));
  const double cyc1 = r.iterations.front().cyc;
  const double cyc_end = window_mean(n - 10, 10, &LossBreakdown::cyc);
  d.check(cyc_end <= 0.5 * cyc1, "cycle loss iteration 1 " + fmt("%.4f", cyc1) + " -> mean of last 10 " +
                                     fmt("%.4f", cyc_end) + " (" + fmt("%.0f", 100.0 * (1.0 - cyc_end / cyc1)) +
                                     "% drop)");
  double worst = 0.0;
  for (const auto& sub : subjects) {
    const auto p = prepare_subject(sub).pairs.front();
    const double est = estimate_rr_count(translate(p.ppg, r.bundle).samples, 30.0).rate_brpm;
    const double ref = reference_rr(sub, p.ppg.start_time_s, 30.0).brpm;
    worst = std::max(worst, std::abs(est - ref));
  }
  d.check(worst <= 3.0, "translated training windows, max |RR error| " + fmt("%.2f", worst) + " brpm");
  return {d.ok ? Status::PASS : Status::FAIL, d.str()};
}

// ---------------------------------------------------------------- 6
Outcome identity_bound() {
  std::vector<SubjectBundle> cohort;
  for (int i = 0; i < 8; ++i) {
    testing::SyntheticSpec s;
    s.subject_id = "id" + std::to_string(i);
    s.duration_s = 480.0;
    s.breath_hz = 0.12 + 0.07 * i;
    s.resp_noise = 0.1;
    s.seed = 500 + static_cast<std::uint64_t>(i);
    cohort.push_back(testing::make_subject(s));
  }
  const auto e = evaluate_fold([](const WindowPair& p) { return p.resp; }, cohort, {}, 0);
  std::vector<double> est, ref;
  for (const auto& r : e.records) {
    est.push_back(r.rr_estimated);
    ref.push_back(r.rr_reference);
  }
  Detail d;
  d.check(e.records.size() == 64, std::to_string(e.records.size()) + " minute segments");
  const double m = est.empty() ? INFINITY : mae(est, ref);
  // Bound: the sinusoid-oracle tolerance of criterion 3 (1 brpm).
  d.check(m < 1.0, "identity MAE " + fmt("%.3f", m) + " brpm < 1.0");
  return {d.ok ? Status::PASS : Status::FAIL, d.str()};
}

// ---------------------------------------------------------------- 7
Outcome full_reproduction() {
  const char* root = std::getenv("PRT_DATASET_ROOT");
  const char* enabled = std::getenv("PRT_FULL_REPRODUCTION");
  if (!root || !*root || !enabled || std::string(enabled) != "1")
    return {Status::NOT_RUN,
            "needs the BIDMC recordings (PRT_DATASET_ROOT) and PRT_FULL_REPRODUCTION=1; hours of compute"};
  const auto data = load_bidmc(root);
  CrossValidationConfig cfg;
  const auto report = run_cross_validation(data, cfg);
  Detail d;
  d.check(!report.partial, "all folds completed");
  d.check(report.mean_mae <= 2.6, "mean MAE " + fmt("%.3f", report.mean_mae) + " +/- " +
                                      fmt("%.3f", report.std_mae) + " brpm (target 1.9, accept <= 2.6)");
  return {d.ok ? Status::PASS : Status::FAIL, d.str()};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    bool binding;
  };
  const std::vector<Criterion> criteria{{1, "loss fidelity", loss_fidelity, true},
                                        {2, "gradient checks", gradient_checks, true},
                                        {3, "RR estimator oracle", estimator_oracle, true},
                                        {4, "shape/determinism", shape_determinism, true},
                                        {5, "smoke training", smoke_training, true},
                                        {6, "identity-translator bound", identity_bound, true},
                                        {7, "full reproduction", full_reproduction, false}};
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Status::FAIL, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Status::PASS ? "PASS" : o.status == Status::FAIL ? "FAIL" : "NOT RUN";
    std::printf("[%s] criterion %d (%s, %.1f s): %s\n", tag, c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    if (o.status == Status::FAIL) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
