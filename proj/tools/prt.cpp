// prt: command-line front end for data preparation, translator training,
// translation, rate estimation, cross-validated evaluation and plotting.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prt/dataset.hpp"
#include "prt/error.hpp"
#include "prt/evaluation.hpp"
#include "prt/preprocess.hpp"
#include "prt/respmetrics.hpp"
#include "prt/translator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prt;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3, kIo = 4 };

constexpr const char* kDatasetEnv = "PRT_DATASET_ROOT";

/// Raised for invalid configuration files or flag combinations.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  fs::path dataset_root;
  fs::path output_dir = "prt_out";
  std::uint64_t seed = 0;
  int k_folds = 5;
  WindowingConfig windowing;
  bool require_annotations = true;
  TranslatorConfig translator;
};

json to_json(const RunConfig& c) {
  return {{"dataset_root", c.dataset_root.string()},
          {"output_dir", c.output_dir.string()},
          {"seed", c.seed},
          {"k_folds", c.k_folds},
          {"windowing",
           {{"window_s", c.windowing.window_s},
            {"stride_s", c.windowing.stride_s},
            {"target_rate_hz", c.windowing.target_rate_hz},
            {"renormalize_per_window", c.windowing.renormalize_per_window}}},
          {"require_annotations", c.require_annotations},
          {"translator", json(c.translator)}};
}

void reject_unknown(const json& j, const json& known, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw UsageError("unknown key '" + key + "' in " + where);
}

void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw UsageError("config root must be an object");
  const json known = to_json(RunConfig{});
  reject_unknown(j, known, "config");
  try {
    if (j.contains("dataset_root")) c.dataset_root = j["dataset_root"].get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("k_folds")) c.k_folds = j["k_folds"].get<int>();
    if (j.contains("require_annotations")) c.require_annotations = j["require_annotations"].get<bool>();
    if (j.contains("windowing")) {
      const auto& w = j["windowing"];
      reject_unknown(w, known["windowing"], "windowing");
      if (w.contains("window_s")) c.windowing.window_s = w["window_s"].get<double>();
      if (w.contains("stride_s")) c.windowing.stride_s = w["stride_s"].get<double>();
      if (w.contains("target_rate_hz")) c.windowing.target_rate_hz = w["target_rate_hz"].get<double>();
      if (w.contains("renormalize_per_window"))
        c.windowing.renormalize_per_window = w["renormalize_per_window"].get<bool>();
    }
    if (j.contains("translator")) {
      reject_unknown(j["translator"], known["translator"], "translator");
      json merged = json(c.translator);
      merged.update(j["translator"]);
      c.translator = merged.get<TranslatorConfig>();
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

/// Derived fields and cross-field checks; called once all sources are merged.
void finalize(RunConfig& c) {
  if (!(c.windowing.window_s > 0.0) || !(c.windowing.stride_s > 0.0) || !(c.windowing.target_rate_hz > 0.0))
    throw UsageError("windowing values must be positive");
  if (c.k_folds < 2) throw UsageError("k_folds must be >= 2");
  c.translator.seed = c.seed;
  c.translator.sampling_rate_hz = c.windowing.target_rate_hz;
  c.translator.window_length = static_cast<int>(std::lround(c.windowing.window_s * c.windowing.target_rate_hz));
  try {
    c.translator.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(std::string("config: translator.") + e.what());
  }
}

const char* kConfigTemplate = R"(// prt run configuration. Comments are allowed; unknown keys are rejected.
// Values given on the command line (--seed, --output-dir, --dataset-root, ...)
// override this file; the PRT_DATASET_ROOT environment variable overrides
// dataset_root.
{
  // Directory holding <subject>_Signals.csv and <subject>_Breaths.csv files.
  "dataset_root": "",
  // All artifacts (archives, window store, checkpoints, reports, manifests).
  "output_dir": "prt_out",
  // Master seed: network initialisation, shuffling, fold assignment.
  // Fold f trains with seed + f.
  "seed": 0,
  // Subject-disjoint cross-validation folds. Within each fold the next fold
  // (f + 1 mod k) is held out for early stopping.
  "k_folds": 5,
  // Exclude subjects without readable breath annotations from evaluation
  // (they are still used for training).
  "require_annotations": true,
  "windowing": {
    "window_s": 30.0,
    // Training stride; evaluation always uses non-overlapping windows.
    "stride_s": 30.0,
    // Signals are low-pass filtered and resampled to this rate.
    "target_rate_hz": 30.0,
    // Min-max normalise each window on its own (rather than the whole record).
    "renormalize_per_window": true
  },
  "translator": {
    "lambda_cyc": 10.0,
    "lambda_rr": 10.0,
    "epochs": 100,
    "learning_rate": 0.0002,
    "adam_beta1": 0.5,
    "adam_beta2": 0.999,
    // Residual blocks in each generator.
    "residual_blocks": 6,
    // Target receptive field (samples) of one patch-discriminator score.
    "discriminator_receptive_field": 70,
    // Epochs without validation improvement before stopping.
    "early_stop_patience": 10,
    // LEAST_SQUARES or CROSS_ENTROPY.
    "gan_loss_form": "LEAST_SQUARES",
    // NON_SATURATING or SATURATING (cross-entropy generator term).
    "generator_objective": "NON_SATURATING",
    // SOFT_SPECTRAL (differentiable) or HARD_NO_GRADIENT (peak counting, no gradient).
    "rr_loss_mode": "SOFT_SPECTRAL",
    // Softmax sharpness of the spectral rate surrogate used in the RR loss.
    "rr_beta": 10.0,
    // Channels after the first generator / discriminator convolution.
    "generator_filters": 16,
    "discriminator_filters": 16,
    "batch_size": 1,
    // Past generator outputs replayed to the discriminators.
    "replay_buffer_size": 50,
    // Stop after this many batches in total (0 = no cap).
    "max_iterations": 0,
    // Standard deviation of the normal weight initialisation.
    "init_std": 0.02
  }
}
)";

// ------------------------------------------------------------ hashing / manifests

std::string git_blob_sha1(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  const auto size = fs::file_size(file);
  std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1) throw IoError("sha1 unavailable");
  const std::string header = "blob " + std::to_string(size) + '\0';
  EVP_DigestUpdate(ctx.get(), header.data(), header.size());
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

json hashed(std::vector<fs::path> files) {
  std::sort(files.begin(), files.end());
  json out = json::array();
  for (const auto& f : files) out.push_back({{"path", f.generic_string()}, {"sha1_git", git_blob_sha1(f)}});
  return out;
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os << text;
  if (!os) throw IoError("failed writing " + file.string());
}

void write_manifest(const RunConfig& cfg, const std::string& command, const json& args,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  json m{{"format", "prt-run-manifest"},
         {"version", 1},
         {"command", command},
         {"arguments", args},
         {"seed", cfg.seed},
         {"config", to_json(cfg)},
         {"inputs", hashed(inputs)},
         {"outputs", hashed(outputs)}};
  write_text(cfg.output_dir / (command + ".manifest.json"), m.dump(2) + "\n");
}

// ------------------------------------------------------------ helpers

fs::path archives_dir(const RunConfig& c) { return c.output_dir / "archives"; }

std::vector<SubjectBundle> load_archives(const RunConfig& c, std::vector<fs::path>* files = nullptr) {
  const auto dir = archives_dir(c);
  if (!fs::is_directory(dir)) throw LoadError("no prepared archives in " + dir.string() + " (run 'prt prepare' first)");
  auto bundles = read_archive_dir(dir);
  if (bundles.empty()) throw LoadError("no archives in " + dir.string());
  if (files)
    for (const auto& b : bundles) files->push_back(dir / (b.subject_id + kArchiveExtension));
  return bundles;
}

/// One value per line; the last comma-separated field is used and a
/// non-numeric first line is treated as a header.
std::vector<double> read_series(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError("cannot open " + file.string());
  std::vector<double> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto field = line.substr(line.rfind(',') == std::string::npos ? 0 : line.rfind(',') + 1);
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (end == field.c_str() || !std::isfinite(v)) {
      if (row == 1) continue;
      throw FormatError(file.string() + ": unparseable value on line " + std::to_string(row));
    }
    out.push_back(v);
  }
  if (out.empty()) throw FormatError(file.string() + ": no samples");
  return out;
}

void write_series(const fs::path& file, const std::vector<double>& v, double rate) {
  std::ostringstream os;
  os << "time_s,value\n" << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << static_cast<double>(i) / rate << ',' << v[i] << '\n';
  write_text(file, os.str());
}

std::vector<WindowPair> pairs_for(const std::vector<SubjectBundle>& subjects, const WindowingConfig& w) {
  std::vector<WindowPair> out;
  for (const auto& s : subjects) {
    auto p = prepare_subject(s, w).pairs;
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ------------------------------------------------------------ commands

int cmd_init_config(const fs::path& out) {
  if (out.empty()) {
    std::cout << kConfigTemplate;
    return kOk;
  }
  write_text(out, kConfigTemplate);
  std::cout << "wrote " << out.string() << "\n";
  return kOk;
}

int cmd_prepare(const RunConfig& cfg) {
  if (cfg.dataset_root.empty())
    throw UsageError(std::string("no dataset root: pass --dataset-root, set dataset_root or ") + kDatasetEnv);
  const auto bundles = load_bidmc(cfg.dataset_root);
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::recursive_directory_iterator(cfg.dataset_root)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && (name.ends_with("_Signals.csv") || name.ends_with("_Breaths.csv")))
      inputs.push_back(entry.path());
  }

  const auto arc = archives_dir(cfg);
  fs::create_directories(arc);
  for (const auto& entry : fs::directory_iterator(arc))
    if (entry.path().extension() == kArchiveExtension) fs::remove(entry.path());
  std::vector<fs::path> outputs;
  std::vector<WindowPair> pairs;
  std::size_t dropped = 0;
  for (const auto& b : bundles) {
    const auto file = arc / (b.subject_id + kArchiveExtension);
    write_archive(b, file);
    outputs.push_back(file);
    auto r = prepare_subject(b, cfg.windowing);
    dropped += r.dropped;
    pairs.insert(pairs.end(), std::make_move_iterator(r.pairs.begin()), std::make_move_iterator(r.pairs.end()));
    if (b.annotation_status != AnnotationStatus::OK)
      std::cerr << "warning: " << b.subject_id << ": " << b.annotation_note << "\n";
  }
  const auto store = cfg.output_dir / "windows";
  write_window_store(pairs, store);
  outputs.push_back(store / "windows.bin");
  outputs.push_back(store / "manifest.csv");
  if (dropped > 0) std::cerr << "warning: " << dropped << " unpaired window(s) dropped\n";
  write_manifest(cfg, "prepare", json::object(), inputs, outputs);
  std::cout << bundles.size() << " subjects, " << pairs.size() << " window pairs\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg, int holdout) {
  std::vector<fs::path> inputs;
  auto subjects = load_archives(cfg, &inputs);
  if (holdout < 0 || static_cast<std::size_t>(holdout) >= subjects.size())
    throw UsageError("--holdout must leave at least one training subject");
  const std::vector<SubjectBundle> val(subjects.end() - holdout, subjects.end());
  subjects.resize(subjects.size() - static_cast<std::size_t>(holdout));
  WindowingConfig eval_w = cfg.windowing;
  eval_w.stride_s = eval_w.window_s;
  const auto train_pairs = pairs_for(subjects, cfg.windowing);
  const auto val_pairs = pairs_for(val, eval_w);

  const auto dir = cfg.output_dir / "train";
  fs::create_directories(dir);
  const auto log = dir / "training_log.csv";
  fs::remove(log);
  std::cerr << "training on " << train_pairs.size() << " window pairs from " << subjects.size() << " subject(s)";
  if (!val.empty()) std::cerr << ", validating on " << val_pairs.size();
  std::cerr << "\n";
  const auto result = train(train_pairs, val_pairs, cfg.translator, [&](const EpochLog& row) {
    append_training_log(log, row);
    std::cerr << "epoch " << row.epoch << " total " << fixed(row.loss.total, 4) << " cyc " << fixed(row.loss.cyc, 4)
              << " rr " << fixed(row.loss.rr, 4);
    if (std::isfinite(row.val_mae)) std::cerr << " val_mae " << fixed(row.val_mae, 3);
    std::cerr << "\n";
  });
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  const auto ckpt = dir / "checkpoint.prt";
  save_checkpoint(result.bundle, ckpt);
  std::vector<fs::path> outputs{ckpt};
  if (fs::exists(log)) outputs.push_back(log);
  write_manifest(cfg, "train", {{"holdout", holdout}}, inputs, outputs);
  if (result.diverged) {
    std::cerr << "error: training diverged: " << result.message << " (last good checkpoint saved)\n";
    return kDivergence;
  }
  std::cout << "best epoch " << result.best_epoch << (result.early_stopped ? " (early stopped)" : "") << ", checkpoint "
            << ckpt.string() << "\n";
  return kOk;
}

int cmd_translate(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& input, const fs::path& output,
                  double rate) {
  const auto bundle = load_checkpoint(checkpoint);
  const auto raw = read_series(input);
  const double target = bundle.config.sampling_rate_hz;
  if (!(rate >= target)) throw UsageError("--rate must be at least the model rate of " + fixed(target, 1) + " Hz");
  const auto resampled = resample(raw, rate, target);
  SignalRecord rec{"input", Channel::PPG, target, resampled};
  const double window_s = bundle.config.window_length / target;
  const auto windows = make_windows(rec, window_s, window_s, true);
  if (windows.empty()) throw ArgumentError("input shorter than one " + fixed(window_s, 1) + " s window");
  std::vector<double> out;
  for (const auto& w : windows) {
    const auto y = translate(w, bundle);
    out.insert(out.end(), y.samples.begin(), y.samples.end());
  }
  write_series(output, out, target);
  write_manifest(cfg, "translate", {{"rate_hz", rate}}, {checkpoint, input}, {output});
  std::cout << windows.size() << " window(s) translated to " << output.string() << "\n";
  return kOk;
}

int cmd_estimate(const RunConfig& cfg, const fs::path& input, double rate, const std::string& method) {
  const auto x = read_series(input);
  const auto est =
      method == "spectral" ? estimate_rr_spectral(x, rate, RespConfig{}.spectral_beta) : estimate_rr_count(x, rate);
  write_manifest(cfg, "estimate", {{"rate_hz", rate}, {"method", method}}, {input}, {});
  std::cout << fixed(est.rate_brpm, 1) << " brpm\n";
  std::cerr << to_string(est.method) << ": " << est.breath_count << " breaths over " << fixed(est.duration_s, 1)
            << " s, confidence " << fixed(est.confidence, 2) << "\n";
  return kOk;
}

int cmd_evaluate(const RunConfig& cfg) {
  std::vector<fs::path> inputs;
  const auto subjects = load_archives(cfg, &inputs);
  CrossValidationConfig cv;
  cv.translator = cfg.translator;
  cv.windowing = cfg.windowing;
  cv.windowing.stride_s = cfg.windowing.window_s;
  cv.train_stride_s = cfg.windowing.stride_s;
  cv.k_folds = cfg.k_folds;
  cv.seed = cfg.seed;
  cv.require_annotations = cfg.require_annotations;
  cv.output_dir = cfg.output_dir / "evaluation";
  fs::create_directories(cv.output_dir);
  const auto report = run_cross_validation(subjects, cv);
  const auto json_file = cv.output_dir / "report.json";
  const auto summary_file = cv.output_dir / "summary.txt";
  write_report(report, json_file, summary_file);
  std::vector<fs::path> outputs{json_file, summary_file};
  for (const auto& f : report.folds)
    if (!f.checkpoint.empty()) outputs.emplace_back(f.checkpoint);
  write_manifest(cfg, "evaluate", json::object(), inputs, outputs);
  std::cout << summary_table(report);
  if (report.per_fold_mae.empty()) {
    std::cerr << "error: every fold failed\n";
    return kDivergence;
  }
  return kOk;
}

int cmd_plot(const RunConfig& cfg, const fs::path& checkpoint, const std::string& subject, int minute,
             const fs::path& output) {
  const auto bundle = load_checkpoint(checkpoint);
  std::vector<fs::path> inputs{checkpoint};
  const auto subjects = load_archives(cfg);
  const auto it = std::find_if(subjects.begin(), subjects.end(), [&](const auto& s) { return s.subject_id == subject; });
  if (it == subjects.end()) throw LoadError("subject " + subject + " not found in " + archives_dir(cfg).string());
  inputs.push_back(archives_dir(cfg) / (subject + kArchiveExtension));
  WindowingConfig w = cfg.windowing;
  w.stride_s = w.window_s;
  const auto pairs = prepare_subject(*it, w).pairs;
  const auto per_minute = static_cast<std::size_t>(std::lround(60.0 / w.window_s));
  const auto first = static_cast<std::size_t>(minute) * per_minute;
  if (minute < 0 || first + per_minute > pairs.size())
    throw ArgumentError("subject " + subject + " has no complete minute " + std::to_string(minute));
  std::vector<Window> ref, syn;
  std::vector<double> joined;
  for (std::size_t i = first; i < first + per_minute; ++i) {
    ref.push_back(pairs[i].resp);
    syn.push_back(translate(pairs[i].ppg, bundle));
    joined.insert(joined.end(), syn.back().samples.begin(), syn.back().samples.end());
  }
  const auto cleaned = denoise(joined, w.target_rate_hz);
  render_comparison_plot(ref, syn, cleaned, output);
  write_manifest(cfg, "plot", {{"subject", subject}, {"minute", minute}}, inputs, {output});
  std::cout << "wrote " << output.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PPG-to-respiration translation: data preparation, training, evaluation"};
  app.require_subcommand(1);
  app.footer(std::string("Environment:\n  ") + kDatasetEnv +
             "  dataset root (overrides the config file, overridden by --dataset-root)\n"
             "Exit codes: 0 ok, 1 usage/config, 2 data, 3 training divergence, 4 I/O");

  fs::path config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir, dataset_root;
  app.add_option("--config", config_file, "JSON run configuration (comments allowed)");
  app.add_option("--seed", seed, "Master seed (overrides config)");
  app.add_option("--output-dir", output_dir, "Artifact directory (overrides config)");
  app.add_option("--dataset-root", dataset_root, "BIDMC CSV directory (overrides config and environment)");

  fs::path template_out;
  auto* init = app.add_subcommand("init-config", "Print or write a commented configuration template");
  init->add_option("file", template_out, "Destination (stdout when omitted)");

  app.add_subcommand("prepare", "Load recordings, write per-subject archives and the window store");

  int holdout = 0;
  std::optional<int> epochs, max_iterations;
  auto* train_cmd = app.add_subcommand("train", "Train a translator on all prepared subjects");
  train_cmd->add_option("--holdout", holdout, "Last N subjects (by id) used for early-stopping validation")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--epochs", epochs, "Override translator.epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--max-iterations", max_iterations, "Override translator.max_iterations")
      ->check(CLI::NonNegativeNumber);

  fs::path checkpoint, input, output;
  double rate = 30.0;
  auto* translate_cmd = app.add_subcommand("translate", "Translate a PPG series into synthetic respiration");
  translate_cmd->add_option("--checkpoint", checkpoint, "Translator checkpoint")->required()->check(CLI::ExistingFile);
  translate_cmd->add_option("--input", input, "PPG series (one value per line or CSV, last column)")
      ->required()
      ->check(CLI::ExistingFile);
  translate_cmd->add_option("--output", output, "Destination CSV")->required();
  translate_cmd->add_option("--rate", rate, "Input sampling rate in Hz")->check(CLI::PositiveNumber);

  std::string method = "count";
  auto* estimate_cmd = app.add_subcommand("estimate", "Estimate the respiratory rate of a series");
  estimate_cmd->add_option("--input", input, "Respiratory series (one value per line or CSV, last column)")
      ->required()
      ->check(CLI::ExistingFile);
  estimate_cmd->add_option("--rate", rate, "Sampling rate in Hz")->check(CLI::PositiveNumber);
  estimate_cmd->add_option("--method", method, "count or spectral")->check(CLI::IsMember({"count", "spectral"}));

  std::optional<int> folds;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Subject-disjoint cross-validation over prepared subjects");
  evaluate_cmd->add_option("--folds", folds, "Override k_folds")->check(CLI::Range(2, 1000));
  evaluate_cmd->add_option("--epochs", epochs, "Override translator.epochs")->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("--max-iterations", max_iterations, "Override translator.max_iterations")
      ->check(CLI::NonNegativeNumber);

  std::string subject;
  int minute = 0;
  auto* plot_cmd = app.add_subcommand("plot", "Plot reference, synthetic and processed respiration for one minute");
  plot_cmd->add_option("--checkpoint", checkpoint, "Translator checkpoint")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--subject", subject, "Subject id")->required();
  plot_cmd->add_option("--minute", minute, "Minute index within the recording")->check(CLI::NonNegativeNumber);
  plot_cmd->add_option("--output", output, "Destination PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (init->parsed()) return cmd_init_config(template_out);

    RunConfig cfg;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw UsageError("cannot open config " + config_file.string());
      json j;
      try {
        j = json::parse(in, nullptr, true, true);
      } catch (const json::parse_error& e) {
        throw UsageError("config " + config_file.string() + ": " + e.what());
      }
      apply_json(cfg, j);
    }
    if (const char* env = std::getenv(kDatasetEnv); env && *env) cfg.dataset_root = env;
    if (dataset_root) cfg.dataset_root = *dataset_root;
    if (output_dir) cfg.output_dir = *output_dir;
    if (seed) cfg.seed = *seed;
    if (folds) cfg.k_folds = *folds;
    if (epochs) cfg.translator.epochs = *epochs;
    if (max_iterations) cfg.translator.max_iterations = *max_iterations;
    finalize(cfg);

    if (app.got_subcommand("prepare")) return cmd_prepare(cfg);
    if (train_cmd->parsed()) return cmd_train(cfg, holdout);
    if (translate_cmd->parsed()) return cmd_translate(cfg, checkpoint, input, output, rate);
    if (estimate_cmd->parsed()) return cmd_estimate(cfg, input, rate, method);
    if (evaluate_cmd->parsed()) return cmd_evaluate(cfg);
    if (plot_cmd->parsed()) return cmd_plot(cfg, checkpoint, subject, minute, output);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingDivergence& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
