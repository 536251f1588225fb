#pragma once

// PPG-to-respiration translator: two generators (G: PPG -> resp, F: resp -> PPG),
// two patch discriminators, the composite cycle/adversarial/RR objective and
// the alternating training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prt/error.hpp"
#include "prt/nn.hpp"
#include "prt/preprocess.hpp"
#include "prt/respmetrics.hpp"

namespace prt {

enum class GanLossForm { CROSS_ENTROPY, LEAST_SQUARES };
enum class GeneratorObjective { NON_SATURATING, SATURATING };
enum class RRLossMode { SOFT_SPECTRAL, HARD_NO_GRADIENT };

struct TranslatorConfig {
  double lambda_cyc = 10.0;
  double lambda_rr = 10.0;
  int epochs = 100;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int residual_blocks = 6;
  int discriminator_receptive_field = 70;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;
  GanLossForm gan_loss_form = GanLossForm::LEAST_SQUARES;
  GeneratorObjective generator_objective = GeneratorObjective::NON_SATURATING;
  RRLossMode rr_loss_mode = RRLossMode::SOFT_SPECTRAL;
  double rr_beta = 10.0;          // softmax sharpness of the spectral RR surrogate
  int generator_filters = 16;     // channels after the first generator convolution
  int discriminator_filters = 16; // channels after the first discriminator convolution
  int batch_size = 1;
  int replay_buffer_size = 50;
  int max_iterations = 0;  // 0 = no cap; otherwise training stops after this many batches
  double init_std = 0.02;
  int window_length = 900;
  double sampling_rate_hz = 30.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TranslatorConfig& c);
void from_json(const nlohmann::json& j, TranslatorConfig& c);

std::string to_string(GanLossForm f);
std::string to_string(GeneratorObjective g);
std::string to_string(RRLossMode m);

struct LossBreakdown {
  double adv_G = 0.0;
  double adv_F = 0.0;
  double cyc = 0.0;
  double rr = 0.0;
  double total = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

/// Raised when a loss term becomes non-finite.
class TrainingDivergence : public Error {
 public:
  TrainingDivergence(const std::string& what, LossBreakdown parts) : Error(what), breakdown(parts) {}
  LossBreakdown breakdown;
};

// ------------------------------------------------------------ networks

/// Residual encoder/decoder: 7-wide conv, two stride-2 convs, residual blocks,
/// two fractionally-strided convs, 7-wide conv, output squashed to [0, 1].
/// Inputs whose length is not a multiple of 4 are edge-padded and trimmed back.
class Generator {
 public:
  explicit Generator(const TranslatorConfig& cfg);

  nn::Tensor forward(const nn::Tensor& x, nn::Trace& trace) const;
  nn::Tensor backward(const nn::Tensor& grad_out, const nn::Trace& trace);
  std::vector<double> apply(std::span<const double> window) const;

  std::vector<nn::Parameter*> parameters();
  std::size_t parameter_count();

 private:
  nn::Sequential net_;
};

/// Patch discriminator: stride-2 width-4 convolutions followed by two stride-1
/// width-4 convolutions; emits one score per input patch.
class Discriminator {
 public:
  explicit Discriminator(const TranslatorConfig& cfg);

  nn::Tensor forward(const nn::Tensor& x, nn::Trace& trace) const;
  nn::Tensor backward(const nn::Tensor& grad_out, const nn::Trace& trace);
  std::vector<double> scores(std::span<const double> window) const;

  std::vector<nn::Parameter*> parameters();
  std::size_t parameter_count();
  int downsampling_layers() const { return downsampling_; }
  /// Input samples seen by one output score (from the layer geometry).
  int receptive_field() const;

 private:
  nn::Sequential net_;
  int downsampling_ = 3;
};

Generator build_generator(const TranslatorConfig& cfg);
Discriminator build_discriminator(const TranslatorConfig& cfg);

/// Receptive field of a stack of (kernel, stride) layers, via r <- r*s + (k - s)
/// walking from the output back to the input.
int receptive_field(std::span<const std::pair<int, int>> layers);

/// Number of stride-2 layers whose patch receptive field is closest to `target`.
int discriminator_depth_for(int target_receptive_field);

// ------------------------------------------------------------ losses

struct AdversarialLoss {
  double discriminator = 0.0;  // minimised by D
  double generator = 0.0;      // minimised by G
  double objective = 0.0;      // E[log D(real)] + E[log(1 - D(fake))] (cross-entropy); -discriminator otherwise
  std::vector<double> grad_real;       // d discriminator / d real scores
  std::vector<double> grad_fake;       // d discriminator / d fake scores
  std::vector<double> grad_generator;  // d generator / d fake scores
};

inline constexpr double kLogClamp = 1e-7;

/// Scores are raw discriminator outputs; the cross-entropy form squashes them
/// with a sigmoid and clamps probabilities to [eps, 1 - eps].
AdversarialLoss adversarial_loss(std::span<const double> real_scores, std::span<const double> fake_scores,
                                 GanLossForm form,
                                 GeneratorObjective objective = GeneratorObjective::NON_SATURATING);

struct CycleLoss {
  double value = 0.0;
  std::vector<double> grad_x_rec;
  std::vector<double> grad_y_rec;
};

/// mean|x_rec - x| + mean|y_rec - y|.
CycleLoss cycle_loss(std::span<const double> x, std::span<const double> x_rec, std::span<const double> y,
                     std::span<const double> y_rec);

struct RRLoss {
  double value = 0.0;
  std::vector<double> grad_y_rec;  // zero in HARD_NO_GRADIENT mode
  int degenerate = 0;              // windows whose band carried no energy
};

/// |RR(y_rec) - RR(y)| in breaths/min averaged over `batch` equal-length
/// windows laid out back to back in y and y_rec.
RRLoss rr_loss(std::span<const double> y, std::span<const double> y_rec, double fs, RRLossMode mode,
               double beta, std::size_t batch = 1, const RespConfig& resp = {});

/// Fills in total = adv_G + adv_F + lambda_cyc * cyc + lambda_rr * rr.
/// Throws TrainingDivergence when any component is non-finite.
LossBreakdown total_objective(const LossBreakdown& parts, const TranslatorConfig& cfg);

// ------------------------------------------------------------ bundle

struct TranslatorBundle {
  TranslatorConfig config;
  Generator G;
  Generator F;
  Discriminator D_X;
  Discriminator D_Y;
  int epoch = 0;
  nn::Adam optimizer_generators;
  nn::Adam optimizer_discriminators;

  /// Fresh networks initialised from config.seed.
  explicit TranslatorBundle(const TranslatorConfig& cfg);

  std::vector<nn::Parameter*> generator_parameters();
  std::vector<nn::Parameter*> discriminator_parameters();
};

/// Synthetic respiration for one normalised PPG window.
Window translate(const Window& ppg_window, const TranslatorBundle& bundle);

// Checkpoint container (little-endian):
//   magic "PRTCKPT\0" | u32 version
//   u64 len + bytes   config JSON
//   i64 epoch | u64 seed
//   u32 section count, then per section: u32 len + name | u64 n | f64[n]
// Sections: G, F, D_X, D_Y, and optionally opt_G, opt_D (optimiser state).
void save_checkpoint(const TranslatorBundle& bundle, const std::filesystem::path& file);
TranslatorBundle load_checkpoint(const std::filesystem::path& file);

// ------------------------------------------------------------ training

struct EpochLog {
  int epoch = 0;
  LossBreakdown loss;  // mean over the epoch's batches
  double val_mae = 0.0;  // NaN when no validation data
};

struct TrainResult {
  TranslatorBundle bundle;  // best-validation (or last good) checkpoint
  std::vector<EpochLog> epochs;
  std::vector<LossBreakdown> iterations;
  int best_epoch = 0;
  bool early_stopped = false;
  bool diverged = false;
  std::string message;
  std::vector<std::string> warnings;
};

/// Called after every epoch; useful for streaming the training log.
using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const std::vector<WindowPair>& pairs, const std::vector<WindowPair>& val_pairs,
                  const TranslatorConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean |RR(G(ppg)) - RR(resp)| over validation pairs, both via estimate_rr_count.
double validation_mae(const TranslatorBundle& bundle, const std::vector<WindowPair>& val_pairs);

/// Appends one row (epoch,adv_G,adv_F,cyc,rr,total,val_mae), writing the header
/// when the file is new.
void append_training_log(const std::filesystem::path& file, const EpochLog& row);

}  // namespace prt
