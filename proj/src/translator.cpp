#include "prt/translator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace prt {

using nn::Tensor;
using nn::Trace;

namespace {

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

double clamp_prob(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }

/// d/ds log(clamp(sigmoid(s))), zero where the clamp is active.
double dlog_sigmoid(double s) {
  const double p = sigmoid(s);
  return (p < kLogClamp || p > 1.0 - kLogClamp) ? 0.0 : 1.0 - p;
}

/// d/ds log(1 - clamp(sigmoid(s))).
double dlog_one_minus_sigmoid(double s) {
  const double p = sigmoid(s);
  return (p < kLogClamp || p > 1.0 - kLogClamp) ? 0.0 : -p;
}

Tensor to_tensor(std::span<const double> x) {
  Tensor t(1, 1, x.size());
  std::copy(x.begin(), x.end(), t.data.begin());
  return t;
}

template <typename E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* field) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw ArgumentError(std::string("unknown value '") + s + "' for " + field);
}

}  // namespace

// ------------------------------------------------------------ config

std::string to_string(GanLossForm f) { return f == GanLossForm::CROSS_ENTROPY ? "CROSS_ENTROPY" : "LEAST_SQUARES"; }
std::string to_string(GeneratorObjective g) {
  return g == GeneratorObjective::NON_SATURATING ? "NON_SATURATING" : "SATURATING";
}
std::string to_string(RRLossMode m) { return m == RRLossMode::SOFT_SPECTRAL ? "SOFT_SPECTRAL" : "HARD_NO_GRADIENT"; }

void TranslatorConfig::validate() const {
  if (!(lambda_cyc > 0.0)) throw ArgumentError("lambda_cyc must be > 0");
  if (!(lambda_rr >= 0.0)) throw ArgumentError("lambda_rr must be >= 0");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (residual_blocks < 0) throw ArgumentError("residual_blocks must be >= 0");
  if (discriminator_receptive_field < 1) throw ArgumentError("discriminator_receptive_field must be >= 1");
  if (early_stop_patience < 0) throw ArgumentError("early_stop_patience must be >= 0");
  if (generator_filters < 1 || discriminator_filters < 1) throw ArgumentError("filter counts must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (replay_buffer_size < 0) throw ArgumentError("replay_buffer_size must be >= 0");
  if (max_iterations < 0) throw ArgumentError("max_iterations must be >= 0");
  if (window_length < 16) throw ArgumentError("window_length must be >= 16");
  if (!(sampling_rate_hz > 0.0)) throw ArgumentError("sampling_rate_hz must be > 0");
  if (!(rr_beta > 0.0)) throw ArgumentError("rr_beta must be > 0");
}

void to_json(nlohmann::json& j, const TranslatorConfig& c) {
  j = nlohmann::json{{"lambda_cyc", c.lambda_cyc},
                     {"lambda_rr", c.lambda_rr},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"residual_blocks", c.residual_blocks},
                     {"discriminator_receptive_field", c.discriminator_receptive_field},
                     {"early_stop_patience", c.early_stop_patience},
                     {"seed", c.seed},
                     {"gan_loss_form", to_string(c.gan_loss_form)},
                     {"generator_objective", to_string(c.generator_objective)},
                     {"rr_loss_mode", to_string(c.rr_loss_mode)},
                     {"rr_beta", c.rr_beta},
                     {"generator_filters", c.generator_filters},
                     {"discriminator_filters", c.discriminator_filters},
                     {"batch_size", c.batch_size},
                     {"replay_buffer_size", c.replay_buffer_size},
                     {"max_iterations", c.max_iterations},
                     {"init_std", c.init_std},
                     {"window_length", c.window_length},
                     {"sampling_rate_hz", c.sampling_rate_hz}};
}

void from_json(const nlohmann::json& j, TranslatorConfig& c) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("lambda_cyc", c.lambda_cyc);
  opt("lambda_rr", c.lambda_rr);
  opt("epochs", c.epochs);
  opt("learning_rate", c.learning_rate);
  opt("adam_beta1", c.adam_beta1);
  opt("adam_beta2", c.adam_beta2);
  opt("residual_blocks", c.residual_blocks);
  opt("discriminator_receptive_field", c.discriminator_receptive_field);
  opt("early_stop_patience", c.early_stop_patience);
  opt("seed", c.seed);
  opt("rr_beta", c.rr_beta);
  opt("generator_filters", c.generator_filters);
  opt("discriminator_filters", c.discriminator_filters);
  opt("batch_size", c.batch_size);
  opt("replay_buffer_size", c.replay_buffer_size);
  opt("max_iterations", c.max_iterations);
  opt("init_std", c.init_std);
  opt("window_length", c.window_length);
  opt("sampling_rate_hz", c.sampling_rate_hz);
  if (j.contains("gan_loss_form"))
    c.gan_loss_form = enum_from<GanLossForm>(
        j.at("gan_loss_form").get<std::string>(),
        {{"CROSS_ENTROPY", GanLossForm::CROSS_ENTROPY}, {"LEAST_SQUARES", GanLossForm::LEAST_SQUARES}},
        "gan_loss_form");
  if (j.contains("generator_objective"))
    c.generator_objective = enum_from<GeneratorObjective>(
        j.at("generator_objective").get<std::string>(),
        {{"NON_SATURATING", GeneratorObjective::NON_SATURATING}, {"SATURATING", GeneratorObjective::SATURATING}},
        "generator_objective");
  if (j.contains("rr_loss_mode"))
    c.rr_loss_mode = enum_from<RRLossMode>(
        j.at("rr_loss_mode").get<std::string>(),
        {{"SOFT_SPECTRAL", RRLossMode::SOFT_SPECTRAL}, {"HARD_NO_GRADIENT", RRLossMode::HARD_NO_GRADIENT}},
        "rr_loss_mode");
}

// ------------------------------------------------------------ networks

Generator::Generator(const TranslatorConfig& cfg) {
  const auto f = static_cast<std::size_t>(cfg.generator_filters);
  net_.add<nn::Affine>(2.0, -1.0);  // [0,1] -> [-1,1]
  net_.add<nn::ReflectionPad1d>(3);
  net_.add<nn::Conv1d>(1, f, 7);
  net_.add<nn::InstanceNorm1d>();
  net_.add<nn::LeakyReLU>(0.0);
  net_.add<nn::Conv1d>(f, 2 * f, 3, 2, 1);
  net_.add<nn::InstanceNorm1d>();
  net_.add<nn::LeakyReLU>(0.0);
  net_.add<nn::Conv1d>(2 * f, 4 * f, 3, 2, 1);
  net_.add<nn::InstanceNorm1d>();
  net_.add<nn::LeakyReLU>(0.0);
  for (int i = 0; i < cfg.residual_blocks; ++i) net_.add<nn::ResidualBlock>(4 * f);
  net_.add<nn::ConvTranspose1d>(4 * f, 2 * f, 3, 2, 1, 1);
  net_.add<nn::InstanceNorm1d>();
  net_.add<nn::LeakyReLU>(0.0);
  net_.add<nn::ConvTranspose1d>(2 * f, f, 3, 2, 1, 1);
  net_.add<nn::InstanceNorm1d>();
  net_.add<nn::LeakyReLU>(0.0);
  net_.add<nn::ReflectionPad1d>(3);
  net_.add<nn::Conv1d>(f, 1, 7);
  net_.add<nn::UnitTanh>();
}

Tensor Generator::forward(const Tensor& x, Trace& trace) const {
  const std::size_t len = x.length;
  const std::size_t padded = (len + 3) / 4 * 4;
  Tensor xp(x.batch, x.channels, padded);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t c = 0; c < x.channels; ++c) {
      const double* src = x.row(b, c);
      double* dst = xp.row(b, c);
      std::copy(src, src + len, dst);
      std::fill(dst + len, dst + padded, src[len - 1]);
    }
  trace.extra = len;
  trace.children.resize(1);
  Tensor yp = net_.forward(xp, trace.children[0]);
  Tensor y(yp.batch, yp.channels, len);
  for (std::size_t b = 0; b < y.batch; ++b)
    for (std::size_t c = 0; c < y.channels; ++c) std::copy_n(yp.row(b, c), len, y.row(b, c));
  return y;
}

Tensor Generator::backward(const Tensor& grad_out, const Trace& trace) {
  const std::size_t len = trace.extra;
  const std::size_t padded = (len + 3) / 4 * 4;
  Tensor gp(grad_out.batch, grad_out.channels, padded);
  for (std::size_t b = 0; b < gp.batch; ++b)
    for (std::size_t c = 0; c < gp.channels; ++c) std::copy_n(grad_out.row(b, c), len, gp.row(b, c));
  Tensor gxp = net_.backward(gp, trace.children[0]);
  Tensor gx(gxp.batch, gxp.channels, len);
  for (std::size_t b = 0; b < gx.batch; ++b)
    for (std::size_t c = 0; c < gx.channels; ++c) {
      const double* src = gxp.row(b, c);
      double* dst = gx.row(b, c);
      std::copy_n(src, len, dst);
      for (std::size_t t = len; t < padded; ++t) dst[len - 1] += src[t];
    }
  return gx;
}

std::vector<double> Generator::apply(std::span<const double> window) const {
  Trace trace;
  return forward(to_tensor(window), trace).data;
}

std::vector<nn::Parameter*> Generator::parameters() {
  std::vector<nn::Parameter*> p;
  net_.collect(p);
  return p;
}

std::size_t Generator::parameter_count() { return nn::parameter_count(parameters()); }

int receptive_field(std::span<const std::pair<int, int>> layers) {
  int r = 1;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) r = r * it->second + (it->first - it->second);
  return r;
}

int discriminator_depth_for(int target) {
  int best = 1, best_gap = std::numeric_limits<int>::max();
  for (int n = 1; n <= 8; ++n) {
    std::vector<std::pair<int, int>> layers(static_cast<std::size_t>(n), {4, 2});
    layers.emplace_back(4, 1);
    layers.emplace_back(4, 1);
    const int gap = std::abs(receptive_field(layers) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = n;
    }
  }
  return best;
}

Discriminator::Discriminator(const TranslatorConfig& cfg)
    : downsampling_(discriminator_depth_for(cfg.discriminator_receptive_field)) {
  const auto d = static_cast<std::size_t>(cfg.discriminator_filters);
  net_.add<nn::Affine>(2.0, -1.0);
  net_.add<nn::Conv1d>(1, d, 4, 2, 1);
  net_.add<nn::LeakyReLU>(0.2);
  std::size_t mult = 1;
  for (int i = 1; i < downsampling_; ++i) {
    const std::size_t next = std::min<std::size_t>(std::size_t{1} << i, 8);
    net_.add<nn::Conv1d>(d * mult, d * next, 4, 2, 1);
    net_.add<nn::InstanceNorm1d>();
    net_.add<nn::LeakyReLU>(0.2);
    mult = next;
  }
  const std::size_t next = std::min<std::size_t>(std::size_t{1} << downsampling_, 8);
  net_.add<nn::Conv1d>(d * mult, d * next, 4, 1, 1);
  net_.add<nn::InstanceNorm1d>();
  net_.add<nn::LeakyReLU>(0.2);
  net_.add<nn::Conv1d>(d * next, 1, 4, 1, 1);
}

Tensor Discriminator::forward(const Tensor& x, Trace& trace) const { return net_.forward(x, trace); }
Tensor Discriminator::backward(const Tensor& grad_out, const Trace& trace) { return net_.backward(grad_out, trace); }

std::vector<double> Discriminator::scores(std::span<const double> window) const {
  Trace trace;
  return forward(to_tensor(window), trace).data;
}

std::vector<nn::Parameter*> Discriminator::parameters() {
  std::vector<nn::Parameter*> p;
  net_.collect(p);
  return p;
}

std::size_t Discriminator::parameter_count() { return nn::parameter_count(parameters()); }

int Discriminator::receptive_field() const {
  std::vector<std::pair<int, int>> layers;
  net_.geometry(layers);
  return prt::receptive_field(layers);
}

Generator build_generator(const TranslatorConfig& cfg) {
  cfg.validate();
  return Generator(cfg);
}

Discriminator build_discriminator(const TranslatorConfig& cfg) {
  cfg.validate();
  return Discriminator(cfg);
}

// ------------------------------------------------------------ losses

AdversarialLoss adversarial_loss(std::span<const double> real_scores, std::span<const double> fake_scores,
                                 GanLossForm form, GeneratorObjective objective) {
  if (real_scores.empty() || fake_scores.empty()) throw ArgumentError("adversarial_loss: empty score set");
  for (auto s : {real_scores, fake_scores})
    for (double v : s)
      if (!std::isfinite(v)) throw ArgumentError("adversarial_loss: non-finite score");

  AdversarialLoss out;
  const double nr = static_cast<double>(real_scores.size());
  const double nf = static_cast<double>(fake_scores.size());
  out.grad_real.resize(real_scores.size());
  out.grad_fake.resize(fake_scores.size());
  out.grad_generator.resize(fake_scores.size());

  if (form == GanLossForm::LEAST_SQUARES) {
    double dr = 0.0, df = 0.0, g = 0.0;
    for (std::size_t i = 0; i < real_scores.size(); ++i) {
      const double s = real_scores[i];
      dr += (s - 1.0) * (s - 1.0);
      out.grad_real[i] = 2.0 * (s - 1.0) / nr;
    }
    for (std::size_t i = 0; i < fake_scores.size(); ++i) {
      const double s = fake_scores[i];
      df += s * s;
      g += (s - 1.0) * (s - 1.0);
      out.grad_fake[i] = 2.0 * s / nf;
      out.grad_generator[i] = 2.0 * (s - 1.0) / nf;
    }
    out.discriminator = dr / nr + df / nf;
    out.generator = g / nf;
    out.objective = -out.discriminator;
    return out;
  }

  double log_real = 0.0, log_one_minus_fake = 0.0, log_fake = 0.0;
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    const double s = real_scores[i];
    log_real += std::log(clamp_prob(sigmoid(s)));
    out.grad_real[i] = -dlog_sigmoid(s) / nr;
  }
  for (std::size_t i = 0; i < fake_scores.size(); ++i) {
    const double s = fake_scores[i];
    const double p = clamp_prob(sigmoid(s));
    log_one_minus_fake += std::log(1.0 - p);
    log_fake += std::log(p);
    out.grad_fake[i] = -dlog_one_minus_sigmoid(s) / nf;
    out.grad_generator[i] = objective == GeneratorObjective::NON_SATURATING ? -dlog_sigmoid(s) / nf
                                                                            : dlog_one_minus_sigmoid(s) / nf;
  }
  out.objective = log_real / nr + log_one_minus_fake / nf;
  out.discriminator = -out.objective;
  out.generator = objective == GeneratorObjective::NON_SATURATING ? -log_fake / nf : log_one_minus_fake / nf;
  return out;
}

CycleLoss cycle_loss(std::span<const double> x, std::span<const double> x_rec, std::span<const double> y,
                     std::span<const double> y_rec) {
  if (x.size() != x_rec.size() || y.size() != y_rec.size())
    throw ArgumentError("cycle_loss: reconstruction length mismatch");
  if (x.empty() || y.empty()) throw ArgumentError("cycle_loss: empty input");
  CycleLoss out;
  out.grad_x_rec.resize(x.size());
  out.grad_y_rec.resize(y.size());
  auto term = [](std::span<const double> ref, std::span<const double> rec, std::vector<double>& grad) {
    const double n = static_cast<double>(ref.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double d = rec[i] - ref[i];
      sum += std::abs(d);
      grad[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
    }
    return sum / n;
  };
  out.value = term(x, x_rec, out.grad_x_rec) + term(y, y_rec, out.grad_y_rec);
  return out;
}

RRLoss rr_loss(std::span<const double> y, std::span<const double> y_rec, double fs, RRLossMode mode, double beta,
               std::size_t batch, const RespConfig& resp) {
  if (y.size() != y_rec.size()) throw ArgumentError("rr_loss: length mismatch");
  if (batch == 0 || y.size() % batch != 0) throw ArgumentError("rr_loss: batch does not divide input");
  const std::size_t len = y.size() / batch;
  RRLoss out;
  out.grad_y_rec.assign(y.size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto yb = y.subspan(b * len, len);
    const auto rb = y_rec.subspan(b * len, len);
    if (mode == RRLossMode::HARD_NO_GRADIENT) {
      const double diff = estimate_rr_count(rb, fs, resp).rate_brpm - estimate_rr_count(yb, fs, resp).rate_brpm;
      out.value += std::abs(diff) * inv_b;
      continue;
    }
    std::vector<double> grad;
    const auto ref = soft_spectral_rate(yb, fs, beta, resp);
    const auto rec = soft_spectral_rate(rb, fs, beta, resp, &grad);
    if (ref.degenerate || rec.degenerate) {
      ++out.degenerate;
      continue;
    }
    const double diff = rec.rate_brpm - ref.rate_brpm;
    out.value += std::abs(diff) * inv_b;
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    for (std::size_t i = 0; i < len; ++i) out.grad_y_rec[b * len + i] = sign * grad[i] * inv_b;
  }
  return out;
}

LossBreakdown total_objective(const LossBreakdown& parts, const TranslatorConfig& cfg) {
  LossBreakdown out = parts;
  out.total = parts.adv_G + parts.adv_F + cfg.lambda_cyc * parts.cyc + cfg.lambda_rr * parts.rr;
  for (double v : {parts.adv_G, parts.adv_F, parts.cyc, parts.rr, out.total})
    if (!std::isfinite(v)) throw TrainingDivergence("non-finite loss component", out);
  return out;
}

// ------------------------------------------------------------ bundle

TranslatorBundle::TranslatorBundle(const TranslatorConfig& cfg)
    : config(cfg),
      G(build_generator(cfg)),
      F(build_generator(cfg)),
      D_X(build_discriminator(cfg)),
      D_Y(build_discriminator(cfg)),
      optimizer_generators(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2),
      optimizer_discriminators(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2) {
  std::mt19937_64 rng(cfg.seed);
  nn::init_normal(G.parameters(), cfg.init_std, rng);
  nn::init_normal(F.parameters(), cfg.init_std, rng);
  nn::init_normal(D_X.parameters(), cfg.init_std, rng);
  nn::init_normal(D_Y.parameters(), cfg.init_std, rng);
}

std::vector<nn::Parameter*> TranslatorBundle::generator_parameters() {
  auto p = G.parameters();
  auto f = F.parameters();
  p.insert(p.end(), f.begin(), f.end());
  return p;
}

std::vector<nn::Parameter*> TranslatorBundle::discriminator_parameters() {
  auto p = D_X.parameters();
  auto d = D_Y.parameters();
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

Window translate(const Window& ppg_window, const TranslatorBundle& bundle) {
  if (ppg_window.samples.size() != static_cast<std::size_t>(bundle.config.window_length))
    throw ArgumentError("translate: window has " + std::to_string(ppg_window.samples.size()) +
                        " samples, expected " + std::to_string(bundle.config.window_length));
  Window out = ppg_window;
  out.samples = bundle.G.apply(ppg_window.samples);
  for (double& v : out.samples) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// ------------------------------------------------------------ checkpoints

namespace {

constexpr char kCkptMagic[8] = {'P', 'R', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& file) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("truncated checkpoint " + file);
  return v;
}

}  // namespace

void save_checkpoint(const TranslatorBundle& bundle, const std::filesystem::path& file) {
  static_assert(std::endian::native == std::endian::little);
  auto& b = const_cast<TranslatorBundle&>(bundle);  // parameter accessors are non-const
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + file.string());
  os.write(kCkptMagic, sizeof kCkptMagic);
  put(os, kCkptVersion);
  const std::string cfg = nlohmann::json(bundle.config).dump();
  put(os, static_cast<std::uint64_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put(os, static_cast<std::int64_t>(bundle.epoch));
  put(os, static_cast<std::uint64_t>(bundle.config.seed));
  const std::vector<std::pair<std::string, std::vector<double>>> sections = {
      {"G", nn::flatten(b.G.parameters())},
      {"F", nn::flatten(b.F.parameters())},
      {"D_X", nn::flatten(b.D_X.parameters())},
      {"D_Y", nn::flatten(b.D_Y.parameters())},
      {"opt_G", bundle.optimizer_generators.state()},
      {"opt_D", bundle.optimizer_discriminators.state()}};
  put(os, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, values] : sections) {
    put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, static_cast<std::uint64_t>(values.size()));
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint " + file.string());
}

TranslatorBundle load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + file.string());
  const std::string name = file.string();
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(std::begin(magic), std::end(magic), std::begin(kCkptMagic)))
    throw FormatError("not a translator checkpoint: " + name);
  if (get<std::uint32_t>(is, name) != kCkptVersion) throw FormatError("unsupported checkpoint version: " + name);
  const auto cfg_len = get<std::uint64_t>(is, name);
  if (cfg_len > (1u << 24)) throw FormatError("corrupt checkpoint header: " + name);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw FormatError("truncated checkpoint " + name);
  TranslatorConfig cfg;
  try {
    cfg = nlohmann::json::parse(cfg_text).get<TranslatorConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad config in checkpoint " + name + ": " + e.what());
  }
  TranslatorBundle bundle(cfg);
  bundle.epoch = static_cast<int>(get<std::int64_t>(is, name));
  bundle.config.seed = get<std::uint64_t>(is, name);
  const auto count = get<std::uint32_t>(is, name);
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto len = get<std::uint32_t>(is, name);
    if (len > 64) throw FormatError("corrupt section name in " + name);
    std::string section(len, '\0');
    is.read(section.data(), len);
    const auto n = get<std::uint64_t>(is, name);
    if (n > (1ull << 32)) throw FormatError("corrupt section size in " + name);
    std::vector<double> values(n);
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw FormatError("truncated checkpoint " + name);
    try {
      if (section == "G") nn::unflatten(bundle.G.parameters(), values);
      else if (section == "F") nn::unflatten(bundle.F.parameters(), values);
      else if (section == "D_X") nn::unflatten(bundle.D_X.parameters(), values);
      else if (section == "D_Y") nn::unflatten(bundle.D_Y.parameters(), values);
      else if (section == "opt_G") bundle.optimizer_generators.load_state(values);
      else if (section == "opt_D") bundle.optimizer_discriminators.load_state(values);
    } catch (const ArgumentError& e) {
      throw FormatError("checkpoint " + name + " section " + section + ": " + e.what());
    }
  }
  return bundle;
}

// ------------------------------------------------------------ training

namespace {

/// History of generated windows; with probability 1/2 a query swaps the new
/// window for a stored one once the pool is full.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}

  std::vector<double> query(const std::vector<double>& window) {
    if (capacity_ == 0) return window;
    if (items_.size() < capacity_) {
      items_.push_back(window);
      return window;
    }
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < 0.5) {
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, capacity_ - 1)(rng_);
      auto old = items_[i];
      items_[i] = window;
      return old;
    }
    return window;
  }

 private:
  std::size_t capacity_;
  std::mt19937_64 rng_;
  std::vector<std::vector<double>> items_;
};

Tensor batch_tensor(const std::vector<WindowPair>& pairs, std::span<const std::size_t> idx, bool ppg) {
  const std::size_t len = (ppg ? pairs[idx[0]].ppg : pairs[idx[0]].resp).samples.size();
  Tensor t(idx.size(), 1, len);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& s = (ppg ? pairs[idx[b]].ppg : pairs[idx[b]].resp).samples;
    if (s.size() != len) throw ArgumentError("train: windows of unequal length");
    std::copy(s.begin(), s.end(), t.row(b, 0));
  }
  return t;
}

Tensor pooled(ReplayBuffer& pool, const Tensor& fake) {
  Tensor out(fake.batch, fake.channels, fake.length);
  for (std::size_t b = 0; b < fake.batch; ++b) {
    std::vector<double> w(fake.row(b, 0), fake.row(b, 0) + fake.length);
    const auto chosen = pool.query(w);
    std::copy(chosen.begin(), chosen.end(), out.row(b, 0));
  }
  return out;
}

Tensor as_tensor(const std::vector<double>& v, const Tensor& shape_of) {
  Tensor t(shape_of.batch, shape_of.channels, shape_of.length);
  t.data = v;
  return t;
}

/// One discriminator update on real vs. (replayed) fake windows. Returns D loss.
double discriminator_step(Discriminator& d, const Tensor& real, const Tensor& fake, GanLossForm form) {
  Trace tr, tf;
  const Tensor sr = d.forward(real, tr);
  const Tensor sf = d.forward(fake, tf);
  const auto adv = adversarial_loss(sr.data, sf.data, form);
  d.backward(as_tensor(adv.grad_real, sr), tr);
  d.backward(as_tensor(adv.grad_fake, sf), tf);
  return adv.discriminator;
}

struct GeneratorStep {
  LossBreakdown parts;
  int rr_degenerate = 0;
};

GeneratorStep generator_step(TranslatorBundle& m, const Tensor& x, const Tensor& y, const RespConfig& resp) {
  const auto& cfg = m.config;
  Trace t_gx, t_fy, t_frec, t_grec, t_dy, t_dx;
  const Tensor fake_y = m.G.forward(x, t_gx);
  const Tensor fake_x = m.F.forward(y, t_fy);
  const Tensor rec_x = m.F.forward(fake_y, t_frec);
  const Tensor rec_y = m.G.forward(fake_x, t_grec);

  const Tensor s_dy = m.D_Y.forward(fake_y, t_dy);
  const Tensor s_dx = m.D_X.forward(fake_x, t_dx);
  // Scores only feed the generator terms; the real-score halves are unused here.
  const auto adv_g = adversarial_loss(s_dy.data, s_dy.data, cfg.gan_loss_form, cfg.generator_objective);
  const auto adv_f = adversarial_loss(s_dx.data, s_dx.data, cfg.gan_loss_form, cfg.generator_objective);

  // Cycle loss averaged over the batch: one mean-L1 per domain over all elements.
  const auto cyc = cycle_loss(x.data, rec_x.data, y.data, rec_y.data);
  RRLoss rr;
  rr.grad_y_rec.assign(rec_y.data.size(), 0.0);
  if (cfg.lambda_rr > 0.0)
    rr = rr_loss(y.data, rec_y.data, cfg.sampling_rate_hz, cfg.rr_loss_mode, cfg.rr_beta, y.batch, resp);

  GeneratorStep step;
  step.parts = total_objective({adv_g.generator, adv_f.generator, cyc.value, rr.value, 0.0}, cfg);
  step.rr_degenerate = rr.degenerate;

  Tensor g_fake_y = m.D_Y.backward(as_tensor(adv_g.grad_generator, s_dy), t_dy);
  Tensor g_fake_x = m.D_X.backward(as_tensor(adv_f.grad_generator, s_dx), t_dx);

  Tensor g_rec_x = as_tensor(cyc.grad_x_rec, rec_x);
  for (double& v : g_rec_x.data) v *= cfg.lambda_cyc;
  Tensor g_rec_y = as_tensor(cyc.grad_y_rec, rec_y);
  for (std::size_t i = 0; i < g_rec_y.data.size(); ++i)
    g_rec_y.data[i] = cfg.lambda_cyc * g_rec_y.data[i] + cfg.lambda_rr * rr.grad_y_rec[i];

  const Tensor g_from_rec_x = m.F.backward(g_rec_x, t_frec);
  for (std::size_t i = 0; i < g_fake_y.data.size(); ++i) g_fake_y.data[i] += g_from_rec_x.data[i];
  m.G.backward(g_fake_y, t_gx);

  const Tensor g_from_rec_y = m.G.backward(g_rec_y, t_grec);
  for (std::size_t i = 0; i < g_fake_x.data.size(); ++i) g_fake_x.data[i] += g_from_rec_y.data[i];
  m.F.backward(g_fake_x, t_fy);
  return step;
}

double learning_rate_for_epoch(const TranslatorConfig& cfg, int epoch) {
  // Constant for the first half, then linear decay towards zero.
  const int hold = cfg.epochs / 2;
  const int decay = cfg.epochs - hold;
  const double factor = 1.0 - std::max(0, epoch - hold) / static_cast<double>(decay + 1);
  return cfg.learning_rate * factor;
}

bool params_finite(TranslatorBundle& m) {
  for (auto* p : m.generator_parameters())
    for (double v : p->value)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

double validation_mae(const TranslatorBundle& bundle, const std::vector<WindowPair>& val_pairs) {
  if (val_pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> est, ref;
  const double fs = bundle.config.sampling_rate_hz;
  for (const auto& p : val_pairs) {
    est.push_back(estimate_rr_count(translate(p.ppg, bundle).samples, fs).rate_brpm);
    ref.push_back(estimate_rr_count(p.resp.samples, fs).rate_brpm);
  }
  return mae(est, ref);
}

TrainResult train(const std::vector<WindowPair>& pairs, const std::vector<WindowPair>& val_pairs,
                  const TranslatorConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (pairs.empty()) throw ArgumentError("train: no training pairs");
  for (const auto& p : pairs)
    if (p.ppg.samples.size() != static_cast<std::size_t>(cfg.window_length) ||
        p.resp.samples.size() != static_cast<std::size_t>(cfg.window_length))
      throw ArgumentError("train: window length differs from config.window_length");
  for (const auto& v : val_pairs)
    for (const auto& p : pairs)
      if (v.ppg.subject_id == p.ppg.subject_id)
        throw ArgumentError("train: validation subject " + v.ppg.subject_id + " also in training set");

  TranslatorBundle model(cfg);
  TrainResult result{model, {}, {}, 0, false, false, {}, {}};
  if (val_pairs.empty()) result.warnings.push_back("no validation pairs: early stopping disabled");

  const RespConfig resp;
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  ReplayBuffer pool_x(static_cast<std::size_t>(cfg.replay_buffer_size), cfg.seed + 1);
  ReplayBuffer pool_y(static_cast<std::size_t>(cfg.replay_buffer_size), cfg.seed + 2);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long iteration = 0;
  int rr_degenerate = 0;
  TranslatorBundle last_good = model;
  bool have_best = false;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = learning_rate_for_epoch(cfg, epoch);
    model.optimizer_generators.lr = lr;
    model.optimizer_discriminators.lr = lr;
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossBreakdown sum;
    std::size_t batches = 0;
    bool capped = false;
    try {
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        std::span<const std::size_t> idx(order.data() + start, end - start);
        const Tensor x = batch_tensor(pairs, idx, true);
        const Tensor y = batch_tensor(pairs, idx, false);

        // Discriminators first, against the current generators' outputs.
        Trace scratch;
        const Tensor fake_y = model.G.forward(x, scratch);
        const Tensor fake_x = model.F.forward(y, scratch);
        auto d_params = model.discriminator_parameters();
        nn::zero_grad(d_params);
        const double d_loss = discriminator_step(model.D_Y, y, pooled(pool_y, fake_y), cfg.gan_loss_form) +
                              discriminator_step(model.D_X, x, pooled(pool_x, fake_x), cfg.gan_loss_form);
        if (!std::isfinite(d_loss)) throw TrainingDivergence("non-finite discriminator loss", {});
        model.optimizer_discriminators.step(d_params);

        auto g_params = model.generator_parameters();
        nn::zero_grad(g_params);
        const auto step = generator_step(model, x, y, resp);
        model.optimizer_generators.step(g_params);
        nn::zero_grad(d_params);
        if (!params_finite(model)) throw TrainingDivergence("non-finite generator parameters", step.parts);

        rr_degenerate += step.rr_degenerate;
        result.iterations.push_back(step.parts);
        sum.adv_G += step.parts.adv_G;
        sum.adv_F += step.parts.adv_F;
        sum.cyc += step.parts.cyc;
        sum.rr += step.parts.rr;
        sum.total += step.parts.total;
        ++batches;
        ++iteration;
        if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) {
          capped = true;
          break;
        }
      }
    } catch (const TrainingDivergence& e) {
      result.bundle = last_good;
      result.diverged = true;
      result.message = std::string(e.what()) + " in epoch " + std::to_string(epoch);
      return result;
    }

    model.epoch = epoch;
    EpochLog row;
    row.epoch = epoch;
    const double n = static_cast<double>(std::max<std::size_t>(1, batches));
    row.loss = {sum.adv_G / n, sum.adv_F / n, sum.cyc / n, sum.rr / n, sum.total / n};
    row.val_mae = validation_mae(model, val_pairs);
    result.epochs.push_back(row);
    if (on_epoch) on_epoch(row);
    last_good = model;

    if (val_pairs.empty()) {
      result.bundle = model;
      result.best_epoch = epoch;
    } else if (!have_best || row.val_mae < best_val) {
      best_val = row.val_mae;
      result.bundle = model;
      result.best_epoch = epoch;
      since_best = 0;
      have_best = true;
    } else if (++since_best >= cfg.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
    if (capped) break;
  }
  if (rr_degenerate > 0)
    result.warnings.push_back(std::to_string(rr_degenerate) + " window(s) had no respiratory-band energy in rr_loss");
  return result;
}

void append_training_log(const std::filesystem::path& file, const EpochLog& row) {
  const bool fresh = !std::filesystem::exists(file);
  std::ofstream os(file, std::ios::app);
  if (!os) throw IoError("cannot append to training log " + file.string());
  if (fresh) os << "epoch,adv_G,adv_F,cyc,rr,total,val_mae\n";
  os.precision(17);
  os << row.epoch << ',' << row.loss.adv_G << ',' << row.loss.adv_F << ',' << row.loss.cyc << ',' << row.loss.rr
     << ',' << row.loss.total << ',';
  if (std::isfinite(row.val_mae)) os << row.val_mae;
  os << '\n';
  if (!os) throw IoError("failed writing training log " + file.string());
}

}  // namespace prt
