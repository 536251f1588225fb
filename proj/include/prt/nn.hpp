#pragma once

// Minimal 1-D convolutional network toolkit with explicit reverse-mode
// gradients. Forward passes record what backward needs in a Trace owned by
// the caller, so one network can be applied several times before any
// backward pass (as the cycle losses require).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace prt::nn {

/// Dense (batch, channels, length) array, row-major.
struct Tensor {
  std::size_t batch = 0, channels = 0, length = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t b, std::size_t c, std::size_t l, double fill = 0.0)
      : batch(b), channels(c), length(l), data(b * c * l, fill) {}

  double& at(std::size_t b, std::size_t c, std::size_t t) { return data[(b * channels + c) * length + t]; }
  double at(std::size_t b, std::size_t c, std::size_t t) const { return data[(b * channels + c) * length + t]; }
  double* row(std::size_t b, std::size_t c) { return data.data() + (b * channels + c) * length; }
  const double* row(std::size_t b, std::size_t c) const { return data.data() + (b * channels + c) * length; }
  bool same_shape(const Tensor& o) const {
    return batch == o.batch && channels == o.channels && length == o.length;
  }
};

struct Parameter {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

struct Trace {
  Tensor saved;
  std::vector<double> aux;
  std::vector<Trace> children;
  std::size_t extra = 0;
};

class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x, Trace& trace) const = 0;
  /// Returns d loss / d input and accumulates parameter gradients.
  virtual Tensor backward(const Tensor& grad_out, const Trace& trace) = 0;
  virtual void collect(std::vector<Parameter*>& /*out*/) {}
  virtual std::unique_ptr<Module> clone() const = 0;
  /// (kernel, stride) pairs along the forward path, for receptive-field arithmetic.
  virtual void geometry(std::vector<std::pair<int, int>>& /*out*/) const {}
};

class Conv1d : public Module {
 public:
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t pad = 0);
  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  void collect(std::vector<Parameter*>& out) override;
  std::unique_ptr<Module> clone() const override { return std::make_unique<Conv1d>(*this); }
  void geometry(std::vector<std::pair<int, int>>& out) const override;

  std::size_t output_length(std::size_t in_len) const;
  Parameter weight;  // [out][in][kernel]
  Parameter bias;    // [out]

 private:
  std::size_t in_, out_, k_, s_, p_;
};

/// Fractionally-strided convolution (PyTorch ConvTranspose1d semantics).
class ConvTranspose1d : public Module {
 public:
  ConvTranspose1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
                  std::size_t output_pad);
  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  void collect(std::vector<Parameter*>& out) override;
  std::unique_ptr<Module> clone() const override { return std::make_unique<ConvTranspose1d>(*this); }

  std::size_t output_length(std::size_t in_len) const;
  Parameter weight;  // [in][out][kernel]
  Parameter bias;    // [out]

 private:
  std::size_t in_, out_, k_, s_, p_, op_;
};

/// Per-sample, per-channel normalisation without affine parameters.
class InstanceNorm1d : public Module {
 public:
  explicit InstanceNorm1d(double eps = 1e-5) : eps_(eps) {}
  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  std::unique_ptr<Module> clone() const override { return std::make_unique<InstanceNorm1d>(*this); }

 private:
  double eps_;
};

class LeakyReLU : public Module {
 public:
  explicit LeakyReLU(double slope = 0.0) : slope_(slope) {}
  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  std::unique_ptr<Module> clone() const override { return std::make_unique<LeakyReLU>(*this); }

 private:
  double slope_;
};

/// tanh mapped onto [0, 1]: (tanh(x) + 1) / 2.
class UnitTanh : public Module {
 public:
  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  std::unique_ptr<Module> clone() const override { return std::make_unique<UnitTanh>(*this); }
};

/// Fixed elementwise y = scale * x + shift.
class Affine : public Module {
 public:
  Affine(double scale, double shift) : scale_(scale), shift_(shift) {}
  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  std::unique_ptr<Module> clone() const override { return std::make_unique<Affine>(*this); }

 private:
  double scale_, shift_;
};

class ReflectionPad1d : public Module {
 public:
  explicit ReflectionPad1d(std::size_t pad) : pad_(pad) {}
  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  std::unique_ptr<Module> clone() const override { return std::make_unique<ReflectionPad1d>(*this); }
  void geometry(std::vector<std::pair<int, int>>& out) const override;

 private:
  std::size_t pad_;
};

class Sequential : public Module {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename M, typename... Args>
  M& add(Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *m;
    layers_.push_back(std::move(m));
    return ref;
  }

  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  void collect(std::vector<Parameter*>& out) override;
  std::unique_ptr<Module> clone() const override { return std::make_unique<Sequential>(*this); }
  void geometry(std::vector<std::pair<int, int>>& out) const override;
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Module>> layers_;
};

/// x + body(x) with body = pad, conv3, norm, relu, pad, conv3, norm.
class ResidualBlock : public Module {
 public:
  explicit ResidualBlock(std::size_t channels);
  Tensor forward(const Tensor& x, Trace& trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  void collect(std::vector<Parameter*>& out) override { body_.collect(out); }
  std::unique_ptr<Module> clone() const override { return std::make_unique<ResidualBlock>(*this); }

 private:
  Sequential body_;
};

/// Parameter bookkeeping shared by the translator networks.
std::size_t parameter_count(std::span<Parameter* const> params);
std::vector<double> flatten(std::span<Parameter* const> params);
void unflatten(std::span<Parameter* const> params, std::span<const double> flat);
void zero_grad(std::span<Parameter* const> params);
/// Draws every weight from N(0, std) and sets biases to zero.
void init_normal(std::span<Parameter* const> params, double std, std::mt19937_64& rng);

/// Adaptive-moment optimiser.
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps = 1e-8)
      : lr(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<Parameter* const> params);

  double lr = 2e-4;
  std::uint64_t steps() const { return t_; }

  /// Optimiser state as a flat vector (step count, first and second moments).
  std::vector<double> state() const;
  void load_state(std::span<const double> s);

 private:
  double beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace prt::nn
