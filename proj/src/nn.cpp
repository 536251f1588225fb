#include "prt/nn.hpp"

#include <algorithm>
#include <cmath>

#include "prt/error.hpp"

namespace prt::nn {

namespace {

Parameter make_param(std::string name, std::size_t n) {
  return {std::move(name), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
}

}  // namespace

// ---------------------------------------------------------------- Conv1d

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad)
    : weight(make_param("weight", out * in * kernel)),
      bias(make_param("bias", out)),
      in_(in),
      out_(out),
      k_(kernel),
      s_(stride),
      p_(pad) {}

std::size_t Conv1d::output_length(std::size_t in_len) const {
  const std::size_t padded = in_len + 2 * p_;
  if (padded < k_) throw ArgumentError("Conv1d: input shorter than kernel");
  return (padded - k_) / s_ + 1;
}

void Conv1d::geometry(std::vector<std::pair<int, int>>& out) const {
  out.emplace_back(static_cast<int>(k_), static_cast<int>(s_));
}

Tensor Conv1d::forward(const Tensor& x, Trace& trace) const {
  if (x.channels != in_) throw ArgumentError("Conv1d: channel mismatch");
  const std::size_t lout = output_length(x.length);
  Tensor y(x.batch, out_, lout);
  const auto lin = static_cast<std::ptrdiff_t>(x.length);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t o = 0; o < out_; ++o) {
      double* yr = y.row(b, o);
      std::fill(yr, yr + lout, bias.value[o]);
      for (std::size_t i = 0; i < in_; ++i) {
        const double* xr = x.row(b, i);
        const double* w = &weight.value[(o * in_ + i) * k_];
        for (std::size_t k = 0; k < k_; ++k) {
          const double wk = w[k];
          // input index = t*s + k - p must lie in [0, lin)
          const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(p_);
          const auto s = static_cast<std::ptrdiff_t>(s_);
          std::ptrdiff_t t0 = off >= 0 ? 0 : (-off + s - 1) / s;
          std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(lout), (lin - off + s - 1) / s);
          for (std::ptrdiff_t t = t0; t < t1; ++t) yr[t] += wk * xr[t * s + off];
        }
      }
    }
  trace.saved = x;
  return y;
}

Tensor Conv1d::backward(const Tensor& gy, const Trace& trace) {
  const Tensor& x = trace.saved;
  Tensor gx(x.batch, x.channels, x.length);
  const auto lin = static_cast<std::ptrdiff_t>(x.length);
  const auto s = static_cast<std::ptrdiff_t>(s_);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t o = 0; o < out_; ++o) {
      const double* gr = gy.row(b, o);
      double gb = 0.0;
      for (std::size_t t = 0; t < gy.length; ++t) gb += gr[t];
      bias.grad[o] += gb;
      for (std::size_t i = 0; i < in_; ++i) {
        const double* xr = x.row(b, i);
        double* gxr = gx.row(b, i);
        const std::size_t widx = (o * in_ + i) * k_;
        for (std::size_t k = 0; k < k_; ++k) {
          const double wk = weight.value[widx + k];
          const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(p_);
          std::ptrdiff_t t0 = off >= 0 ? 0 : (-off + s - 1) / s;
          std::ptrdiff_t t1 =
              std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(gy.length), (lin - off + s - 1) / s);
          double gw = 0.0;
          for (std::ptrdiff_t t = t0; t < t1; ++t) {
            gw += gr[t] * xr[t * s + off];
            gxr[t * s + off] += gr[t] * wk;
          }
          weight.grad[widx + k] += gw;
        }
      }
    }
  return gx;
}

void Conv1d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ------------------------------------------------------- ConvTranspose1d

ConvTranspose1d::ConvTranspose1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                 std::size_t pad, std::size_t output_pad)
    : weight(make_param("weight", in * out * kernel)),
      bias(make_param("bias", out)),
      in_(in),
      out_(out),
      k_(kernel),
      s_(stride),
      p_(pad),
      op_(output_pad) {}

std::size_t ConvTranspose1d::output_length(std::size_t in_len) const {
  return (in_len - 1) * s_ + k_ + op_ - 2 * p_;
}

Tensor ConvTranspose1d::forward(const Tensor& x, Trace& trace) const {
  if (x.channels != in_) throw ArgumentError("ConvTranspose1d: channel mismatch");
  const std::size_t lout = output_length(x.length);
  Tensor y(x.batch, out_, lout);
  const auto lo = static_cast<std::ptrdiff_t>(lout);
  const auto s = static_cast<std::ptrdiff_t>(s_);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t o = 0; o < out_; ++o) {
      double* yr = y.row(b, o);
      std::fill(yr, yr + lout, bias.value[o]);
      for (std::size_t i = 0; i < in_; ++i) {
        const double* xr = x.row(b, i);
        const double* w = &weight.value[(i * out_ + o) * k_];
        for (std::size_t k = 0; k < k_; ++k) {
          const double wk = w[k];
          // output index = t*s + k - p
          const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(p_);
          std::ptrdiff_t t0 = off >= 0 ? 0 : (-off + s - 1) / s;
          std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x.length), (lo - off + s - 1) / s);
          for (std::ptrdiff_t t = t0; t < t1; ++t) yr[t * s + off] += wk * xr[t];
        }
      }
    }
  trace.saved = x;
  return y;
}

Tensor ConvTranspose1d::backward(const Tensor& gy, const Trace& trace) {
  const Tensor& x = trace.saved;
  Tensor gx(x.batch, x.channels, x.length);
  const auto lo = static_cast<std::ptrdiff_t>(gy.length);
  const auto s = static_cast<std::ptrdiff_t>(s_);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t o = 0; o < out_; ++o) {
      const double* gr = gy.row(b, o);
      double gb = 0.0;
      for (std::size_t t = 0; t < gy.length; ++t) gb += gr[t];
      bias.grad[o] += gb;
      for (std::size_t i = 0; i < in_; ++i) {
        const double* xr = x.row(b, i);
        double* gxr = gx.row(b, i);
        const std::size_t widx = (i * out_ + o) * k_;
        for (std::size_t k = 0; k < k_; ++k) {
          const double wk = weight.value[widx + k];
          const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(p_);
          std::ptrdiff_t t0 = off >= 0 ? 0 : (-off + s - 1) / s;
          std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x.length), (lo - off + s - 1) / s);
          double gw = 0.0;
          for (std::ptrdiff_t t = t0; t < t1; ++t) {
            gw += gr[t * s + off] * xr[t];
            gxr[t] += gr[t * s + off] * wk;
          }
          weight.grad[widx + k] += gw;
        }
      }
    }
  return gx;
}

void ConvTranspose1d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ------------------------------------------------------- InstanceNorm1d

Tensor InstanceNorm1d::forward(const Tensor& x, Trace& trace) const {
  Tensor y(x.batch, x.channels, x.length);
  trace.aux.assign(x.batch * x.channels, 0.0);
  const auto n = static_cast<double>(x.length);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t c = 0; c < x.channels; ++c) {
      const double* xr = x.row(b, c);
      double m = 0.0;
      for (std::size_t t = 0; t < x.length; ++t) m += xr[t];
      m /= n;
      double var = 0.0;
      for (std::size_t t = 0; t < x.length; ++t) var += (xr[t] - m) * (xr[t] - m);
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps_);
      double* yr = y.row(b, c);
      for (std::size_t t = 0; t < x.length; ++t) yr[t] = (xr[t] - m) * inv;
      trace.aux[b * x.channels + c] = inv;
    }
  trace.saved = y;
  return y;
}

Tensor InstanceNorm1d::backward(const Tensor& gy, const Trace& trace) {
  const Tensor& y = trace.saved;
  Tensor gx(y.batch, y.channels, y.length);
  const auto n = static_cast<double>(y.length);
  for (std::size_t b = 0; b < y.batch; ++b)
    for (std::size_t c = 0; c < y.channels; ++c) {
      const double* yr = y.row(b, c);
      const double* gr = gy.row(b, c);
      double mg = 0.0, mgy = 0.0;
      for (std::size_t t = 0; t < y.length; ++t) {
        mg += gr[t];
        mgy += gr[t] * yr[t];
      }
      mg /= n;
      mgy /= n;
      const double inv = trace.aux[b * y.channels + c];
      double* gxr = gx.row(b, c);
      for (std::size_t t = 0; t < y.length; ++t) gxr[t] = inv * (gr[t] - mg - yr[t] * mgy);
    }
  return gx;
}

// ------------------------------------------------------- pointwise layers

Tensor LeakyReLU::forward(const Tensor& x, Trace& trace) const {
  Tensor y = x;
  for (double& v : y.data)
    if (v < 0.0) v *= slope_;
  trace.saved = x;
  return y;
}

Tensor LeakyReLU::backward(const Tensor& gy, const Trace& trace) {
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.data.size(); ++i)
    if (trace.saved.data[i] < 0.0) gx.data[i] *= slope_;
  return gx;
}

Tensor UnitTanh::forward(const Tensor& x, Trace& trace) const {
  Tensor y = x;
  for (double& v : y.data) v = 0.5 * (std::tanh(v) + 1.0);
  trace.saved = y;
  return y;
}

Tensor UnitTanh::backward(const Tensor& gy, const Trace& trace) {
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.data.size(); ++i) {
    const double y = trace.saved.data[i];
    gx.data[i] *= 2.0 * y * (1.0 - y);
  }
  return gx;
}

Tensor Affine::forward(const Tensor& x, Trace&) const {
  Tensor y = x;
  for (double& v : y.data) v = scale_ * v + shift_;
  return y;
}

Tensor Affine::backward(const Tensor& gy, const Trace&) {
  Tensor gx = gy;
  for (double& v : gx.data) v *= scale_;
  return gx;
}

Tensor ReflectionPad1d::forward(const Tensor& x, Trace& trace) const {
  if (x.length <= pad_) throw ArgumentError("ReflectionPad1d: input shorter than padding");
  const std::size_t lout = x.length + 2 * pad_;
  Tensor y(x.batch, x.channels, lout);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t c = 0; c < x.channels; ++c) {
      const double* xr = x.row(b, c);
      double* yr = y.row(b, c);
      for (std::size_t t = 0; t < lout; ++t) {
        auto src = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(pad_);
        if (src < 0) src = -src;
        const auto last = static_cast<std::ptrdiff_t>(x.length) - 1;
        if (src > last) src = 2 * last - src;
        yr[t] = xr[src];
      }
    }
  trace.extra = x.length;
  return y;
}

Tensor ReflectionPad1d::backward(const Tensor& gy, const Trace& trace) {
  const std::size_t lin = trace.extra;
  Tensor gx(gy.batch, gy.channels, lin);
  for (std::size_t b = 0; b < gy.batch; ++b)
    for (std::size_t c = 0; c < gy.channels; ++c) {
      const double* gr = gy.row(b, c);
      double* gxr = gx.row(b, c);
      for (std::size_t t = 0; t < gy.length; ++t) {
        auto src = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(pad_);
        if (src < 0) src = -src;
        const auto last = static_cast<std::ptrdiff_t>(lin) - 1;
        if (src > last) src = 2 * last - src;
        gxr[src] += gr[t];
      }
    }
  return gx;
}

void ReflectionPad1d::geometry(std::vector<std::pair<int, int>>&) const {}

// ------------------------------------------------------- containers

Sequential::Sequential(const Sequential& other) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

Tensor Sequential::forward(const Tensor& x, Trace& trace) const {
  trace.children.resize(layers_.size());
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, trace.children[i]);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out, const Trace& trace) {
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, trace.children[i]);
  return g;
}

void Sequential::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect(out);
}

void Sequential::geometry(std::vector<std::pair<int, int>>& out) const {
  for (const auto& l : layers_) l->geometry(out);
}

ResidualBlock::ResidualBlock(std::size_t channels) {
  body_.add<ReflectionPad1d>(1);
  body_.add<Conv1d>(channels, channels, 3);
  body_.add<InstanceNorm1d>();
  body_.add<LeakyReLU>(0.0);
  body_.add<ReflectionPad1d>(1);
  body_.add<Conv1d>(channels, channels, 3);
  body_.add<InstanceNorm1d>();
}

Tensor ResidualBlock::forward(const Tensor& x, Trace& trace) const {
  trace.children.resize(1);
  Tensor y = body_.forward(x, trace.children[0]);
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
  return y;
}

Tensor ResidualBlock::backward(const Tensor& grad_out, const Trace& trace) {
  Tensor g = body_.backward(grad_out, trace.children[0]);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += grad_out.data[i];
  return g;
}

// ------------------------------------------------------- parameters

std::size_t parameter_count(std::span<Parameter* const> params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

std::vector<double> flatten(std::span<Parameter* const> params) {
  std::vector<double> flat;
  flat.reserve(parameter_count(params));
  for (const auto* p : params) flat.insert(flat.end(), p->value.begin(), p->value.end());
  return flat;
}

void unflatten(std::span<Parameter* const> params, std::span<const double> flat) {
  if (flat.size() != parameter_count(params)) throw ArgumentError("parameter vector size mismatch");
  std::size_t off = 0;
  for (auto* p : params) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.begin());
    off += p->value.size();
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

void init_normal(std::span<Parameter* const> params, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto* p : params) {
    if (p->name == "bias") {
      std::fill(p->value.begin(), p->value.end(), 0.0);
      continue;
    }
    for (double& v : p->value) v = dist(rng);
  }
}

void Adam::step(std::span<Parameter* const> params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->value.size(), 0.0);
      v_[i].assign(params[i]->value.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      p.value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

std::vector<double> Adam::state() const {
  std::vector<double> s{static_cast<double>(t_), static_cast<double>(m_.size())};
  for (std::size_t i = 0; i < m_.size(); ++i) {
    s.push_back(static_cast<double>(m_[i].size()));
    s.insert(s.end(), m_[i].begin(), m_[i].end());
    s.insert(s.end(), v_[i].begin(), v_[i].end());
  }
  return s;
}

void Adam::load_state(std::span<const double> s) {
  if (s.size() < 2) throw ArgumentError("optimizer state too short");
  std::size_t off = 0;
  t_ = static_cast<std::uint64_t>(s[off++]);
  const auto groups = static_cast<std::size_t>(s[off++]);
  m_.assign(groups, {});
  v_.assign(groups, {});
  for (std::size_t i = 0; i < groups; ++i) {
    if (off >= s.size()) throw ArgumentError("optimizer state truncated");
    const auto n = static_cast<std::size_t>(s[off++]);
    if (off + 2 * n > s.size()) throw ArgumentError("optimizer state truncated");
    m_[i].assign(s.begin() + static_cast<std::ptrdiff_t>(off), s.begin() + static_cast<std::ptrdiff_t>(off + n));
    off += n;
    v_[i].assign(s.begin() + static_cast<std::ptrdiff_t>(off), s.begin() + static_cast<std::ptrdiff_t>(off + n));
    off += n;
  }
}

}  // namespace prt::nn
