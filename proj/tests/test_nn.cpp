#include <doctest.h>

#include "gradcheck.hpp"
#include "prt/nn.hpp"

using namespace prt;
using testing::check_module;
using testing::random_tensor;

namespace {

template <typename M>
M initialised(M m, std::uint64_t seed = 7) {
  std::vector<nn::Parameter*> p;
  m.collect(p);
  std::mt19937_64 rng(seed);
  nn::init_normal(p, 0.5, rng);
  // Non-zero biases exercise the bias gradients.
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto* q : p)
    if (q->name == "bias")
      for (double& v : q->value) v = u(rng);
  return m;
}

}  // namespace

TEST_CASE("conv1d shapes and a hand-computed output") {
  nn::Conv1d c(1, 1, 3, 2, 1);
  c.weight.value = {1.0, 2.0, 3.0};
  c.bias.value = {0.5};
  nn::Tensor x(1, 1, 5);
  x.data = {1, 2, 3, 4, 5};
  nn::Trace t;
  const auto y = c.forward(x, t);
  REQUIRE(y.length == 3);
  CHECK(c.output_length(5) == 3);
  // Zero padding: [0,1,2], [2,3,4], [4,5,0].
  CHECK(y.data[0] == doctest::Approx(0 + 2 + 6 + 0.5));
  CHECK(y.data[1] == doctest::Approx(2 + 6 + 12 + 0.5));
  CHECK(y.data[2] == doctest::Approx(4 + 10 + 0 + 0.5));
}

TEST_CASE("conv transpose doubles the length with output padding") {
  nn::ConvTranspose1d c(2, 3, 3, 2, 1, 1);
  CHECK(c.output_length(225) == 450);
  nn::Trace t;
  CHECK(c.forward(random_tensor(2, 2, 7, 1), t).length == 14);
}

TEST_CASE("reflection pad mirrors without repeating the edge") {
  nn::ReflectionPad1d p(2);
  nn::Tensor x(1, 1, 4);
  x.data = {1, 2, 3, 4};
  nn::Trace t;
  CHECK(p.forward(x, t).data == std::vector<double>{3, 2, 1, 2, 3, 4, 3, 2});
}

TEST_CASE("instance norm output has zero mean and unit variance per channel") {
  nn::InstanceNorm1d n;
  nn::Trace t;
  const auto y = n.forward(random_tensor(2, 3, 50, 4), t);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < 50; ++i) m += y.at(b, c, i) / 50.0;
      for (std::size_t i = 0; i < 50; ++i) v += (y.at(b, c, i) - m) * (y.at(b, c, i) - m) / 50.0;
      CHECK(std::abs(m) < 1e-12);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("layer gradients match central differences") {
  SUBCASE("conv1d strided") {
    auto c = initialised(nn::Conv1d(2, 3, 4, 2, 1));
    CHECK(check_module(c, random_tensor(2, 2, 11, 1)) < 1e-6);
  }
  SUBCASE("conv1d unpadded") {
    auto c = initialised(nn::Conv1d(3, 2, 7));
    CHECK(check_module(c, random_tensor(1, 3, 16, 2)) < 1e-6);
  }
  SUBCASE("conv transpose") {
    auto c = initialised(nn::ConvTranspose1d(2, 3, 3, 2, 1, 1));
    CHECK(check_module(c, random_tensor(2, 2, 6, 3)) < 1e-6);
  }
  SUBCASE("instance norm") {
    nn::InstanceNorm1d n;
    CHECK(check_module(n, random_tensor(2, 2, 9, 4)) < 1e-5);
  }
  SUBCASE("activations and fixed maps") {
    nn::LeakyReLU relu(0.0), leaky(0.2);
    nn::UnitTanh th;
    nn::Affine aff(2.0, -1.0);
    nn::ReflectionPad1d pad(3);
    CHECK(check_module(relu, random_tensor(1, 2, 12, 5)) < 1e-6);
    CHECK(check_module(leaky, random_tensor(1, 2, 12, 6)) < 1e-6);
    CHECK(check_module(th, random_tensor(1, 2, 12, 7)) < 1e-6);
    CHECK(check_module(aff, random_tensor(1, 2, 12, 8)) < 1e-6);
    CHECK(check_module(pad, random_tensor(1, 2, 12, 9)) < 1e-6);
  }
  SUBCASE("residual block") {
    auto r = initialised(nn::ResidualBlock(3));
    CHECK(check_module(r, random_tensor(2, 3, 10, 10), 1, 1e-3) < 1e-5);
  }
  SUBCASE("sequential") {
    nn::Sequential s;
    s.add<nn::ReflectionPad1d>(2);
    s.add<nn::Conv1d>(1, 4, 5);
    s.add<nn::InstanceNorm1d>();
    s.add<nn::LeakyReLU>(0.2);
    s.add<nn::Conv1d>(4, 1, 3, 1, 1);
    s.add<nn::UnitTanh>();
    s = initialised(std::move(s));
    CHECK(check_module(s, random_tensor(2, 1, 16, 11), 1, 1e-3) < 1e-5);
  }
}

TEST_CASE("sequential copies are deep") {
  nn::Sequential s;
  s.add<nn::Conv1d>(1, 1, 3);
  nn::Sequential copy = s;
  std::vector<nn::Parameter*> a, b;
  s.collect(a);
  copy.collect(b);
  a[0]->value[0] = 42.0;
  CHECK(b[0]->value[0] != 42.0);
}

TEST_CASE("parameter helpers") {
  nn::Conv1d c(2, 3, 4);
  std::vector<nn::Parameter*> p;
  c.collect(p);
  CHECK(nn::parameter_count(p) == 2 * 3 * 4 + 3);
  std::mt19937_64 rng(1);
  nn::init_normal(p, 0.02, rng);
  for (double v : c.bias.value) CHECK(v == 0.0);
  const auto flat = nn::flatten(p);
  CHECK(flat.size() == 27);
  std::vector<double> twice(flat);
  for (double& v : twice) v *= 2.0;
  nn::unflatten(p, twice);
  CHECK(nn::flatten(p) == twice);
}

TEST_CASE("adam moves against the gradient and round-trips its state") {
  nn::Parameter w{"weight", {1.0, -1.0}, {0.5, -2.0}};
  std::vector<nn::Parameter*> p{&w};
  nn::Adam opt(0.1, 0.9, 0.999);
  opt.step(p);
  // First bias-corrected step has magnitude lr regardless of gradient scale.
  CHECK(w.value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w.value[1] == doctest::Approx(-0.9).epsilon(1e-6));
  CHECK(opt.steps() == 1);

  nn::Adam other(0.1, 0.9, 0.999);
  other.load_state(opt.state());
  nn::Parameter w2 = w;
  std::vector<nn::Parameter*> p2{&w2};
  opt.step(p);
  other.step(p2);
  CHECK(w.value == w2.value);
}
