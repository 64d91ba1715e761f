#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "modclass/common/binary_io.hpp"
#include "modclass/nn/checkpoint.hpp"
#include "modclass/nn/gemm.hpp"
#include "modclass/nn/grad_check.hpp"
#include "modclass/nn/ops.hpp"
#include "modclass/nn/parallel.hpp"
#include "modclass/nn/param.hpp"
#include "test_support.hpp"

using namespace modclass::nn;
using namespace testing_support;

namespace {

// Direct evaluation of the cross-correlation definition, zero outside [0, L).
template <typename T>
BasicTensor<T> conv_oracle(const BasicTensor<T>& x, const BasicTensor<T>& w, std::span<const T> bias,
                           std::size_t stride, Padding padding) {
  const std::size_t k = w.batch(), c_in = w.length(), c_out = w.channels();
  const std::size_t out_len = conv1d_output_length(x.length(), k, stride, padding);
  const PadAmounts pad = conv1d_padding(x.length(), k, stride, padding);
  BasicTensor<T> y(Shape{x.batch(), out_len, c_out});
  for (std::size_t b = 0; b < x.batch(); ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t o = 0; o < c_out; ++o) {
        T acc = bias[o];
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad.left);
          for (std::size_t c = 0; c < c_in; ++c) {
            const T xv = (src >= 0 && src < static_cast<std::ptrdiff_t>(x.length()))
                             ? x.at(b, static_cast<std::size_t>(src), c)
                             : T{0};
            acc = std::fma(xv, w.at(j, c, o), acc);
          }
        }
        y.at(b, t, o) = acc;
      }
    }
  }
  return y;
}

template <typename T>
void check_conv_exact(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  const std::size_t k = pick(1, 15), stride = pick(1, 2), c_in = pick(1, 9), c_out = pick(1, 37);
  const std::size_t length = pick(k, 70), batch = pick(1, 3);
  const Padding padding = pick(0, 1) ? Padding::same : Padding::valid;
  auto x = random_tensor<T>(Shape{batch, length, c_in}, seed + 1);
  auto w = random_tensor<T>(Shape{k, c_in, c_out}, seed + 2);
  auto bias = random_tensor<T>(Shape{1, 1, c_out}, seed + 3);
  auto got = conv1d_forward<T>(x, w, bias.values(), stride, padding);
  auto want = conv_oracle<T>(x, w, bias.values(), stride, padding);
  REQUIRE(got.shape() == want.shape());
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < got.size(); ++i) mismatches += got.data()[i] != want.data()[i];
  CHECK_MESSAGE(mismatches == 0, "k=", k, " stride=", stride, " c_in=", c_in, " c_out=", c_out, " len=", length);
}

}  // namespace

TEST_CASE("output length and padding follow the same/valid conventions") {
  CHECK(conv1d_output_length(1024, 9, 1, Padding::same) == 1024);
  CHECK(conv1d_output_length(1024, 9, 2, Padding::same) == 512);
  CHECK(conv1d_output_length(7, 3, 2, Padding::same) == 4);
  CHECK(conv1d_output_length(10, 3, 1, Padding::valid) == 8);
  CHECK(conv1d_output_length(10, 3, 2, Padding::valid) == 4);
  CHECK(conv1d_output_length(2, 3, 1, Padding::valid) == 0);
  auto p = conv1d_padding(1024, 9, 1, Padding::same);
  CHECK(p.left == 4);
  CHECK(p.right == 4);
  p = conv1d_padding(1024, 8, 1, Padding::same);
  CHECK(p.left == 3);
  CHECK(p.right == 4);
  p = conv1d_padding(1024, 9, 2, Padding::same);
  CHECK(p.left + p.right == 7);
  CHECK(p.right == 4);
}

TEST_CASE("gemm matches the sequential fma loop bit for bit") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t m = 1 + rng() % 29, n = 1 + rng() % 71, kdim = 1 + rng() % 40;
    auto a = random_tensor<float>(Shape{1, m, kdim}, seed * 3 + 1);
    auto b = random_tensor<float>(Shape{1, kdim, n}, seed * 3 + 2);
    auto c = random_tensor<float>(Shape{1, m, n}, seed * 3 + 3);
    auto want = c;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        float acc = want.at(0, i, j);
        for (std::size_t p = 0; p < kdim; ++p) acc = std::fma(a.at(0, i, p), b.at(0, p, j), acc);
        want.at(0, i, j) = acc;
      }
    }
    gemm_accumulate<float>(m, n, kdim, StridedMatrix<float>{a.data(), static_cast<std::ptrdiff_t>(kdim), 1}, b.data(),
                           static_cast<std::ptrdiff_t>(n), c.data(), static_cast<std::ptrdiff_t>(n));
    for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(c.data()[i] == want.data()[i]);
  }
}

TEST_CASE("conv1d_forward equals the direct definition exactly") {
  for (std::uint64_t seed = 100; seed < 160; ++seed) {
    check_conv_exact<float>(seed);
    check_conv_exact<double>(seed);
  }
}

TEST_CASE("conv1d output does not depend on the worker count") {
  auto x = random_tensor<float>(Shape{7, 64, 5}, 1);
  auto w = random_tensor<float>(Shape{9, 5, 16}, 2);
  auto bias = random_tensor<float>(Shape{1, 1, 16}, 3);
  auto gy = random_tensor<float>(Shape{7, 32, 16}, 4);
  set_worker_count(1);
  auto y1 = conv1d_forward<float>(x, w, bias.values(), 2, Padding::same);
  auto g1 = conv1d_backward<float>(gy, x, w, 2, Padding::same);
  set_worker_count(3);
  auto y3 = conv1d_forward<float>(x, w, bias.values(), 2, Padding::same);
  auto g3 = conv1d_backward<float>(gy, x, w, 2, Padding::same);
  set_worker_count(1);
  CHECK(std::equal(y1.values().begin(), y1.values().end(), y3.values().begin()));
  CHECK(std::equal(g1.input.values().begin(), g1.input.values().end(), g3.input.values().begin()));
  // Weight gradients are reduced per worker, so only closeness is promised.
  for (std::size_t i = 0; i < g1.weights.size(); ++i) {
    CHECK(g1.weights.data()[i] == doctest::Approx(g3.weights.data()[i]).epsilon(1e-5));
  }
}

TEST_CASE("conv1d backward matches central differences in double") {
  for (auto config : {std::pair{std::size_t{1}, Padding::same}, std::pair{std::size_t{2}, Padding::same},
                      std::pair{std::size_t{2}, Padding::valid}}) {
    const std::size_t stride = config.first;
    const Padding padding = config.second;
    const std::size_t k = 5, c_in = 3, c_out = 4, len = 17, batch = 2;
    auto x = random_tensor<double>(Shape{batch, len, c_in}, 11);
    auto w = random_tensor<double>(Shape{k, c_in, c_out}, 12);
    auto bias = random_tensor<double>(Shape{1, 1, c_out}, 13);
    auto y = conv1d_forward<double>(x, w, bias.values(), stride, padding);
    auto proj = projection(y.size(), 14);
    auto grads = conv1d_backward<double>(projection_grad<double>(y.shape(), proj), x, w, stride, padding);

    auto loss_x = [&](std::span<const double> p) {
      BasicTensor<double> xp(x.shape(), std::vector<double>(p.begin(), p.end()));
      return project(conv1d_forward<double>(xp, w, bias.values(), stride, padding), proj);
    };
    auto loss_w = [&](std::span<const double> p) {
      BasicTensor<double> wp(w.shape(), std::vector<double>(p.begin(), p.end()));
      return project(conv1d_forward<double>(x, wp, bias.values(), stride, padding), proj);
    };
    auto loss_b = [&](std::span<const double> p) {
      return project(conv1d_forward<double>(x, w, p, stride, padding), proj);
    };
    CHECK(grad_check(loss_x, x.values(), grads.input.values(), 1e-5).within(1e-6));
    CHECK(grad_check(loss_w, w.values(), grads.weights.values(), 1e-5).within(1e-6));
    CHECK(grad_check(loss_b, bias.values(), grads.bias, 1e-5).within(1e-6));
  }
}

TEST_CASE("batchnorm train mode normalizes and updates running statistics") {
  BasicTensor<double> x(Shape{2, 2, 1}, {1.0, 2.0, 3.0, 6.0});
  std::vector<double> gamma{2.0}, beta{0.5};
  auto stats = RunningStats<double>::identity(1);
  BatchNormCache<double> cache;
  auto y = batchnorm1d<double>(x, gamma, beta, Mode::train, stats, {}, &cache);
  // mean 3, biased variance 3.5, unbiased 14/3
  const double inv = 1.0 / std::sqrt(3.5 + 1e-3);
  CHECK(y.at(0, 0, 0) == doctest::Approx(2.0 * (1.0 - 3.0) * inv + 0.5).epsilon(1e-12));
  CHECK(y.at(1, 1, 0) == doctest::Approx(2.0 * (6.0 - 3.0) * inv + 0.5).epsilon(1e-12));
  CHECK(stats.mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 3.0));
  CHECK(stats.variance[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 14.0 / 3.0));
  auto before = stats;
  auto z = batchnorm1d<double>(x, gamma, beta, Mode::infer, stats, {});
  CHECK(stats.mean == before.mean);
  CHECK(z.at(0, 0, 0) == doctest::Approx(2.0 * (1.0 - 0.3) / std::sqrt(stats.variance[0] + 1e-3) + 0.5));
  BasicTensor<double> single(Shape{1, 1, 1}, {1.0});
  CHECK_THROWS_AS(batchnorm1d<double>(single, gamma, beta, Mode::train, stats, {}), std::invalid_argument);
}

TEST_CASE("batchnorm backward matches central differences in double") {
  auto x = random_tensor<double>(Shape{3, 5, 4}, 21, 2.0);
  auto gamma = random_tensor<double>(Shape{1, 1, 4}, 22);
  auto beta = random_tensor<double>(Shape{1, 1, 4}, 23);
  auto proj = projection(x.size(), 24);
  auto run = [&](const BasicTensor<double>& in, std::span<const double> g, std::span<const double> b,
                 BatchNormCache<double>* cache) {
    auto stats = RunningStats<double>::identity(4);
    return batchnorm1d<double>(in, g, b, Mode::train, stats, {}, cache);
  };
  BatchNormCache<double> cache;
  run(x, gamma.values(), beta.values(), &cache);
  auto grads = batchnorm1d_backward<double>(projection_grad<double>(x.shape(), proj), cache, gamma.values());
  auto loss_x = [&](std::span<const double> p) {
    return project(run(BasicTensor<double>(x.shape(), {p.begin(), p.end()}), gamma.values(), beta.values(), nullptr),
                   proj);
  };
  auto loss_g = [&](std::span<const double> p) { return project(run(x, p, beta.values(), nullptr), proj); };
  auto loss_b = [&](std::span<const double> p) { return project(run(x, gamma.values(), p, nullptr), proj); };
  CHECK(grad_check(loss_x, x.values(), grads.input.values(), 1e-5).within(1e-6));
  CHECK(grad_check(loss_g, gamma.values(), grads.gamma, 1e-5).within(1e-6));
  CHECK(grad_check(loss_b, beta.values(), grads.beta, 1e-5).within(1e-6));
}

TEST_CASE("sigmoid stays strictly inside the unit interval") {
  CHECK(sigmoid(40.0f) < 1.0f);
  CHECK(sigmoid(1000.0f) < 1.0f);
  CHECK(sigmoid(-1000.0f) > 0.0f);
  CHECK(sigmoid(40.0) < 1.0);
  CHECK(sigmoid(-1e6) > 0.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(1.5) == doctest::Approx(1.0 / (1.0 + std::exp(-1.5))).epsilon(1e-15));
}

TEST_CASE("elementwise, pooling, dense and loss gradients agree with central differences") {
  const Shape shape{2, 6, 3};
  auto x = random_tensor<double>(shape, 31, 2.0);
  auto proj = projection(shape.size(), 32);
  auto gy = projection_grad<double>(shape, proj);

  SUBCASE("sigmoid") {
    auto y = sigmoid(x);
    auto loss = [&](std::span<const double> p) { return project(sigmoid(BasicTensor<double>(shape, {p.begin(), p.end()})), proj); };
    CHECK(grad_check(loss, x.values(), sigmoid_backward(gy, y).values(), 1e-5).within(1e-6));
  }
  SUBCASE("global average pool") {
    auto pproj = projection(2 * 3, 33);
    auto g = global_avg_pool1d_backward(projection_grad<double>(Shape{2, 1, 3}, pproj), 6);
    auto loss = [&](std::span<const double> p) {
      return project(global_avg_pool1d(BasicTensor<double>(shape, {p.begin(), p.end()})), pproj);
    };
    CHECK(grad_check(loss, x.values(), g.values(), 1e-5).within(1e-6));
  }
  SUBCASE("dense") {
    auto w = random_tensor<double>(Shape{1, 3, 5}, 34);
    auto bias = random_tensor<double>(Shape{1, 1, 5}, 35);
    auto dproj = projection(2 * 6 * 5, 36);
    auto grads = dense_backward<double>(projection_grad<double>(Shape{2, 6, 5}, dproj), x, w);
    auto loss_x = [&](std::span<const double> p) {
      return project(dense_forward<double>(BasicTensor<double>(shape, {p.begin(), p.end()}), w, bias.values()), dproj);
    };
    auto loss_w = [&](std::span<const double> p) {
      return project(dense_forward<double>(x, BasicTensor<double>(w.shape(), {p.begin(), p.end()}), bias.values()), dproj);
    };
    CHECK(grad_check(loss_x, x.values(), grads.input.values(), 1e-5).within(1e-6));
    CHECK(grad_check(loss_w, w.values(), grads.weights.values(), 1e-5).within(1e-6));
  }
  SUBCASE("channel scale") {
    auto s = random_tensor<double>(Shape{2, 1, 3}, 37);
    auto grads = channel_scale_backward<double>(gy, x, s);
    auto loss_u = [&](std::span<const double> p) {
      return project(channel_scale<double>(BasicTensor<double>(shape, {p.begin(), p.end()}), s), proj);
    };
    auto loss_s = [&](std::span<const double> p) {
      return project(channel_scale<double>(x, BasicTensor<double>(s.shape(), {p.begin(), p.end()})), proj);
    };
    CHECK(grad_check(loss_u, x.values(), grads.input.values(), 1e-5).within(1e-6));
    CHECK(grad_check(loss_s, s.values(), grads.scale.values(), 1e-5).within(1e-6));
  }
  SUBCASE("upsample") {
    auto uproj = projection(2 * 24 * 3, 38);
    auto g = upsample1d_backward(projection_grad<double>(Shape{2, 24, 3}, uproj), 4);
    auto loss = [&](std::span<const double> p) {
      return project(upsample1d(BasicTensor<double>(shape, {p.begin(), p.end()}), 4), uproj);
    };
    CHECK(grad_check(loss, x.values(), g.values(), 1e-5).within(1e-6));
  }
  SUBCASE("softmax cross-entropy") {
    auto logits = random_tensor<double>(Shape{4, 1, 5}, 39, 3.0);
    std::vector<int> labels{0, 4, 2, 2};
    auto r = softmax_cross_entropy<double>(logits, labels);
    auto loss = [&](std::span<const double> p) {
      return softmax_cross_entropy<double>(BasicTensor<double>(logits.shape(), {p.begin(), p.end()}), labels).loss;
    };
    CHECK(grad_check(loss, logits.values(), r.grad_logits.values(), 1e-5).within(1e-6));
    std::vector<int> bad{0, 5, 1, 1};
    CHECK_THROWS_AS(softmax_cross_entropy<double>(logits, bad), std::invalid_argument);
  }
}

TEST_CASE("softmax cross-entropy of uniform logits is log K") {
  BasicTensor<float> logits(Shape{3, 1, 9});
  std::vector<int> labels{0, 3, 8};
  auto r = softmax_cross_entropy<float>(logits, labels);
  CHECK(r.loss == doctest::Approx(std::log(9.0)).epsilon(1e-6));
}

TEST_CASE("non-finite results raise NumericError") {
  BasicTensor<float> x(Shape{1, 4, 1}, {1.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f, 2.0f});
  CHECK_THROWS_AS(relu(x), NumericError);
  BasicTensor<float> w(Shape{1, 1, 1}, {1.0f});
  std::vector<float> bias{0.0f};
  CHECK_THROWS_AS(conv1d_forward<float>(x, w, bias, 1, Padding::same), NumericError);
}

TEST_CASE("adam takes a bias-corrected first step of size lr") {
  ParamSlot<float> slot("p", Shape{1, 1, 3});
  slot.value.fill(1.0f);
  std::vector<float> g{0.5f, -2.0f, 0.0f};
  accumulate_grad<float>(slot, g);
  adam_step(slot, AdamOptions{});
  CHECK(slot.value.at(0, 0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(slot.value.at(0, 0, 1) == doctest::Approx(1.0 + 1e-3).epsilon(1e-6));
  CHECK(slot.value.at(0, 0, 2) == 1.0f);
  CHECK(slot.step_count == 1);
}

TEST_CASE("checkpoint round trip preserves blobs and rejects corruption") {
  Checkpoint ck;
  ck.header = {{"format", "test"}, {"note", "x"}};
  ck.blobs.push_back({"a.weight", BlobKind::parameter, Shape{2, 1, 3}, {1, 2, 3, 4, 5, 6}});
  ck.blobs.push_back({"a.running", BlobKind::buffer, Shape{1, 1, 2}, {0.5f, -0.5f}});
  const auto path = std::filesystem::temp_directory_path() / "modclass_ck_test.mck";
  save_checkpoint(path, ck);
  auto back = load_checkpoint(path);
  CHECK(back.header == ck.header);
  REQUIRE(back.blobs.size() == 2);
  CHECK(back.blobs[0].values == ck.blobs[0].values);
  CHECK(back.blobs[1].kind == BlobKind::buffer);
  CHECK(back.parameter_count() == 6);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS_AS(load_checkpoint(path), modclass::FormatError);
  std::filesystem::remove(path);
}
