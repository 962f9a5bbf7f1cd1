// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "cdn/gradcheck.hpp"
#include "cdn/losses.hpp"
#include "cdn/model.hpp"
#include "cdn/ops.hpp"
#include "oracles.hpp"

using cdn::Shape;
using cdn::Tape;
using cdn::Tensor;
using Catch::Approx;

namespace {
template <class T>
using TV = std::vector<cdn::TensorT<T>>;
}

TEST_CASE("backward of sum gives all-ones gradients") {
  Tensor p = oracles::random_tensor<float>(Shape(1, 2, 3, 3), 7);
  p.set_requires_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = cdn::sum(p);
    tape.backward(loss);
  }
  for (std::int64_t i = 0; i < p.numel(); ++i) REQUIRE(p.grad()[i] == Approx(1.0f));
}

TEST_CASE("backward of mean of squares gives 2p/k") {
  Tensor p = oracles::random_tensor<float>(Shape(1, 1, 2, 4), 8);
  p.set_requires_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = cdn::mean(cdn::mul(p, p));
    tape.backward(loss);
  }
  const float k = static_cast<float>(p.numel());
  for (std::int64_t i = 0; i < p.numel(); ++i)
    REQUIRE(p.grad()[i] == Approx(2.0f * p.data()[i] / k).margin(1e-6));
}

TEST_CASE("shared subexpressions accumulate additively") {
  // f = sum(x * x) through one shared handle: df/dx = 2x
  Tensor x = oracles::random_tensor<float>(Shape(1, 1, 1, 5), 9);
  x.set_requires_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor y = cdn::mul(x, x);
    Tensor loss = cdn::sum(y);
    tape.backward(loss);
  }
  for (std::int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(x.grad()[i] == Approx(2.0f * x.data()[i]).margin(1e-6));
}

TEST_CASE("backward twice without reset is an error") {
  Tensor x(Shape(1, 1, 1, 2), 1.0f);
  x.set_requires_grad();
  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss = cdn::sum(x);
  tape.backward(loss);
  REQUIRE_THROWS_AS(tape.backward(loss), cdn::NumericalError);
  tape.reset();
  Tensor loss2 = cdn::sum(x);
  REQUIRE_NOTHROW(tape.backward(loss2));
}

TEST_CASE("grad_check validates relu away from the kink") {
  auto fn = [](auto& xs) {
    auto y = cdn::relu(xs[0]);
    return cdn::sum(cdn::mul(y, y));
  };
  cdn::GradCheckOptions opt;
  opt.rel_tol = 1e-4;
  auto x = oracles::random_tensor<double>(Shape(1, 2, 4, 4), 101);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.25;
  auto report = cdn::grad_check(fn, {x}, opt);
  REQUIRE(report.pass);
}

TEST_CASE("grad_check flags a non-deterministic function") {
  int calls = 0;
  auto fn = [&calls](auto& xs) {
    using T = typename std::decay_t<decltype(xs[0])>::Scalar;
    ++calls;
    return cdn::scale_add(cdn::sum(xs[0]), T(1), T(calls));
  };
  auto x = oracles::random_tensor<double>(Shape(1, 1, 2, 2), 102);
  REQUIRE_THROWS_AS(cdn::grad_check(fn, {x}), cdn::NumericalError);
}

TEST_CASE("grad_check: conv2d with a random 3x3 kernel") {
  auto fn = [](auto& xs) {
    auto y = cdn::conv2d(xs[0], xs[1], xs[2], 1);
    return cdn::mean(cdn::mul(y, y));
  };
  auto report = cdn::grad_check(fn,
                                {oracles::random_tensor<double>(Shape(1, 2, 5, 5), 201),
                                 oracles::random_tensor<double>(Shape(3, 2, 3, 3), 202),
                                 oracles::random_tensor<double>(Shape(1, 3, 1, 1), 203)});
  INFO("max_rel_err=" << report.max_rel_err);
  REQUIRE(report.pass);
}

TEST_CASE("grad_check: 1x1 conv head") {
  auto fn = [](auto& xs) {
    auto y = cdn::conv2d(xs[0], xs[1], xs[2], 0);
    return cdn::mean(cdn::mul(y, y));
  };
  auto report = cdn::grad_check(fn,
                                {oracles::random_tensor<double>(Shape(2, 3, 4, 4), 204),
                                 oracles::random_tensor<double>(Shape(2, 3, 1, 1), 205),
                                 oracles::random_tensor<double>(Shape(1, 2, 1, 1), 206)});
  REQUIRE(report.pass);
}

TEST_CASE("grad_check: batch_norm2d in train mode") {
  auto fn = [](auto& xs) {
    using T = typename std::decay_t<decltype(xs[0])>::Scalar;
    cdn::BnStatsT<T> stats(3);
    auto y = cdn::batch_norm2d(xs[0], xs[1], xs[2], stats, true);
    return cdn::mean(cdn::mul(y, y));
  };
  auto report = cdn::grad_check(fn,
                                {oracles::random_tensor<double>(Shape(2, 3, 4, 4), 207),
                                 oracles::random_tensor<double>(Shape(1, 3, 1, 1), 208, 0.5, 1.5),
                                 oracles::random_tensor<double>(Shape(1, 3, 1, 1), 209)});
  REQUIRE(report.pass);
}

TEST_CASE("grad_check: prelu slope gradient matches the analytic value") {
  auto fn = [](auto& xs) { return cdn::sum(cdn::prelu(xs[0], xs[1])); };
  auto x = cdn::TensorT<double>::from_data(Shape(1, 1, 1, 1), {-3.0});
  auto slope = cdn::TensorT<double>::from_data(Shape(1, 1, 1, 1), {0.25});
  auto report = cdn::grad_check(fn, {x, slope});
  REQUIRE(report.pass);

  // d(out)/d(a) at x=-3 is exactly -3
  cdn::TensorT<float> xf = cdn::cast_tensor<float>(x), af = cdn::cast_tensor<float>(slope);
  af.set_requires_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto out = cdn::sum(cdn::prelu(xf, af));
    tape.backward(out);
  }
  REQUIRE(af.grad()[0] == Approx(-3.0f).epsilon(1e-3));
}

TEST_CASE("grad_check: relu gradient mask is indicator(x>0)") {
  auto x = cdn::TensorT<float>::from_data(Shape(1, 1, 1, 2), {0.5f, -0.5f});
  x.set_requires_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto out = cdn::sum(cdn::relu(x));
    tape.backward(out);
  }
  REQUIRE(x.grad()[0] == 1.0f);
  REQUIRE(x.grad()[1] == 0.0f);

  auto fn = [](auto& xs) { return cdn::sum(cdn::relu(xs[0])); };
  auto report = cdn::grad_check(fn, {cdn::cast_tensor<double>(x)}, {1e-4, 1e-6, 1e-3});
  REQUIRE(report.pass);
}

TEST_CASE("grad_check: pixel_shuffle and avg_pool2") {
  auto fn_ps = [](auto& xs) {
    auto y = cdn::pixel_shuffle(xs[0], 2);
    return cdn::mean(cdn::mul(y, y));
  };
  REQUIRE(cdn::grad_check(fn_ps, {oracles::random_tensor<double>(Shape(1, 8, 3, 3), 210)}).pass);

  auto fn_ap = [](auto& xs) {
    auto y = cdn::avg_pool2(xs[0]);
    return cdn::mean(cdn::mul(y, y));
  };
  REQUIRE(cdn::grad_check(fn_ap, {oracles::random_tensor<double>(Shape(1, 2, 4, 4), 211)}).pass);

  // gradient of mean-pool output distributes 0.25/count to each window element
  Tensor x = oracles::random_tensor<float>(Shape(1, 1, 2, 2), 212);
  x.set_requires_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto out = cdn::sum(cdn::avg_pool2(x));
    tape.backward(out);
  }
  for (std::int64_t i = 0; i < 4; ++i) REQUIRE(x.grad()[i] == Approx(0.25f));
}

TEST_CASE("grad_check: softmax, concat, reflect_pad, crop, channel_mean, div") {
  auto fn_sm = [](auto& xs) {
    auto p = cdn::softmax_flat(xs[0]);
    return cdn::sum(cdn::mul(p, p));
  };
  REQUIRE(cdn::grad_check(fn_sm, {oracles::random_tensor<double>(Shape(2, 1, 2, 3), 220)}).pass);

  auto fn_cat = [](auto& xs) {
    auto y = cdn::concat_channels(xs[0], xs[1]);
    return cdn::mean(cdn::mul(y, y));
  };
  REQUIRE(cdn::grad_check(fn_cat,
                          {oracles::random_tensor<double>(Shape(1, 2, 3, 3), 221),
                           oracles::random_tensor<double>(Shape(1, 1, 3, 3), 222)})
              .pass);

  auto fn_pad = [](auto& xs) {
    auto y = cdn::reflect_pad(xs[0], std::int64_t(1), std::int64_t(2), std::int64_t(1),
                              std::int64_t(0));
    return cdn::mean(cdn::mul(y, y));
  };
  REQUIRE(cdn::grad_check(fn_pad, {oracles::random_tensor<double>(Shape(1, 1, 4, 4), 223)}).pass);

  auto fn_crop = [](auto& xs) {
    auto y = cdn::crop(xs[0], 1, 1, 2, 2);
    return cdn::mean(cdn::mul(y, y));
  };
  REQUIRE(cdn::grad_check(fn_crop, {oracles::random_tensor<double>(Shape(1, 1, 4, 4), 224)}).pass);

  auto fn_cm = [](auto& xs) {
    auto y = cdn::channel_mean(xs[0]);
    return cdn::mean(cdn::mul(y, y));
  };
  REQUIRE(cdn::grad_check(fn_cm, {oracles::random_tensor<double>(Shape(2, 3, 3, 3), 225)}).pass);

  auto fn_div = [](auto& xs) { return cdn::mean(cdn::div(xs[0], xs[1])); };
  REQUIRE(cdn::grad_check(fn_div,
                          {oracles::random_tensor<double>(Shape(1, 1, 2, 2), 226),
                           oracles::random_tensor<double>(Shape(1, 1, 2, 2), 227, 1.0, 2.0)})
              .pass);
}

TEST_CASE("d(sum(a*b))/da equals b") {
  Tensor a = oracles::random_tensor<float>(Shape(1, 1, 2, 3), 230);
  Tensor b = oracles::random_tensor<float>(Shape(1, 1, 2, 3), 231);
  a.set_requires_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = cdn::sum(cdn::mul(a, b));
    tape.backward(loss);
  }
  for (std::int64_t i = 0; i < a.numel(); ++i)
    REQUIRE(a.grad()[i] == Approx(b.data()[i]).margin(1e-6));
}

TEST_CASE("unreachable parameters keep zero gradients") {
  Tensor used(Shape(1, 1, 1, 2), 1.0f), unused(Shape(1, 1, 1, 2), 2.0f);
  used.set_requires_grad();
  unused.set_requires_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto loss = cdn::sum(used);
    tape.backward(loss);
  }
  REQUIRE(unused.grad()[0] == 0.0f);
  REQUIRE(unused.grad()[1] == 0.0f);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x(Shape(1, 1, 2, 2), 1.0f);
  x.set_requires_grad();
  Tape tape;
  Tape::Scope scope(tape);
  Tensor y = cdn::relu(x);
  REQUIRE_THROWS_AS(tape.backward(y), cdn::ShapeError);
}
