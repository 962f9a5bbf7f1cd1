// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "cdn/ops.hpp"
#include "cdn/serialize.hpp"
#include "oracles.hpp"

using cdn::Shape;
using cdn::Tensor;
using Catch::Approx;

TEST_CASE("conv2d identity kernel reproduces the input") {
  Tensor x = oracles::random_tensor<float>(Shape(1, 1, 4, 4), 11);
  Tensor w(Shape(1, 1, 3, 3));
  w.at(0, 0, 1, 1) = 1.0f;
  Tensor b(Shape(1, 1, 1, 1));
  Tensor y = cdn::conv2d(x, w, b, 1);
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.data()[i] == Approx(x.data()[i]));
}

TEST_CASE("conv2d all-ones kernel on a 2x2 patch sums every element") {
  Tensor x = Tensor::from_data(Shape(1, 1, 2, 2), {1, 2, 3, 4});
  Tensor w(Shape(1, 1, 3, 3), 1.0f);
  Tensor b(Shape(1, 1, 1, 1));
  Tensor y = cdn::conv2d(x, w, b, 1);
  for (std::int64_t i = 0; i < 4; ++i) REQUIRE(y.data()[i] == Approx(10.0f));
}

TEST_CASE("conv2d shape contract") {
  Tensor x = oracles::random_tensor<float>(Shape(2, 3, 16, 16), 5);
  Tensor w = oracles::random_tensor<float>(Shape(8, 3, 3, 3), 6);
  Tensor b(Shape(1, 8, 1, 1));
  REQUIRE(cdn::conv2d(x, w, b, 1).shape() == Shape(2, 8, 16, 16));
}

TEST_CASE("conv2d channel mismatch raises a shape error") {
  Tensor x(Shape(1, 2, 4, 4));
  Tensor w(Shape(1, 3, 3, 3));
  Tensor b(Shape(1, 1, 1, 1));
  REQUIRE_THROWS_AS(cdn::conv2d(x, w, b, 1), cdn::ShapeError);
}

TEST_CASE("conv2d matches the naive quadruple-loop oracle on random cases") {
  cdn::GaussianSampler dims(99);
  for (int t = 0; t < 50; ++t) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(dims.next_u64() % 2);
    const std::int64_t ci = 1 + static_cast<std::int64_t>(dims.next_u64() % 4);
    const std::int64_t co = 1 + static_cast<std::int64_t>(dims.next_u64() % 4);
    const std::int64_t h = 3 + static_cast<std::int64_t>(dims.next_u64() % 8);
    const std::int64_t w = 3 + static_cast<std::int64_t>(dims.next_u64() % 8);
    const bool one_by_one = (dims.next_u64() & 3u) == 0;
    const std::int64_t k = one_by_one ? 1 : 3;
    Tensor x = oracles::random_tensor<float>(Shape(n, ci, h, w), 1000 + static_cast<unsigned>(t));
    Tensor wt = oracles::random_tensor<float>(Shape(co, ci, k, k), 2000 + static_cast<unsigned>(t));
    Tensor b = oracles::random_tensor<float>(Shape(1, co, 1, 1), 3000 + static_cast<unsigned>(t));
    Tensor got = cdn::conv2d(x, wt, b, k / 2);
    Tensor want = oracles::conv2d_naive(x, wt, b, k / 2);
    REQUIRE(got.shape() == want.shape());
    for (std::int64_t i = 0; i < got.numel(); ++i)
      REQUIRE(got.data()[i] == Approx(want.data()[i]).margin(1e-5));
  }
}

TEST_CASE("batch_norm2d train mode zeroes constant channels") {
  Tensor x(Shape(2, 2, 3, 3));
  for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = (i / 9) % 2 == 0 ? 4.5f : -1.25f;
  Tensor gamma(Shape(1, 2, 1, 1), 1.0f);
  Tensor beta(Shape(1, 2, 1, 1));
  cdn::BnStats stats(2);
  Tensor y = cdn::batch_norm2d(x, gamma, beta, stats, true);
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(std::abs(y.data()[i]) < 1e-2f);
}

TEST_CASE("batch_norm2d normalizes a two-value channel to -1/+1") {
  Tensor x = Tensor::from_data(Shape(2, 1, 1, 1), {1.0f, 3.0f});
  Tensor gamma(Shape(1, 1, 1, 1), 1.0f);
  Tensor beta(Shape(1, 1, 1, 1));
  cdn::BnStats stats(1);
  Tensor y = cdn::batch_norm2d(x, gamma, beta, stats, true, 1e-12f);
  REQUIRE(y.data()[0] == Approx(-1.0f).margin(1e-4));
  REQUIRE(y.data()[1] == Approx(1.0f).margin(1e-4));
}

TEST_CASE("batch_norm2d eval mode applies the affine transform on init stats") {
  Tensor x(Shape(1, 1, 1, 1), 3.0f);
  Tensor gamma(Shape(1, 1, 1, 1), 2.0f);
  Tensor beta(Shape(1, 1, 1, 1), 5.0f);
  cdn::BnStats stats(1);  // running mean 0, var 1
  Tensor y = cdn::batch_norm2d(x, gamma, beta, stats, false);
  REQUIRE(y.data()[0] == Approx(11.0f).margin(1e-4));
}

TEST_CASE("batch_norm2d train-mode pre-affine stats are standardized") {
  Tensor x = oracles::gaussian_tensor<float>(Shape(4, 3, 8, 8), 17, 0.7);
  Tensor gamma(Shape(1, 3, 1, 1), 1.0f);
  Tensor beta(Shape(1, 3, 1, 1));
  cdn::BnStats stats(3);
  Tensor y = cdn::batch_norm2d(x, gamma, beta, stats, true);
  const std::int64_t m = 4 * 8 * 8;
  for (std::int64_t ch = 0; ch < 3; ++ch) {
    double s = 0, ss = 0;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 8; ++i)
        for (std::int64_t j = 0; j < 8; ++j) {
          const double v = y.at(n, ch, i, j);
          s += v;
          ss += v * v;
        }
    const double mu = s / m, var = ss / m - mu * mu;
    REQUIRE(std::abs(mu) <= 1e-5);
    REQUIRE(var == Approx(1.0).margin(1e-4));
  }
}

TEST_CASE("batch_norm2d train mode rejects single-element channels") {
  Tensor x(Shape(1, 1, 1, 1));
  Tensor gamma(Shape(1, 1, 1, 1), 1.0f);
  Tensor beta(Shape(1, 1, 1, 1));
  cdn::BnStats stats(1);
  REQUIRE_THROWS_AS(cdn::batch_norm2d(x, gamma, beta, stats, true), cdn::ShapeError);
}

TEST_CASE("prelu branches") {
  Tensor x = Tensor::from_data(Shape(1, 1, 1, 2), {2.0f, -2.0f});
  Tensor a(Shape(1, 1, 1, 1), 0.25f);
  Tensor y = cdn::prelu(x, a);
  REQUIRE(y.data()[0] == Approx(2.0f));
  REQUIRE(y.data()[1] == Approx(-0.5f));
}

TEST_CASE("relu clamps negatives") {
  Tensor x = Tensor::from_data(Shape(1, 1, 1, 3), {-1.0f, 0.0f, 2.0f});
  Tensor y = cdn::relu(x);
  REQUIRE(y.data()[0] == 0.0f);
  REQUIRE(y.data()[1] == 0.0f);
  REQUIRE(y.data()[2] == 2.0f);

  Tensor neg(Shape(2, 3, 4, 4), -0.5f);
  Tensor zero = cdn::relu(neg);
  for (std::int64_t i = 0; i < zero.numel(); ++i) REQUIRE(zero.data()[i] == 0.0f);
}

TEST_CASE("pixel_shuffle shape, identity at r=1, and index formula") {
  Tensor x = oracles::random_tensor<float>(Shape(1, 4, 2, 2), 21);
  REQUIRE(cdn::pixel_shuffle(x, 2).shape() == Shape(1, 1, 4, 4));

  Tensor same = cdn::pixel_shuffle(x, 1);
  for (std::int64_t i = 0; i < x.numel(); ++i) REQUIRE(same.data()[i] == x.data()[i]);

  Tensor abcd = Tensor::from_data(Shape(1, 4, 1, 1), {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor grid = cdn::pixel_shuffle(abcd, 2);
  REQUIRE(grid.at(0, 0, 0, 0) == 1.0f);
  REQUIRE(grid.at(0, 0, 0, 1) == 2.0f);
  REQUIRE(grid.at(0, 0, 1, 0) == 3.0f);
  REQUIRE(grid.at(0, 0, 1, 1) == 4.0f);
}

TEST_CASE("pixel_shuffle then its inverse is the identity and preserves the multiset") {
  Tensor x = oracles::random_tensor<float>(Shape(2, 8, 3, 5), 22);
  Tensor back = cdn::pixel_unshuffle(cdn::pixel_shuffle(x, 2), 2);
  REQUIRE(back.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) REQUIRE(back.data()[i] == x.data()[i]);

  Tensor shuffled = cdn::pixel_shuffle(x, 2);
  std::multiset<float> before(x.data(), x.data() + x.numel());
  std::multiset<float> after(shuffled.data(), shuffled.data() + shuffled.numel());
  REQUIRE(before == after);
}

TEST_CASE("pixel_shuffle rejects non-divisible channel counts") {
  Tensor x(Shape(1, 3, 2, 2));
  REQUIRE_THROWS_AS(cdn::pixel_shuffle(x, 2), cdn::ShapeError);
}

TEST_CASE("avg_pool2 semantics") {
  Tensor c(Shape(1, 2, 4, 4), 3.25f);
  Tensor y = cdn::avg_pool2(c);
  REQUIRE(y.shape() == Shape(1, 2, 2, 2));
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == Approx(3.25f));

  Tensor win = Tensor::from_data(Shape(1, 1, 2, 2), {1.0f, 2.0f, 3.0f, 4.0f});
  REQUIRE(cdn::avg_pool2(win).data()[0] == Approx(2.5f));

  Tensor odd(Shape(1, 1, 3, 4));
  REQUIRE_THROWS_AS(cdn::avg_pool2(odd), cdn::ShapeError);
}

TEST_CASE("pointwise algebra and reductions") {
  Tensor a = oracles::random_tensor<float>(Shape(1, 2, 3, 3), 31);
  Tensor zero = cdn::sub(a, a);
  for (std::int64_t i = 0; i < zero.numel(); ++i) REQUIRE(zero.data()[i] == 0.0f);

  Tensor v = Tensor::from_data(Shape(1, 1, 1, 4), {1.0f, 2.0f, 3.0f, 4.0f});
  REQUIRE(cdn::mean(v).item() == Approx(2.5f));
  REQUIRE(cdn::sum(v).item() == Approx(10.0f));

  Tensor b(Shape(1, 2, 3, 4));
  REQUIRE_THROWS_AS(cdn::add(a, b), cdn::ShapeError);
}

TEST_CASE("softmax_flat: symmetry, closed form, and shift invariance") {
  Tensor c(Shape(1, 1, 2, 3), 0.7f);
  Tensor u = cdn::softmax_flat(c);
  for (std::int64_t i = 0; i < 6; ++i) REQUIRE(u.data()[i] == Approx(1.0f / 6.0f));

  Tensor two = Tensor::from_data(Shape(1, 1, 1, 2), {0.0f, std::log(3.0f)});
  Tensor p = cdn::softmax_flat(two);
  REQUIRE(p.data()[0] == Approx(0.25f).margin(1e-6));
  REQUIRE(p.data()[1] == Approx(0.75f).margin(1e-6));

  Tensor x = oracles::random_tensor<float>(Shape(2, 1, 4, 4), 33);
  Tensor shifted = cdn::scale_add(x, 1.0f, 17.5f);
  Tensor p1 = cdn::softmax_flat(x);
  Tensor p2 = cdn::softmax_flat(shifted);
  for (std::int64_t n = 0; n < 2; ++n) {
    double total = 0;
    for (std::int64_t i = 0; i < 16; ++i) total += p1.data()[n * 16 + i];
    REQUIRE(total == Approx(1.0).margin(1e-6));
  }
  for (std::int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(p1.data()[i] == Approx(p2.data()[i]).margin(1e-6));
}

TEST_CASE("concat, reflect_pad, crop shapes and values") {
  Tensor a = oracles::random_tensor<float>(Shape(2, 2, 3, 3), 41);
  Tensor b = oracles::random_tensor<float>(Shape(2, 1, 3, 3), 42);
  Tensor cat = cdn::concat_channels(a, b);
  REQUIRE(cat.shape() == Shape(2, 3, 3, 3));
  REQUIRE(cat.at(1, 2, 1, 1) == b.at(1, 0, 1, 1));
  REQUIRE(cat.at(1, 0, 2, 2) == a.at(1, 0, 2, 2));

  Tensor img = Tensor::from_data(Shape(1, 1, 2, 3), {1, 2, 3, 4, 5, 6});
  Tensor padded = cdn::reflect_pad(img, std::int64_t(1), std::int64_t(0), std::int64_t(1),
                                   std::int64_t(0));
  REQUIRE(padded.shape() == Shape(1, 1, 3, 4));
  // top row mirrors row 1, left column mirrors column 1
  REQUIRE(padded.at(0, 0, 0, 1) == 4.0f);
  REQUIRE(padded.at(0, 0, 1, 0) == 2.0f);
  REQUIRE(padded.at(0, 0, 1, 1) == 1.0f);

  Tensor cropped = cdn::crop(padded, 1, 1, 2, 3);
  for (std::int64_t i = 0; i < img.numel(); ++i) REQUIRE(cropped.data()[i] == img.data()[i]);
}

TEST_CASE("tensor dump round-trips through the CDNT format") {
  Tensor t = oracles::random_tensor<float>(Shape(2, 3, 4, 5), 55);
  const std::string path = "roundtrip.cdnt";
  cdn::dump_tensor(t, path);
  Tensor back = cdn::load_tensor(path);
  REQUIRE(back.shape() == t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) REQUIRE(back.data()[i] == t.data()[i]);
  std::remove(path.c_str());
}
