#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "dbench/core/binio.hpp"
#include "dbench/core/error.hpp"
#include "dbench/core/hash.hpp"
#include "dbench/core/imageops.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/core/tensor.hpp"

using namespace dbench;

TEST(Rng, DerivedStreamsAreReproducibleAndDistinct) {
  Rng a = make_rng(42, {1, 2}), b = make_rng(42, {1, 2}), c = make_rng(42, {2, 1});
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    (void)c;
  }
  EXPECT_NE(derive_seed(42, {1, 2}), derive_seed(42, {2, 1}));
  EXPECT_NE(derive_seed(42, {}), derive_seed(43, {}));
}

TEST(Rng, Uniform01StaysInHalfOpenInterval) {
  Rng r = make_rng(1);
  double lo = 1, hi = 0, sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = uniform01(r);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_NEAR(sum / 100000, 0.5, 0.01);
}

TEST(Rng, BetaSampleMeanMatches) {
  Rng r = make_rng(5);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double v = beta_sample(r, 2.0, 5.0);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    sum += v;
  }
  EXPECT_NEAR(sum / 20000, 2.0 / 7.0, 0.01);
}

TEST(Rng, ShuffleIsAPermutation) {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  Rng r = make_rng(9);
  shuffle(v.begin(), v.end(), r);
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 50u);
  EXPECT_EQ(*s.begin(), 0);
  EXPECT_EQ(*s.rbegin(), 49);
}

TEST(Hash, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(Sha256().update("a").update("bc").hex(), sha256_hex("abc"));
}

TEST(BinIo, RoundTripAndTruncation) {
  ByteWriter w;
  w.put<std::int32_t>(-7);
  w.put(2.5);
  w.put_string("hello");
  const std::vector<float> f{1.f, 2.f, 3.f};
  w.put_span(std::span<const float>(f));
  ByteReader r(w.bytes());
  EXPECT_EQ(r.get<std::int32_t>(), -7);
  EXPECT_EQ(r.get<double>(), 2.5);
  EXPECT_EQ(r.get_string(), "hello");
  EXPECT_EQ(r.get_vector<float>(), f);
  EXPECT_TRUE(r.done());

  std::vector<unsigned char> cut(w.bytes().begin(), w.bytes().end() - 2);
  ByteReader bad(cut);
  bad.get<std::int32_t>();
  bad.get<double>();
  bad.get_string();
  try {
    bad.get_vector<float>();
    FAIL() << "expected truncation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::integrity);
  }
}

TEST(Tensor, SliceAndGather) {
  Tensor<float> t(Shape{4, 1, 1, 2});
  std::iota(t.data.begin(), t.data.end(), 0.f);
  const auto s = slice_batch(t, 1, 2);
  EXPECT_EQ(s.data, (std::vector<float>{2, 3, 4, 5}));
  const std::vector<int> rows{3, 0};
  const auto g = gather_batch(t, rows);
  EXPECT_EQ(g.data, (std::vector<float>{6, 7, 0, 1}));
}

TEST(ImageOps, FullCropIsIdentity) {
  const int c = 2, h = 5, w = 7;
  std::vector<double> src(c * h * w), dst(src.size());
  std::iota(src.begin(), src.end(), 0.0);
  resize_crop<double>(src, c, h, w, CropBox{0, 0, h, w}, dst, h, w);
  for (std::size_t i = 0; i < src.size(); ++i) EXPECT_NEAR(dst[i], src[i], 1e-12);
}

TEST(ImageOps, FlipTwiceIsIdentity) {
  std::vector<float> img(3 * 4 * 6);
  std::iota(img.begin(), img.end(), 0.f);
  auto copy = img;
  flip_horizontal<float>(copy, 3, 4, 6);
  EXPECT_NE(copy, img);
  flip_horizontal<float>(copy, 3, 4, 6);
  EXPECT_EQ(copy, img);
}

// <A x, y> == <x, A^T y> for the bilinear crop and its adjoint.
TEST(ImageOps, CropBackwardIsAdjoint) {
  Rng rng = make_rng(11);
  const int c = 3, h = 12, w = 12;
  for (int trial = 0; trial < 20; ++trial) {
    const CropBox box = sample_resized_crop(rng, h, w, 0.2, 1.0);
    std::vector<double> x(c * h * w), y(c * h * w), ax(c * h * w), aty(c * h * w, 0.0);
    for (auto& v : x) v = normal(rng);
    for (auto& v : y) v = normal(rng);
    resize_crop<double>(x, c, h, w, box, ax, h, w);
    resize_crop_backward<double>(y, c, h, w, box, aty, h, w);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += ax[i] * y[i];
      rhs += x[i] * aty[i];
    }
    EXPECT_NEAR(lhs, rhs, 1e-9 * (1 + std::abs(lhs)));
  }
}

TEST(ImageOps, SampledCropsStayInside) {
  Rng rng = make_rng(2);
  for (int i = 0; i < 1000; ++i) {
    const CropBox b = sample_resized_crop(rng, 32, 32, 0.08, 1.0);
    EXPECT_GE(b.top, 0);
    EXPECT_GE(b.left, 0);
    EXPECT_GE(b.height, 1);
    EXPECT_GE(b.width, 1);
    EXPECT_LE(b.top + b.height, 32);
    EXPECT_LE(b.left + b.width, 32);
  }
}

TEST(Error, KindNames) {
  EXPECT_EQ(to_string(ErrorKind::config), "config_error");
  EXPECT_EQ(to_string(ErrorKind::missing_input), "missing_input");
  try {
    fail(ErrorKind::divergence, "boom");
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
    EXPECT_STREQ(e.what(), "boom");
  }
}
