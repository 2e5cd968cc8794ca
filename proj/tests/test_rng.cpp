#include <gtest/gtest.h>

#include <set>

#include "omnet/omnet.hpp"

using namespace omnet;

TEST(Rng, SameSeedSameStream) {
  Rng a(12), b(12), c(13);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(Rng(12).next(), c.next());
}

TEST(Rng, DerivedStreamsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 50; ++s) seen.insert(derive_seed(7, s));
  EXPECT_EQ(seen.size(), 50u);
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
}

TEST(Rng, UniformRangeAndMoments) {
  Rng r(3);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12, 0.002);
}

TEST(Rng, NormalMoments) {
  Rng r(4);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.015);
}

TEST(Rng, IndexUnbiased) {
  Rng r(5);
  std::vector<int> counts(7);
  for (int k = 0; k < 70000; ++k) ++counts[r.index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
  EXPECT_THROW(r.index(0), std::invalid_argument);
}

TEST(Rng, StateRoundTrip) {
  Rng r(6);
  for (int k = 0; k < 10; ++k) r.next();
  Rng copy(0);
  copy.set_state(r.state());
  EXPECT_TRUE(copy == r);
  EXPECT_EQ(copy.next(), r.next());
  EXPECT_THROW(copy.set_state("not a state"), std::exception);
}

TEST(Serialize, RoundTripAndBounds) {
  ByteWriter w;
  w.tag("TEST");
  w.u8(7);
  w.u32(0xdeadbeef);
  w.u64(1ull << 60);
  w.f64(-0.125);
  w.str("hello");
  w.f64s(std::vector<double>{1.5, 2.5});
  const auto bytes = w.take();
  ByteReader r(bytes);
  r.expect_tag("TEST");
  EXPECT_EQ(r.u8(), 7);
  EXPECT_EQ(r.u32(), 0xdeadbeefu);
  EXPECT_EQ(r.u64(), 1ull << 60);
  EXPECT_EQ(r.f64(), -0.125);
  EXPECT_EQ(r.str(), "hello");
  EXPECT_EQ(r.f64s(), (std::vector<double>{1.5, 2.5}));
  EXPECT_TRUE(r.at_end());
  EXPECT_THROW(r.u8(), FormatError);
  ByteReader bad(bytes);
  EXPECT_THROW(bad.expect_tag("NOPE"), FormatError);
}
