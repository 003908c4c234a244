#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <set>
#include <stdexcept>
#include <vector>

#include "iscope/parallel.hpp"
#include "iscope/rng.hpp"

using namespace iscope;

TEST(Rng, DeriveSeedSeparatesTags) {
  EXPECT_NE(derive_seed(0, "init"), derive_seed(0, "schedule"));
  EXPECT_NE(derive_seed(0, "init"), derive_seed(1, "init"));
  EXPECT_EQ(derive_seed(7, "probe"), derive_seed(7, "probe"));
}

TEST(Rng, PhiloxKnownAnswer) {
  // Random123 known-answer vector for philox4x32-10 with all-zero key and counter.
  const Philox p(0);
  const auto b = p(0, 0);
  EXPECT_EQ(b[0], 0x6627e8d5u);
  EXPECT_EQ(b[1], 0xe169c58du);
  EXPECT_EQ(b[2], 0xbc57ac4cu);
  EXPECT_EQ(b[3], 0x9b00dbd8u);
  const Philox q(~0ull);
  const auto c = q(~0ull, ~0ull);
  EXPECT_EQ(c[0], 0x408f276du);
  EXPECT_EQ(c[1], 0x41c83b0eu);
  EXPECT_EQ(c[2], 0xa20bc7c6u);
  EXPECT_EQ(c[3], 0x6d5451fdu);
}

TEST(Rng, CounterDrawsArePureFunctions) {
  const CounterRng a(42), b(42);
  for (std::uint64_t i = 0; i < 100; ++i) {
    EXPECT_EQ(a.bits(i, 3), b.bits(i, 3));
    EXPECT_EQ(a.uniform(i, 0), b.uniform(i, 0));
  }
  EXPECT_NE(a.bits(0, 0), a.bits(1, 0));
  EXPECT_NE(a.bits(0, 0), a.bits(0, 1));
}

TEST(Rng, UniformStaysInOpenInterval) {
  const CounterRng r(3);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform(static_cast<std::uint64_t>(i), 0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_GT(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(Rng, NormalMomentsAreReasonable) {
  const CounterRng r(11);
  const int n = 40000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal(static_cast<std::uint64_t>(i), 0);
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Rng, BelowRespectsBound) {
  const CounterRng r(5);
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto v = r.below(i, 0, 7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

class PermutationSizes : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PermutationSizes, IsABijection) {
  const std::uint64_t n = GetParam();
  const IndexPermutation perm(n, 99);
  std::vector<std::uint64_t> out;
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(perm(i));
  std::sort(out.begin(), out.end());
  for (std::uint64_t i = 0; i < n; ++i) EXPECT_EQ(out[i], i);
}

INSTANTIATE_TEST_SUITE_P(Rng, PermutationSizes, ::testing::Values(1, 2, 3, 7, 64, 100, 1000, 2000));

TEST(Rng, PermutationDependsOnKey) {
  const IndexPermutation a(100, 1), b(100, 2);
  int same = 0;
  for (std::uint64_t i = 0; i < 100; ++i) same += a(i) == b(i);
  EXPECT_LT(same, 20);
}

TEST(Parallel, VisitsEveryIndexOnce) {
  for (std::size_t threads : {1u, 2u, 8u}) {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Parallel, RethrowsWorkerException) {
  EXPECT_THROW(parallel_for(10, 4,
                            [](std::size_t i) {
                              if (i == 6) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(Parallel, ZeroItemsIsANoOp) {
  int calls = 0;
  parallel_for(0, 4, [&](std::size_t) { ++calls; });
  EXPECT_EQ(calls, 0);
}
