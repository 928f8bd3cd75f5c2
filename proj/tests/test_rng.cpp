#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include <shadowheart/rng.hpp>

using namespace shadowheart;

TEST_CASE("streams are deterministic and keyed independently") {
  Rng a(42, 3, 7, 1, StreamPurpose::Noise);
  Rng b(42, 3, 7, 1, StreamPurpose::Noise);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42, 3, 7, 1, StreamPurpose::Compress);
  Rng d(42, 3, 7, 2, StreamPurpose::Noise);
  Rng e(42, 4, 7, 1, StreamPurpose::Noise);
  Rng base(42, 3, 7, 1, StreamPurpose::Noise);
  CHECK(base.next_u64() != c.next_u64());
  Rng base2(42, 3, 7, 1, StreamPurpose::Noise);
  CHECK(base2.next_u64() != d.next_u64());
  Rng base3(42, 3, 7, 1, StreamPurpose::Noise);
  CHECK(base3.next_u64() != e.next_u64());
}

TEST_CASE("uniform stays in range and has sane mean") {
  Rng rng(7, 0, 0, 0, StreamPurpose::Noise);
  double sum = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / N - 0.5) < 0.005);
}

TEST_CASE("normal moments") {
  Rng rng(11, 0, 0, 0, StreamPurpose::Noise);
  double sum = 0, sq = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / N) < 0.01);
  CHECK(std::abs(sq / N - 1.0) < 0.02);
}

TEST_CASE("below is unbiased over a small modulus") {
  Rng rng(13, 0, 0, 0, StreamPurpose::Noise);
  std::map<std::uint64_t, int> counts;
  const int N = 70000;
  for (int i = 0; i < N; ++i) counts[rng.below(7)]++;
  for (auto& [v, c] : counts) {
    CHECK(v < 7);
    CHECK(std::abs(c - N / 7.0) < 5.0 * std::sqrt(N / 7.0));
  }
}

TEST_CASE("subset sampling is uniform over k-subsets") {
  // d = 5, k = 2: 10 subsets, chi-square style tolerance.
  std::map<std::pair<int, int>, int> counts;
  const int N = 50000;
  for (int i = 0; i < N; ++i) {
    Rng rng(99, 0, static_cast<std::uint64_t>(i), 0, StreamPurpose::Compress);
    auto s = rng.sample_without_replacement(5, 2);
    REQUIRE(s.size() == 2);
    CHECK(s[0] < s[1]);
    counts[{s[0], s[1]}]++;
  }
  CHECK(counts.size() == 10);
  for (auto& [k, c] : counts)
    CHECK(std::abs(c - N / 10.0) < 5.0 * std::sqrt(N / 10.0));
}

TEST_CASE("subset sampling edge cases") {
  Rng rng(1, 0, 0, 0, StreamPurpose::Compress);
  auto all = rng.sample_without_replacement(4, 4);
  CHECK(all == std::vector<int>{0, 1, 2, 3});
  auto none = rng.sample_without_replacement(4, 0);
  CHECK(none.empty());
  CHECK_THROWS_AS(rng.sample_without_replacement(3, 4), std::invalid_argument);
}
