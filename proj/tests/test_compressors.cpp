#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include <shadowheart/compressors.hpp>

using namespace shadowheart;

static std::vector<double> random_vec(int d, std::uint64_t seed) {
  Rng rng(seed, 0, 0, 0, StreamPurpose::Harness);
  std::vector<double> x(static_cast<std::size_t>(d));
  for (auto& v : x) v = rng.normal();
  return x;
}

TEST_CASE("parameters") {
  CHECK(omega_of({CompressorKind::RandK, 1, 10}) == doctest::Approx(9.0));
  CHECK(omega_of({CompressorKind::RandK, 10, 10}) == doctest::Approx(0.0));
  CHECK(omega_of({CompressorKind::Identity, 0, 10}) == doctest::Approx(0.0));
  CHECK(alpha_of({CompressorKind::TopK, 2, 10}) == doctest::Approx(0.2));
  CHECK(alpha_of({CompressorKind::Identity, 0, 10}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(omega_of({CompressorKind::TopK, 2, 10}), std::invalid_argument);
  CHECK_THROWS_AS(alpha_of({CompressorKind::RandK, 2, 10}), std::invalid_argument);
  CHECK_THROWS_AS(omega_of({CompressorKind::RandK, 0, 10}), std::invalid_argument);
  CHECK_THROWS_AS(omega_of({CompressorKind::RandK, 11, 10}), std::invalid_argument);

  CHECK(transmit_cost({CompressorKind::RandK, 3, 10}) == 3);
  CHECK(transmit_cost({CompressorKind::TopK, 4, 10}) == 4);
  CHECK(transmit_cost({CompressorKind::Identity, 0, 10}) == 10);
}

TEST_CASE("rand-k scales retained coordinates by d/k") {
  std::vector<double> x = {1.0, -2.0, 3.0};
  CompressorSpec spec{CompressorKind::RandK, 1, 3};
  Rng rng(5, 0, 0, 0, StreamPurpose::Compress);
  auto c = compress_unbiased(spec, x, rng);
  REQUIRE(c.indices.size() == 1);
  int idx = c.indices[0];
  CHECK(c.values[0] == doctest::Approx(3.0 * x[static_cast<std::size_t>(idx)]));
}

TEST_CASE("rand-k is unbiased and attains its variance bound") {
  const int d = 6, k = 2;
  CompressorSpec spec{CompressorKind::RandK, k, d};
  auto x = random_vec(d, 17);
  double xnorm2 = 0;
  for (double v : x) xnorm2 += v * v;

  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  double err2 = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    Rng rng(23, 0, static_cast<std::uint64_t>(i), 0, StreamPurpose::Compress);
    auto c = compress_unbiased(spec, x, rng);
    auto dense = c.densify();
    double e = 0;
    for (int j = 0; j < d; ++j) {
      mean[static_cast<std::size_t>(j)] += dense[static_cast<std::size_t>(j)] / N;
      double diff = dense[static_cast<std::size_t>(j)] - x[static_cast<std::size_t>(j)];
      e += diff * diff;
    }
    err2 += e / N;
  }
  double omega = omega_of(spec);
  for (int j = 0; j < d; ++j)
    CHECK(mean[static_cast<std::size_t>(j)] ==
          doctest::Approx(x[static_cast<std::size_t>(j)]).epsilon(0.05));
  // Rand-K meets its variance bound with equality.
  CHECK(err2 == doctest::Approx(omega * xnorm2).epsilon(0.02));
}

TEST_CASE("top-k keeps the largest magnitudes") {
  std::vector<double> x = {1.0, -2.0, 3.0};
  CompressorSpec spec{CompressorKind::TopK, 2, 3};
  auto c = compress_biased(spec, x);
  auto dense = c.densify();
  CHECK(dense == std::vector<double>{0.0, -2.0, 3.0});
}

TEST_CASE("top-k magnitude ties keep the smaller index") {
  std::vector<double> x = {2.0, -2.0, 1.0};
  CompressorSpec spec{CompressorKind::TopK, 1, 3};
  auto c = compress_biased(spec, x);
  REQUIRE(c.indices.size() == 1);
  CHECK(c.indices[0] == 0);
  CHECK(c.values[0] == doctest::Approx(2.0));
}

TEST_CASE("top-k contraction holds pathwise") {
  for (std::uint64_t s = 0; s < 300; ++s) {
    Rng pick(s, 1, 0, 0, StreamPurpose::Harness);
    int d = 1 + static_cast<int>(pick.below(12));
    int k = 1 + static_cast<int>(pick.below(static_cast<std::uint64_t>(d)));
    CompressorSpec spec{CompressorKind::TopK, k, d};
    auto x = random_vec(d, 1000 + s);
    auto c = compress_biased(spec, x);
    auto dense = c.densify();
    double err2 = 0, xnorm2 = 0;
    for (int j = 0; j < d; ++j) {
      double diff = dense[static_cast<std::size_t>(j)] - x[static_cast<std::size_t>(j)];
      err2 += diff * diff;
      xnorm2 += x[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
    }
    CHECK(err2 <= (1.0 - static_cast<double>(k) / d) * xnorm2 + 1e-12);
  }
}

TEST_CASE("identity compressors are exact") {
  std::vector<double> x = {0.5, -1.5, 2.5, 0.0};
  CompressorSpec spec{CompressorKind::Identity, 0, 4};
  Rng rng(3, 0, 0, 0, StreamPurpose::Compress);
  CHECK(compress_unbiased(spec, x, rng).densify() == x);
  CHECK(compress_biased(spec, x).densify() == x);
}

TEST_CASE("messages round-trip and serialize with increasing indices") {
  auto x = random_vec(9, 77);
  CompressorSpec spec{CompressorKind::RandK, 4, 9};
  Rng rng(8, 0, 0, 0, StreamPurpose::Compress);
  auto c = compress_unbiased(spec, x, rng);
  REQUIRE(c.indices.size() == 4);
  for (std::size_t i = 1; i < c.indices.size(); ++i) CHECK(c.indices[i - 1] < c.indices[i]);
  for (int idx : c.indices) {
    CHECK(idx >= 0);
    CHECK(idx < 9);
  }

  // Densify recovers exactly the retained values.
  auto dense = c.densify();
  for (std::size_t i = 0; i < c.indices.size(); ++i)
    CHECK(dense[static_cast<std::size_t>(c.indices[i])] == c.values[i]);

  auto text = c.serialize();
  CHECK(text.find(':') != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), ';') == 3);
}

TEST_CASE("accumulation matches densify") {
  auto x = random_vec(7, 5);
  CompressorSpec spec{CompressorKind::RandK, 3, 7};
  Rng rng(9, 0, 0, 0, StreamPurpose::Compress);
  auto c = compress_unbiased(spec, x, rng);
  std::vector<double> acc(7, 1.0);
  c.add_to(acc, 2.0);
  auto dense = c.densify();
  for (int j = 0; j < 7; ++j)
    CHECK(acc[static_cast<std::size_t>(j)] ==
          doctest::Approx(1.0 + 2.0 * dense[static_cast<std::size_t>(j)]));
}
