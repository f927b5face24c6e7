#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "sfl/error.hpp"
#include "sfl/privacy.hpp"

using namespace sfl;
using namespace sfl::privacy;
using gradcheck::dcor_oracle;

namespace {

double norm(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("clipping") {
  const std::vector<float> small{0.3f, -0.4f};
  CHECK(clip_by_norm(small, 1.0) == small);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const Tensor g = testutil::random_tensor({17}, rng, 5.0f);
    const Tensor c = clip_by_norm(g, 0.7);
    CHECK(norm(c.data()) <= 0.7);
    CHECK(norm(c.data()) == doctest::Approx(0.7).epsilon(1e-5));
    // direction preserved
    CHECK(c[0] / g[0] == doctest::Approx(c[3] / g[3]).epsilon(1e-5));
  }
  CHECK(clip_by_norm(std::vector<float>{0, 0}, 1.0) == std::vector<float>{0, 0});
}

TEST_CASE("dp local gradient is unbiased with the configured noise scale") {
  const std::vector<std::vector<float>> per{{3.0f, 4.0f}, {0.1f, 0.0f}, {0.0f, -0.2f}};
  // clipped sum with S = 1: (0.6, 0.8) + (0.1, 0) + (0, -0.2) = (0.7, 0.6)
  const double S = 1.0, sigma = 2.0;
  const std::size_t n = 4, trials = 20000;
  Rng rng(5);
  double m0 = 0, m1 = 0, v0 = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto g = dp_local_gradient(per, S, sigma, n, rng);
    m0 += g[0];
    m1 += g[1];
    v0 += (g[0] - 0.7 / n) * (g[0] - 0.7 / n);
  }
  m0 /= trials;
  m1 /= trials;
  const double sd = sigma * S / n;
  CHECK(std::abs(m0 - 0.7 / n) < 5 * sd / std::sqrt(trials));
  CHECK(std::abs(m1 - 0.6 / n) < 5 * sd / std::sqrt(trials));
  CHECK(std::sqrt(v0 / trials) == doctest::Approx(sd).epsilon(0.03));

  Rng zero(1);
  const auto exact = dp_local_gradient(per, S, 0.0, 2, zero);
  CHECK(exact[0] == doctest::Approx(0.35));
}

TEST_CASE("dp fl server update averages clipped deltas") {
  const std::vector<float> w{1.0f, 1.0f};
  const std::vector<std::vector<float>> deltas{{0.0f, 2.0f}, {0.5f, 0.0f}};
  Rng rng(1);
  const auto out = dp_fl_server_update(w, deltas, 1.0, 0.0, rng);
  CHECK(out[0] == doctest::Approx(1.25));
  CHECK(out[1] == doctest::Approx(1.5));
}

TEST_CASE("laplace noise has the requested scale") {
  Rng rng(3);
  const std::size_t n = 200000;
  double mad = 0, mean = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = sample_laplace(0.8, rng);
    mad += std::abs(x);
    mean += x;
  }
  CHECK(mad / n == doctest::Approx(0.8).epsilon(0.01));
  CHECK(std::abs(mean / n) < 0.01);
  CHECK(sample_laplace(0.0, rng) == 0.0);
}

TEST_CASE("laplace smash uses per-unit intervals") {
  Tensor s({3, 2}, {0, 5, 1, 5, 2, 5});
  const SmashBounds b = SmashBounds::of(s);
  CHECK(b.intervals() == std::vector<double>{2.0, 0.0});
  Rng rng(4);
  const Tensor out = laplace_smash(s, 0.5, b, rng);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(out[r * 2 + 1] == 5.0f);  // constant unit left alone
    CHECK(out[r * 2] != s[r * 2]);
  }
  SmashBounds m = b;
  m.merge(Tensor({1, 2}, {-3, 9}));
  CHECK(m.intervals() == std::vector<double>{5.0, 4.0});
}

TEST_CASE("kl divergence and entropy identity") {
  const std::vector<double> x{0.5, 0.25, 0.25, 0.0}, z{0.25, 0.25, 0.25, 0.25};
  CHECK(kl_divergence(x, z) == doctest::Approx(0.5 * std::log(2.0)));
  CHECK(kl_divergence(x, z) == doctest::Approx(cross_entropy(x, z) - entropy(x)).epsilon(1e-12));
  CHECK(kl_divergence(z, z) == 0.0);
  CHECK(entropy(z) == doctest::Approx(std::log(4.0)));
  const std::vector<double> hole{0.5, 0.5, 0.0, 0.0};
  CHECK_THROWS_AS(kl_divergence(x, hole), DataError);
  CHECK_THROWS_AS(kl_divergence(x, std::vector<double>{1.0}), DataError);
}

TEST_CASE("distance correlation against the textbook estimator") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const Tensor x = testutil::random_tensor({12, 5}, rng);
    const Tensor z = testutil::random_tensor({12, 3}, rng);
    CHECK(distance_correlation(x, z) == doctest::Approx(dcor_oracle(x, z)).epsilon(1e-9));
  }
  const Tensor x = testutil::random_tensor({10, 4}, rng);
  CHECK(distance_correlation(x, x) == doctest::Approx(1.0));
  Tensor scaled = x;
  for (float& v : scaled.data()) v = 3.0f * v + 1.0f;
  CHECK(distance_correlation(x, scaled) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(distance_correlation(x, Tensor::filled({10, 2}, 1.0f)) == 0.0);
  CHECK_THROWS(distance_correlation(x, testutil::random_tensor({9, 2}, rng)));
  CHECK_THROWS(distance_correlation(x.rows(0, 1), x.rows(1, 2)));
}

TEST_CASE("nopeek loss combines both terms") {
  std::mt19937_64 rng(10);
  const Tensor raw = testutil::random_tensor({6, 4}, rng);
  const Tensor smashed = testutil::random_tensor({6, 3}, rng);
  const Tensor logits = testutil::random_tensor({6, 2}, rng);
  const std::vector<uint32_t> y{0, 1, 1, 0, 1, 0};
  const NoPeekResult r = nopeek_loss(raw, smashed, y, logits, 0.3, 2.0);
  CHECK(r.dcor == doctest::Approx(dcor_oracle(raw, smashed)));
  CHECK(r.loss == doctest::Approx(0.3 * r.dcor + 2.0 * r.cross_entropy));
  const Tensor g = distance_correlation_grad(raw, smashed).grad_z;
  for (std::size_t i = 0; i < g.numel(); ++i)
    CHECK(r.grad_smashed[i] == doctest::Approx(0.3 * g[i]).epsilon(1e-5));
  CHECK(r.correct <= 6);
}

TEST_CASE("leakage report on identical and independent data") {
  std::mt19937_64 rng(11);
  const Tensor raw = testutil::random_tensor({64, 4}, rng);
  const LeakageReport same = smashed_leakage_report(raw, raw, 16);
  CHECK(same.dcor == doctest::Approx(1.0));
  CHECK(same.kl_nats == doctest::Approx(0.0).epsilon(1e-12));
  Tensor shifted = raw;
  for (float& v : shifted.data()) v += 10.0f;
  const LeakageReport far = smashed_leakage_report(raw, shifted, 16);
  CHECK(far.kl_nats > 1.0);
  CHECK(far.dcor == doctest::Approx(1.0));
  const LeakageReport other = smashed_leakage_report(raw, testutil::random_tensor({64, 7}, rng), 16);
  CHECK(other.dcor < 0.6);
  CHECK(other.kl_nats >= 0.0);
}

TEST_CASE("privacy config validation") {
  PrivacyConfig c;
  c.validate();
  c.laplace = true;
  c.laplace_epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PrivacyConfig{};
  c.dp_sgd = true;
  c.clip_norm = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
