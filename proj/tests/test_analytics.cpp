#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sfl/analytics.hpp"

using namespace sfl;
using namespace sfl::analytics;

TEST_CASE("worked examples of the communication table") {
  CommModelParams fl{10, 1e6, 1, 1, 0.5};
  CHECK(analytical_comm(CommMethod::kFl, fl).per_client == 2e6);
  CHECK(analytical_comm(CommMethod::kFl, fl).total == 2e7);

  CommModelParams sl{10, 1e6, 1000, 100, 0.5};
  CHECK(analytical_comm(CommMethod::kSlNoSharing, sl).per_client == 20000);
  CHECK(analytical_comm(CommMethod::kSlNoSharing, sl).total == 2e5);
  CHECK(analytical_comm(CommMethod::kSlWithSharing, sl).per_client == 20000 + 0.5e6);
  CHECK(analytical_comm(CommMethod::kSlWithSharing, sl).total == 2e5 + 0.5e6 * 10);
}

TEST_CASE("costs scale linearly in the model inputs") {
  CommModelParams a{4, 5000, 800, 12, 0.25};
  for (CommMethod m : {CommMethod::kFl, CommMethod::kSlNoSharing, CommMethod::kSlWithSharing}) {
    const CommCost base = analytical_comm(m, a);
    CHECK(base.total == doctest::Approx(base.per_client * 4));
    CommModelParams twice = a;
    twice.N *= 2;
    twice.p *= 2;
    CHECK(analytical_comm(m, twice).total == doctest::Approx(2 * base.total));
  }
  // SL without sharing does not depend on K in total
  CommModelParams more = a;
  more.K = 40;
  CHECK(analytical_comm(CommMethod::kSlNoSharing, more).total ==
        analytical_comm(CommMethod::kSlNoSharing, a).total);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS((CommModelParams{0, 1, 1, 1, 0.5}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((CommModelParams{1, -1, 1, 1, 0.5}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((CommModelParams{1, 1, 1, 1, 1.5}).validate(), std::invalid_argument);
  CHECK(parse_method("sl-sharing") == CommMethod::kSlWithSharing);
  CHECK(!parse_method("sl"));
}

TEST_CASE("crossover frontier separates the sweep") {
  const std::vector<double> Ks{1, 2, 5, 10, 50, 100};
  const std::vector<double> Ns{1e3, 1e4, 1e5, 1e6, 1e7};
  const double p = 60000, q = 100, eta = 0.1;
  const auto pts = crossover_sweep(Ks, Ns, p, q, eta);
  REQUIRE(pts.size() == Ks.size() * Ns.size());
  for (const auto& pt : pts) {
    CHECK(pt.sl_total == doctest::Approx(2 * p * q + eta * pt.N * pt.K));
    CHECK(pt.fl_total == doctest::Approx(2 * pt.K * pt.N));
    CHECK(pt.sl_wins == (pt.N > crossover_n(pt.K, p, q, eta)));
  }
  CHECK(pts[0].K == 1);
  CHECK(pts[1].N == 1e4);
  const double n_star = crossover_n(10, p, q, eta);
  const CrossoverPoint at = crossover_sweep(std::vector<double>{10}, std::vector<double>{n_star}, p, q, eta)[0];
  CHECK(at.sl_total == doctest::Approx(at.fl_total));
}

TEST_CASE("max-pool compression") {
  CHECK(maxpool_compression(28, 28, 2, 2).height == 2.0);
  CHECK(maxpool_compression(28, 28, 1, 1).width == 1.0);
  CHECK(maxpool_compression(4, 4, 2, 2).height == 2.0);
  CHECK(maxpool_compression(6, 9, 3, 3).width == 3.0);
  CHECK(maxpool_compression(5, 5, 2, 2).height == doctest::Approx(2.5));
  const Network net({1, 8, 8}, {LayerSpec::conv2d(2, 3), LayerSpec::maxpool2d(2, 2)});
  CHECK(cut_compression(net.layers()[0]).height == 1.0);
  CHECK(cut_compression(net.layers()[1]).height == 2.0);  // 6 -> 3
}

namespace {

struct RunFor {
  Dataset train, test;
  ExperimentSetup s;
  RunFor(Protocol p, std::size_t n, std::size_t q, std::size_t K, std::size_t periods) {
    std::tie(train, test) = testutil::blobs(n, 40, 3, 6, 4.0, 2);
    s.protocol = p;
    s.model.input_shape = {6};
    s.model.layers = {LayerSpec::dense(q), LayerSpec::relu(), LayerSpec::dense(3), LayerSpec::head()};
    s.cut = 1;
    s.relay = RelayMode::kNone;
    s.train.batch = 16;
    s.train.rounds = periods;
    s.plan = iid_partition(n, K, 3);
  }
};

}  // namespace

TEST_CASE("measured split traffic matches the formula exactly") {
  for (std::size_t K : {2, 5}) {
    for (std::size_t q : {8, 32}) {
      RunFor run(Protocol::kSlNoSync, 200, q, K, 2);
      const RunMetrics m = run_experiment(run.s, run.train, run.test);
      const CommModelParams params{static_cast<double>(K), 1, 200, static_cast<double>(q), 0.5};
      const ReconcileReport r = reconcile(m.ledger, CommMethod::kSlNoSharing, params, 2);
      REQUIRE(r.clients.size() == K);
      CHECK(r.max_abs_deviation() == 0.0);
      for (const auto& line : r.clients) {
        CHECK(line.measured_bytes == 2 * 2 * (200 / K) * q * 4);
        CHECK(line.label_bytes > 0);
        CHECK(line.params_value_bytes == 0);
      }
      CHECK(r.header_share() > 0.0);
      CHECK(r.to_csv().find("client/0") != std::string::npos);
    }
  }
}

TEST_CASE("measured federated traffic matches the formula exactly") {
  RunFor run(Protocol::kFl, 120, 8, 3, 2);
  const RunMetrics m = run_experiment(run.s, run.train, run.test);
  const double N = static_cast<double>(build_network(run.s.model, 1).param_count());
  const ReconcileReport r = reconcile(m.ledger, CommMethod::kFl, {3, N, 120, 8, 0.5}, 2);
  CHECK(r.max_abs_deviation() == 0.0);
  CHECK(r.clients[1].measured_bytes == static_cast<uint64_t>(2 * 2 * N * 4));
  CHECK_THROWS_AS(reconcile(m.ledger, CommMethod::kSlNoSharing, {3, N, 120, 8, 0.5}, 2),
                  std::invalid_argument);
}
