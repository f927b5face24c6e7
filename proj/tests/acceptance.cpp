// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "sfl/analytics.hpp"
#include "sfl/artifacts.hpp"
#include "sfl/privacy.hpp"
#include "sfl/protocols.hpp"

using namespace sfl;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Blobs with four classes, 2000 train / 500 test rows.
struct Task {
  Dataset train, test;
  ExperimentSetup setup;
};

Task blob_task(double sep, uint64_t seed, std::size_t clients) {
  Task t;
  std::tie(t.train, t.test) = testutil::blobs(2000, 500, 4, 16, sep, seed);
  t.setup.model = model_preset("mlp-small", {16}, 4);
  t.setup.cut = 1;
  t.setup.train.lr = 0.05f;
  t.setup.train.batch = 32;
  t.setup.train.seed = seed;
  t.setup.plan = iid_partition(t.train.size(), clients, seed);
  return t;
}

RunMetrics run(Task& t, Protocol p) {
  t.setup.protocol = p;
  return run_experiment(t.setup, t.train, t.test);
}

Verdict centralized_equivalence() {
  Task t = blob_task(6.0, 42, 1);
  t.setup.train.rounds = 10;
  const RunMetrics c = run(t, Protocol::kCentral);
  double worst_loss = 0, worst_acc = 0;
  for (Protocol p : {Protocol::kSl, Protocol::kSflV1, Protocol::kSflV2}) {
    const RunMetrics m = run(t, p);
    for (std::size_t e = 0; e < c.epochs.size(); ++e) {
      worst_loss = std::max({worst_loss, std::abs(m.epochs[e].train_loss - c.epochs[e].train_loss),
                             std::abs(m.epochs[e].test_loss - c.epochs[e].test_loss)});
    }
    worst_acc = std::max(worst_acc, std::abs(m.final_eval.accuracy - c.final_eval.accuracy));
  }
  return {worst_loss <= 1e-6 && worst_acc <= 1e-6,
          fmt("max per-epoch loss diff %.3g, final accuracy diff %.3g (central acc %.4f)", worst_loss,
              worst_acc, c.final_eval.accuracy)};
}

Verdict table_exactness() {
  const std::size_t p = 1000, epochs = 2;
  double worst_dev = 0, worst_header = 0;
  bool exact = true;
  std::string detail;
  for (std::size_t K : {2, 5}) {
    for (std::size_t q : {32, 128}) {
      Task t;
      std::tie(t.train, t.test) = testutil::blobs(p, 100, 4, 16, 6.0, 5);
      t.setup.model.input_shape = {16};
      t.setup.model.layers = {LayerSpec::dense(q), LayerSpec::relu(), LayerSpec::dense(4),
                              LayerSpec::head()};
      t.setup.cut = 1;
      t.setup.train.batch = 32;
      t.setup.train.rounds = epochs;
      t.setup.plan = iid_partition(p, K, 5);
      const RunMetrics m = run(t, Protocol::kSlNoSync);
      const analytics::CommModelParams params{double(K), 1, double(p), double(q), 0.5};
      const auto r = analytics::reconcile(m.ledger, analytics::CommMethod::kSlNoSharing, params, epochs);
      for (const auto& line : r.clients)
        exact = exact && line.measured_bytes == epochs * 4 * 2 * (p / K) * q;
      worst_dev = std::max(worst_dev, r.max_abs_deviation());
      worst_header = std::max(worst_header, r.header_share());
    }
  }
  // FL: PARAMS both ways, 2N values per client per round.
  Task t = blob_task(6.0, 5, 3);
  t.setup.train.rounds = 2;
  const RunMetrics fl = run(t, Protocol::kFl);
  const double N = double(build_network(t.setup.model, 1).param_count());
  const auto r = analytics::reconcile(fl.ledger, analytics::CommMethod::kFl, {3, N, 2000, 1, 0.5}, 2);
  for (const auto& line : r.clients)
    exact = exact && line.measured_bytes == static_cast<uint64_t>(2 * 4 * 2 * N);
  worst_dev = std::max(worst_dev, r.max_abs_deviation());
  return {exact && worst_dev == 0.0 && worst_header < 0.005,
          fmt("max deviation %.3g, SL header share %.4f%% (batch 32), FL N=%.0f", worst_dev,
              100 * worst_header, N)};
}

Verdict gradient_suite() {
  using namespace gradcheck;
  const std::vector<std::pair<const char*, FdResult>> suites{
      {"dense", dense_suite()},     {"conv2d", conv_suite()},   {"relu", relu_suite()},
      {"maxpool", maxpool_suite()}, {"flatten", flatten_suite()}, {"head", head_suite()},
      {"composed", composed_suite()}, {"dcor", dcor_suite()}};
  bool ok = true;
  std::string detail;
  for (const auto& [name, r] : suites) {
    ok = ok && r.worst() < kTol && r.instances >= 100;
    detail += fmt("%s %.1e/%zu ", name, r.worst(), r.instances);
  }
  return {ok, "worst rel err/instances: " + detail};
}

Verdict privacy_suite() {
  std::mt19937_64 rng(77);
  // clipping
  double worst_excess = -1;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = gradcheck::pick(rng, 1, 64);
    const Tensor g = testutil::random_tensor({n}, rng, std::exp(std::normal_distribution<float>(0, 2)(rng)));
    const Tensor c = privacy::clip_by_norm(g, 1.5);
    double s = 0;
    for (float v : c.data()) s += double(v) * v;
    worst_excess = std::max(worst_excess, std::sqrt(s) - 1.5);
  }
  const bool clip_ok = worst_excess <= 0;

  // Laplace layer: unit interval 2, eps' 0.5, so the scale is 4.
  const std::size_t draws = 1000000;
  privacy::SmashBounds bounds;
  bounds.min = {-1.0f};
  bounds.max = {1.0f};
  Rng lrng(3);
  const Tensor noised = privacy::laplace_smash(Tensor({draws, 1}), 0.5, bounds, lrng);
  double mad = 0;
  for (float v : noised.data()) mad += std::abs(double(v));
  mad /= draws;
  const bool lap_ok = std::abs(mad - 4.0) <= 0.03 * 4.0;

  // KL identity
  double worst_id = 0, min_kl = 1;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = gradcheck::pick(rng, 2, 40);
    std::vector<double> x(n), z(n);
    std::gamma_distribution<double> g(0.5);
    for (std::size_t j = 0; j < n; ++j) {
      x[j] = g(rng);
      z[j] = g(rng) + 1e-9;
    }
    if (i % 3 == 0) x[0] = 0;  // exercise zero mass in X
    const double sx = std::accumulate(x.begin(), x.end(), 0.0), sz = std::accumulate(z.begin(), z.end(), 0.0);
    for (auto& v : x) v /= sx;
    for (auto& v : z) v /= sz;
    const double kl = privacy::kl_divergence(x, z);
    min_kl = std::min(min_kl, kl);
    worst_id = std::max(worst_id, std::abs(kl - (privacy::cross_entropy(x, z) - privacy::entropy(x))) /
                                      std::max(1.0, std::abs(kl)));
  }
  const bool kl_ok = min_kl >= 0 && worst_id <= 1e-12;

  // The sample statistic is biased upward for independent data, more so as
  // the dimension grows; the independence check uses scalar samples.
  const Tensor x = testutil::random_tensor({1000, 8}, rng);
  const double self = privacy::distance_correlation(x, x);
  const double indep = privacy::distance_correlation(testutil::random_tensor({1000, 1}, rng),
                                                     testutil::random_tensor({1000, 1}, rng));
  const bool dcor_ok = std::abs(self - 1.0) <= 1e-10 && indep < 0.1;
  return {clip_ok && lap_ok && kl_ok && dcor_ok,
          fmt("clip max excess %.2g; Laplace MAD %.4f vs 4 (%.2f%%); min KL %.3g, identity err %.2g; "
              "DCOR(X,X)-1 %.2g, independent scalar %.4f",
              worst_excess, mad, 100 * std::abs(mad - 4) / 4, min_kl, worst_id, self - 1, indep)};
}

Verdict iid_parity() {
  Task t = blob_task(6.0, 1, 4);
  t.setup.train.rounds = 20;
  std::vector<double> acc;
  std::string detail;
  for (Protocol p : {Protocol::kCentral, Protocol::kFl, Protocol::kSl, Protocol::kSflV1, Protocol::kSflV2}) {
    acc.push_back(run(t, p).final_eval.accuracy);
    detail += fmt("%s %.4f ", protocol_name(p), acc.back());
  }
  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  return {*lo >= 0.95 && *hi - *lo <= 0.02, detail + fmt("gap %.4f", *hi - *lo)};
}

Verdict non_iid() {
  std::vector<double> sl_deg, fl_deg;
  for (uint64_t seed : {1, 2, 3}) {
    Task t = blob_task(2.5, seed, 4);
    t.setup.train.rounds = 20;
    const double sl_iid = run(t, Protocol::kSl).final_eval.accuracy;
    const double fl_iid = run(t, Protocol::kFl).final_eval.accuracy;
    t.setup.plan = label_skew_partition(t.train.labels, 4, 4, 1, seed);
    sl_deg.push_back(sl_iid - run(t, Protocol::kSl).final_eval.accuracy);
    fl_deg.push_back(fl_iid - run(t, Protocol::kFl).final_eval.accuracy);
  }
  const double sl = median3(sl_deg), fl = median3(fl_deg);
  return {sl >= 0.15 && fl < sl,
          fmt("median degradation SL %.3f (%.3f %.3f %.3f), FL %.3f (%.3f %.3f %.3f)", sl, sl_deg[0],
              sl_deg[1], sl_deg[2], fl, fl_deg[0], fl_deg[1], fl_deg[2])};
}

Verdict nopeek_effect() {
  std::vector<double> dcor_drop, acc_drop;
  for (uint64_t seed : {1, 2, 3}) {
    Task t = blob_task(6.0, seed, 1);
    t.setup.cut = 3;
    t.setup.train.batch = 16;
    t.setup.train.lr = 0.1f;
    t.setup.train.rounds = 60;
    t.setup.leakage_report = true;
    const RunMetrics plain = run(t, Protocol::kSl);
    t.setup.privacy.nopeek = true;
    t.setup.privacy.alpha1 = 0.1;
    const RunMetrics np = run(t, Protocol::kSl);
    dcor_drop.push_back(*plain.epochs.back().dcor - *np.epochs.back().dcor);
    acc_drop.push_back(plain.final_eval.accuracy - np.final_eval.accuracy);
  }
  const double d = median3(dcor_drop), a = median3(acc_drop);
  return {d >= 0.05 && a <= 0.03,
          fmt("median DCOR reduction %.3f (%.3f %.3f %.3f), median accuracy drop %.4f", d,
              dcor_drop[0], dcor_drop[1], dcor_drop[2], a)};
}

Verdict ushaped() {
  Task t = blob_task(6.0, 1, 4);
  t.setup.train.rounds = 10;
  t.setup.back_cut = 3;
  const RunMetrics u = run(t, Protocol::kSlUShaped);
  const RunMetrics sl = run(t, Protocol::kSl);
  uint64_t label_bytes = 0;
  for (const auto& [key, counts] : u.ledger_entries)
    if (key.type == transport::MsgType::kLabels) label_bytes += counts.payload_bytes;
  const double gap = std::abs(u.final_eval.accuracy - sl.final_eval.accuracy);
  return {label_bytes == 0 && gap <= 0.02,
          fmt("LABELS bytes %llu, accuracy u-shaped %.4f vs SL %.4f", (unsigned long long)label_bytes,
              u.final_eval.accuracy, sl.final_eval.accuracy)};
}

Verdict transport_differential() {
  Task t = blob_task(6.0, 9, 3);
  t.setup.train.rounds = 3;
  t.setup.leakage_report = true;
  const RunMetrics a = run(t, Protocol::kSl);
  t.setup.transport = TransportKind::kTcp;
  const RunMetrics b = run(t, Protocol::kSl);
  const bool csv = a.to_csv(true) == b.to_csv(true);
  const bool ledger = ledger_csv(a.ledger_entries) == ledger_csv(b.ledger_entries);
  return {csv && ledger, fmt("metrics csv %s, payload ledger %s (%zu entries)", csv ? "identical" : "DIFFER",
                             ledger ? "identical" : "DIFFERS", a.ledger_entries.size())};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;
    std::function<Verdict()> check;
  };
  const std::vector<Criterion> criteria{
      {"centralized-equivalence", 30, centralized_equivalence},
      {"comm-table-exactness", 60, table_exactness},
      {"gradient-suite", 60, gradient_suite},
      {"privacy-mechanisms", 0, privacy_suite},
      {"iid-convergence-parity", 180, iid_parity},
      {"non-iid-degradation", 0, non_iid},
      {"nopeek-effect", 0, nopeek_effect},
      {"ushaped-label-confidentiality", 0, ushaped},
      {"transport-differential", 0, transport_differential},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs >= c.budget_s) {
      v.pass = false;
      v.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    failed += !v.pass;
    std::printf("%s [%zu] %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", i + 1, c.name, v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
