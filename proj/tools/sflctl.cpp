// sflctl: experiment runner and analytics front end.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfl/analytics.hpp"
#include "sfl/artifacts.hpp"
#include "sfl/config.hpp"
#include "sfl/error.hpp"
#include "sfl/roles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sfl;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

std::optional<analytics::CommMethod> reconcile_method(const ExperimentSetup& s) {
  switch (s.protocol) {
    case Protocol::kSl:
      return s.plan.client_count() > 1 && s.relay != RelayMode::kNone
                 ? analytics::CommMethod::kSlWithSharing
                 : analytics::CommMethod::kSlNoSharing;
    case Protocol::kSlNoSync: return analytics::CommMethod::kSlNoSharing;
    case Protocol::kFl: return analytics::CommMethod::kFl;
    default: return std::nullopt;
  }
}

void write_reconcile(const fs::path& out, const PreparedRun& run, const RunMetrics& m) {
  const ExperimentSetup& s = run.setup;
  const auto method = reconcile_method(s);
  if (!method || s.train.rounds == 0) return;
  const auto portions = roles::initial_portions(s);
  std::size_t total = 0;
  for (const auto& p : portions) total += p.param_count();
  analytics::CommModelParams a;
  a.K = static_cast<double>(s.plan.client_count());
  a.N = static_cast<double>(total);
  a.p = static_cast<double>(s.plan.total_size());
  if (*method == analytics::CommMethod::kFl) {
    a.q = 1;
    a.client_fraction = 0.5;
  } else {
    a.q = static_cast<double>(shape_numel(portions[0].output_shape()));
    a.client_fraction = static_cast<double>(portions[0].param_count()) / a.N;
  }
  const double periods = static_cast<double>(s.train.rounds * s.train.local_epochs);
  const auto rep = analytics::reconcile(
      m.ledger, *method, a, *method == analytics::CommMethod::kFl ? s.train.rounds : periods);
  write_text(out / "reconcile.csv", rep.to_csv());
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              const std::string& transport) {
  ExperimentConfig cfg = load_config(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (transport == "tcp") cfg.setup.transport = TransportKind::kTcp;
  else if (transport == "inproc") cfg.setup.transport = TransportKind::kInProc;
  const PreparedRun run = prepare(cfg);
  const RunMetrics m = run_experiment(run.setup, run.train, run.test);

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  write_text(out / "metrics.csv", m.to_csv(cfg.reports.leakage));
  write_text(out / "ledger.csv", ledger_csv(m.ledger_entries));
  if (cfg.reports.save_model) {
    std::vector<Tensor> params;
    for (const auto& p : m.final_model.portions) {
      auto flat = p.flat_params();
      const std::size_t n = flat.size();
      params.emplace_back(Shape{n}, std::move(flat));
    }
    save_tensors(out / "model.params", params);
  }
  if (cfg.reports.save_leakage && !m.leakage_raw.empty()) {
    save_tensors(out / "leakage.tensors", {m.leakage_raw, m.leakage_smashed});
    json meta{{"protocol", protocol_name(run.setup.protocol)}};
    if (run.setup.privacy.laplace) meta["laplace_epsilon"] = run.setup.privacy.laplace_epsilon;
    if (run.setup.privacy.nopeek) meta["alpha1"] = run.setup.privacy.alpha1;
    write_text(out / "leakage.json", meta.dump(2) + "\n");
  }
  if (cfg.reports.reconcile) write_reconcile(out, run, m);
  json summary{{"protocol", protocol_name(run.setup.protocol)},
               {"clients", run.setup.plan.client_count()},
               {"rounds", run.setup.train.rounds},
               {"initial_test_accuracy", m.initial.accuracy},
               {"final_test_accuracy", m.final_eval.accuracy},
               {"final_test_loss", m.final_eval.loss},
               {"wall_seconds", m.wall_seconds}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::printf("%s: final test accuracy %.4f after %zu rounds (%.2fs) -> %s\n",
              protocol_name(run.setup.protocol), m.final_eval.accuracy, run.setup.train.rounds,
              m.wall_seconds, out.string().c_str());
  return 0;
}

std::vector<double> parse_range(const std::string& spec) {
  // "lo:hi" (integer steps) or "a,b,c".
  std::vector<double> out;
  if (auto colon = spec.find(':'); colon != std::string::npos) {
    const long lo = std::stol(spec.substr(0, colon)), hi = std::stol(spec.substr(colon + 1));
    if (lo < 1 || hi < lo) throw ConfigError("bad range '" + spec + "'");
    for (long v = lo; v <= hi; ++v) out.push_back(static_cast<double>(v));
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw ConfigError("bad number '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

struct CommArgs {
  std::string method = "fl";
  double K = 1, N = 1, p = 1, q = 1, eta = 0.5;
  std::string sweep_k, n_values;
  bool crossover = false;
};

int cmd_comm(const CommArgs& a) {
  auto method = analytics::parse_method(a.method);
  if (!method) throw ConfigError("unknown method '" + a.method + "'");
  std::vector<double> Ks{a.K}, Ns{a.N};
  try {
    if (!a.sweep_k.empty()) Ks = parse_range(a.sweep_k);
    if (!a.n_values.empty()) Ns = parse_range(a.n_values);
  } catch (const std::logic_error&) {
    throw ConfigError("malformed sweep specification");
  }
  try {
    analytics::CommModelParams{a.K, a.N, a.p, a.q, a.eta}.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  char buf[256];
  if (a.crossover) {
    std::printf("K,N,p,q,eta,sl_total,fl_total,winner,n_star\n");
    for (const auto& pt : analytics::crossover_sweep(Ks, Ns, a.p, a.q, a.eta)) {
      std::snprintf(buf, sizeof buf, "%.15g,%.15g,%.15g,%.15g,%.15g,%.15g,%.15g,%s,%.15g\n", pt.K,
                    pt.N, a.p, a.q, a.eta, pt.sl_total, pt.fl_total, pt.sl_wins ? "sl" : "fl",
                    analytics::crossover_n(pt.K, a.p, a.q, a.eta));
      std::fputs(buf, stdout);
    }
    return 0;
  }
  std::printf("method,K,N,p,q,eta,per_client,total\n");
  for (double K : Ks) {
    for (double N : Ns) {
      const auto c = analytics::analytical_comm(*method, {K, N, a.p, a.q, a.eta});
      std::snprintf(buf, sizeof buf, "%s,%.15g,%.15g,%.15g,%.15g,%.15g,%.15g,%.15g\n",
                    analytics::method_name(*method), K, N, a.p, a.q, a.eta, c.per_client, c.total);
      std::fputs(buf, stdout);
    }
  }
  return 0;
}

int cmd_leakage(const std::vector<std::string>& runs, std::size_t bins, std::size_t rows) {
  if (bins < 2) throw ConfigError("--bins must be >= 2");
  if (rows < 2) throw ConfigError("--rows must be >= 2");
  struct RunSummary {
    std::string run;
    std::optional<double> epsilon;
    double mean_dcor = 0;
  };
  std::vector<RunSummary> summaries;
  std::printf("run,batch,rows,dcor,kl_nats\n");
  for (const auto& dir : runs) {
    const fs::path file = fs::path(dir) / "leakage.tensors";
    if (!fs::exists(file)) throw DataError("missing artifact " + file.string());
    const auto t = load_tensors(file);
    if (t.size() != 2 || t[0].rank() < 1 || t[1].rank() < 1 || t[0].dim(0) != t[1].dim(0))
      throw DataError(file.string() + " does not hold a raw/smashed pair");
    RunSummary s;
    s.run = dir;
    if (fs::exists(fs::path(dir) / "leakage.json")) {
      const json meta = json::parse(read_text(fs::path(dir) / "leakage.json"));
      if (meta.contains("laplace_epsilon")) s.epsilon = meta["laplace_epsilon"].get<double>();
    }
    const std::size_t n = t[0].dim(0);
    std::size_t batches = 0;
    for (std::size_t b = 0; b + 2 <= n; b += rows, ++batches) {
      const std::size_t e = std::min(n, b + rows);
      const auto rep = privacy::smashed_leakage_report(t[0].rows(b, e), t[1].rows(b, e), bins);
      std::printf("%s,%zu,%zu,%.9g,%.9g\n", dir.c_str(), batches, e - b, rep.dcor, rep.kl_nats);
      s.mean_dcor += rep.dcor;
    }
    s.mean_dcor /= static_cast<double>(std::max<std::size_t>(batches, 1));
    summaries.push_back(s);
  }
  // Less noise (larger epsilon') should never leak less.
  const bool all_eps = std::all_of(summaries.begin(), summaries.end(),
                                   [](const RunSummary& s) { return s.epsilon.has_value(); });
  if (summaries.size() >= 2 && all_eps) {
    auto sorted = summaries;
    std::sort(sorted.begin(), sorted.end(),
              [](const RunSummary& a, const RunSummary& b) { return *a.epsilon < *b.epsilon; });
    bool monotone = true;
    for (std::size_t i = 1; i < sorted.size(); ++i)
      monotone = monotone && sorted[i].mean_dcor >= sorted[i - 1].mean_dcor;
    for (const auto& s : sorted)
      std::printf("%s,mean-eps=%.9g,,%.9g,\n", s.run.c_str(), *s.epsilon, s.mean_dcor);
    std::printf("ordering,%s,,,\n", monotone ? "monotone" : "NOT-monotone");
  }
  return 0;
}

// Multi-process roles. Each process builds the same data and plan from the
// config, so only the messages differ from the threaded run.
void write_role_report(const fs::path& out, const std::string& role, const roles::RoundBoard& board,
                       std::size_t rounds, const transport::CommLedger& ledger) {
  fs::create_directories(out);
  json rows = json::array();
  for (std::size_t r = 0; r < rounds; ++r) {
    for (const auto& d : board.round(r)) {
      rows.push_back({{"round", r},
                      {"loss_sum", d.stats.loss_sum},
                      {"batches", d.stats.batches},
                      {"correct", d.stats.correct},
                      {"seen", d.stats.seen},
                      {"bytes_up", d.bytes_up},
                      {"bytes_down", d.bytes_down}});
    }
  }
  std::string name = role;
  std::replace(name.begin(), name.end(), '/', '_');
  write_text(out / ("report_" + name + ".json"), json{{"role", role}, {"rounds", rows}}.dump(2) + "\n");
  write_text(out / ("ledger_" + name + ".csv"), ledger_csv(ledger.entries()));
}

PreparedRun prepare_distributed(const std::string& config_path) {
  PreparedRun run = prepare(load_config(config_path));
  if (run.setup.protocol == Protocol::kCentral)
    throw ConfigError("the centralized baseline runs with `train`");
  if (run.setup.relay == RelayMode::kPeerToPeer)
    throw ConfigError("multi-process mode supports the centralized relay only");
  return run;
}

int cmd_serve(const std::string& config_path, const std::string& role, uint16_t port,
              const std::string& out_override) {
  const ExperimentConfig cfg = load_config(config_path);
  const PreparedRun run = prepare_distributed(config_path);
  const std::size_t K = run.setup.plan.client_count();
  transport::CommLedger ledger;
  transport::TcpListener listener(cfg.host, port);
  std::fprintf(stderr, "%s listening on %s:%u for %zu clients\n", role.c_str(), cfg.host.c_str(),
               listener.port(), K);
  std::vector<transport::EndpointPtr> eps(K);
  roles::Links links;
  links.clients.assign(K, nullptr);
  for (std::size_t i = 0; i < K; ++i) {
    auto ep = listener.accept(role, &ledger);
    const std::string& peer = ep->peer();
    std::size_t k = K;
    if (peer.rfind("client/", 0) == 0) k = std::stoul(peer.substr(7));
    if (k >= K || eps[k]) throw TransportError("unexpected peer '" + peer + "'");
    links.clients[k] = ep.get();
    eps[k] = std::move(ep);
  }
  roles::RoundBoard board;
  roles::run_role({run.setup, run.train, board, run.setup.train.seed}, role, links);
  write_role_report(out_override.empty() ? cfg.output_dir : out_override, role, board,
                    run.setup.train.rounds, ledger);
  return 0;
}

int cmd_client(const std::string& config_path, std::size_t id, uint16_t port, uint16_t fed_port,
               const std::string& out_override) {
  const ExperimentConfig cfg = load_config(config_path);
  const PreparedRun run = prepare_distributed(config_path);
  if (id >= run.setup.plan.client_count()) throw ConfigError("--id out of range");
  const std::string me = roles::client_name(id);
  transport::CommLedger ledger;
  roles::Links links;
  auto server = transport::tcp_connect(cfg.host, port, me, roles::kServer, &ledger);
  links.server = server.get();
  transport::EndpointPtr fed;
  const Protocol p = run.setup.protocol;
  if (p == Protocol::kSflV1 || p == Protocol::kSflV2) {
    fed = transport::tcp_connect(cfg.host, fed_port, me, roles::kFed, &ledger);
    links.fed = fed.get();
  }
  roles::RoundBoard board;
  roles::run_role({run.setup, run.train, board, run.setup.train.seed}, me, links);
  write_role_report(out_override.empty() ? cfg.output_dir : out_override, me, board,
                    run.setup.train.rounds, ledger);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split / federated / splitfed learning experiments"};
  app.require_subcommand(1);

  std::string config, out_dir, transport;
  auto* train = app.add_subcommand("train", "run an experiment from a JSON config");
  train->add_option("config", config, "experiment config")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--output-dir", out_dir, "override output_dir");
  train->add_option("--transport", transport, "override transport.kind")
      ->check(CLI::IsMember({"inproc", "tcp"}));

  CommArgs ca;
  auto* comm = app.add_subcommand("comm", "analytical communication cost (values per epoch)");
  comm->add_option("--method", ca.method)->check(CLI::IsMember({"sl-sharing", "sl-no-sharing", "fl"}));
  comm->add_option("--K", ca.K, "clients");
  comm->add_option("--N", ca.N, "model parameters");
  comm->add_option("--p", ca.p, "total dataset size");
  comm->add_option("--q", ca.q, "smashed values per sample");
  comm->add_option("--eta", ca.eta, "client share of the parameters");
  comm->add_option("--sweep-k", ca.sweep_k, "K range lo:hi or list a,b,c");
  comm->add_option("--n-values", ca.n_values, "N list a,b,c or range lo:hi");
  comm->add_flag("--crossover", ca.crossover, "SL (with sharing) vs FL totals per grid point");

  std::vector<std::string> runs;
  std::size_t bins = 32, rows = 64;
  auto* leak = app.add_subcommand("leakage", "DCOR / KL report over saved smashed data");
  leak->add_option("--run", runs, "run directory with leakage.tensors")->required();
  leak->add_option("--bins", bins, "histogram bins (>= 2)");
  leak->add_option("--rows", rows, "rows per batch");

  uint16_t port = 0, fed_port = 0;
  std::size_t id = 0;
  auto* serve_main = app.add_subcommand("serve-main", "main server process (TCP)");
  auto* serve_fed = app.add_subcommand("serve-fed", "fed server process (TCP)");
  auto* client = app.add_subcommand("client", "client process (TCP)");
  for (auto* sc : {serve_main, serve_fed, client}) {
    sc->add_option("config", config)->required()->check(CLI::ExistingFile);
    sc->add_option("-o,--output-dir", out_dir);
  }
  serve_main->add_option("--port", port)->required();
  serve_fed->add_option("--port", port)->required();
  client->add_option("--id", id)->required();
  client->add_option("--port", port, "main server port")->required();
  client->add_option("--fed-port", fed_port, "fed server port (sfl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (train->parsed()) return guarded([&] { return cmd_train(config, out_dir, transport); });
  if (comm->parsed()) return guarded([&] { return cmd_comm(ca); });
  if (leak->parsed()) return guarded([&] { return cmd_leakage(runs, bins, rows); });
  if (serve_main->parsed())
    return guarded([&] { return cmd_serve(config, roles::kServer, port, out_dir); });
  if (serve_fed->parsed())
    return guarded([&] { return cmd_serve(config, roles::kFed, port, out_dir); });
  if (client->parsed())
    return guarded([&] { return cmd_client(config, id, port, fed_port, out_dir); });
  return kExitConfig;
}
