#include "sfl/analytics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sfl::analytics {

using transport::MsgType;

const char* method_name(CommMethod m) {
  switch (m) {
    case CommMethod::kSlWithSharing: return "sl-sharing";
    case CommMethod::kSlNoSharing: return "sl-no-sharing";
    case CommMethod::kFl: return "fl";
  }
  return "?";
}

std::optional<CommMethod> parse_method(const std::string& s) {
  for (CommMethod m : {CommMethod::kSlWithSharing, CommMethod::kSlNoSharing, CommMethod::kFl})
    if (s == method_name(m)) return m;
  return std::nullopt;
}

void CommModelParams::validate() const {
  for (double v : {K, N, p, q})
    if (!(v > 0) || !std::isfinite(v)) throw std::invalid_argument("K, N, p, q must be positive");
  if (!(client_fraction > 0 && client_fraction < 1))
    throw std::invalid_argument("client fraction must lie in (0,1)");
}

CommCost analytical_comm(CommMethod method, const CommModelParams& a) {
  a.validate();
  const double smashed = 2.0 * (a.p / a.K) * a.q;
  switch (method) {
    case CommMethod::kSlWithSharing:
      return {smashed + a.client_fraction * a.N, 2.0 * a.p * a.q + a.client_fraction * a.N * a.K};
    case CommMethod::kSlNoSharing:
      return {smashed, 2.0 * a.p * a.q};
    case CommMethod::kFl:
      return {2.0 * a.N, 2.0 * a.K * a.N};
  }
  throw std::invalid_argument("unknown method");
}

std::vector<CrossoverPoint> crossover_sweep(std::span<const double> Ks, std::span<const double> Ns,
                                            double p, double q, double client_fraction) {
  if (Ks.empty() || Ns.empty()) throw std::invalid_argument("crossover: empty range");
  std::vector<CrossoverPoint> out;
  for (double K : Ks) {
    for (double N : Ns) {
      const CommModelParams a{K, N, p, q, client_fraction};
      CrossoverPoint pt{K, N};
      pt.sl_total = analytical_comm(CommMethod::kSlWithSharing, a).total;
      pt.fl_total = analytical_comm(CommMethod::kFl, a).total;
      pt.sl_wins = pt.sl_total < pt.fl_total;
      out.push_back(pt);
    }
  }
  return out;
}

double crossover_n(double K, double p, double q, double client_fraction) {
  CommModelParams{K, 1, p, q, client_fraction}.validate();
  return 2.0 * p * q / (K * (2.0 - client_fraction));
}

CompressionFactors maxpool_compression(std::size_t n_h, std::size_t n_w, std::size_t f,
                                       std::size_t s) {
  if (s == 0) throw std::invalid_argument("stride must be >= 1");
  if (f == 0 || f > n_h || f > n_w) throw std::invalid_argument("filter larger than the input");
  auto factor = [&](std::size_t n) {
    return static_cast<double>(n) / static_cast<double>((n - f) / s + 1);
  };
  return {factor(n_h), factor(n_w)};
}

CompressionFactors cut_compression(const Layer& layer) {
  if (layer.spec.kind != LayerKind::kMaxPool2d) return {};
  const Shape& in = layer.in_shape;
  return maxpool_compression(in.at(1), in.at(2), layer.spec.kernel, layer.spec.stride);
}

double ReconcileReport::max_abs_deviation() const {
  double m = 0;
  for (const auto& c : clients) m = std::max(m, std::fabs(c.deviation));
  return m;
}

double ReconcileReport::header_share() const {
  double h = 0, v = 0;
  for (const auto& c : clients) {
    h += static_cast<double>(c.header_bytes);
    v += static_cast<double>(c.measured_bytes);
  }
  return v > 0 ? h / v : 0.0;
}

std::string ReconcileReport::to_csv() const {
  std::string s =
      "client,analytical_values,analytical_bytes,measured_bytes,deviation,header_bytes,"
      "label_bytes,framing_bytes,smashed_value_bytes,params_value_bytes\n";
  char buf[512];
  for (const auto& c : clients) {
    std::snprintf(buf, sizeof buf, "%s,%.15g,%.15g,%llu,%.9g,%llu,%llu,%llu,%llu,%llu\n",
                  c.client.c_str(), c.analytical_values, c.analytical_bytes,
                  static_cast<unsigned long long>(c.measured_bytes), c.deviation,
                  static_cast<unsigned long long>(c.header_bytes),
                  static_cast<unsigned long long>(c.label_bytes),
                  static_cast<unsigned long long>(c.framing_bytes),
                  static_cast<unsigned long long>(c.smashed_value_bytes),
                  static_cast<unsigned long long>(c.params_value_bytes));
    s += buf;
  }
  return s;
}

ReconcileReport reconcile(const transport::LedgerReport& ledger, CommMethod method,
                          const CommModelParams& params, double periods) {
  if (!(periods > 0)) throw std::invalid_argument("reconcile: periods must be positive");
  const CommCost cost = analytical_comm(method, params);
  ReconcileReport rep;
  rep.method = method;
  rep.periods = periods;
  const bool sl = method != CommMethod::kFl;
  for (const auto& [entity, t] : ledger) {
    if (entity.rfind("client/", 0) != 0) continue;
    const auto& smash = t.sent_of(MsgType::kSmash);
    const auto& grad = t.received_of(MsgType::kSmashGrad);
    const auto& psent = t.sent_of(MsgType::kParams);
    const auto& precv = t.received_of(MsgType::kParams);
    ReconcileLine l;
    l.client = entity;
    l.smashed_value_bytes = smash.value_bytes + grad.value_bytes;
    l.params_value_bytes = psent.value_bytes + precv.value_bytes;
    l.label_bytes = t.sent_of(MsgType::kLabels).payload_bytes;
    l.framing_bytes = t.total_sent.framing_bytes + t.total_received.framing_bytes;
    if (sl) {
      if (smash.messages == 0) throw std::invalid_argument(entity + " sent no smashed data");
      if (method == CommMethod::kSlNoSharing && psent.messages + precv.messages > 0)
        throw std::invalid_argument(entity + " shared weights in a no-sharing run");
      l.measured_bytes = l.smashed_value_bytes;
      l.header_bytes = smash.overhead_bytes() + grad.overhead_bytes();
      // One W^C upload per handoff.
      if (method == CommMethod::kSlWithSharing) {
        l.measured_bytes += psent.value_bytes;
        l.header_bytes += psent.overhead_bytes();
      }
    } else {
      if (smash.messages + grad.messages > 0)
        throw std::invalid_argument(entity + " exchanged smashed data in an FL run");
      if (psent.messages == 0) throw std::invalid_argument(entity + " sent no parameters");
      l.measured_bytes = l.params_value_bytes;
      l.header_bytes = psent.overhead_bytes() + precv.overhead_bytes();
    }
    l.analytical_values = cost.per_client * periods;
    l.analytical_bytes = 4.0 * l.analytical_values;
    l.deviation = (static_cast<double>(l.measured_bytes) - l.analytical_bytes) / l.analytical_bytes;
    rep.clients.push_back(l);
  }
  if (rep.clients.empty()) throw std::invalid_argument("reconcile: ledger has no clients");
  return rep;
}

}  // namespace sfl::analytics
