#include "sfl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sfl/error.hpp"

namespace sfl {

namespace {

using nlohmann::json;

void allow_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void get(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

std::size_t get_count(const json& j, const char* key, std::size_t dflt, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number_integer() || it->get<long long>() < 0)
    throw ConfigError(where + "." + key + ": expected a non-negative integer");
  return it->get<std::size_t>();
}

template <typename E>
E get_enum(const json& j, const char* key, E dflt, std::optional<E> (*parse)(const std::string&),
           const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_string()) throw ConfigError(where + "." + key + ": expected a string");
  auto v = parse(it->get<std::string>());
  if (!v) throw ConfigError(where + "." + key + ": unknown value '" + it->get<std::string>() + "'");
  return *v;
}

std::optional<PartitionScheme> parse_scheme(const std::string& s) {
  for (auto p : {PartitionScheme::kIid, PartitionScheme::kLabelSkew,
                 PartitionScheme::kQuantitySkew, PartitionScheme::kVertical})
    if (s == scheme_name(p)) return p;
  return std::nullopt;
}

std::optional<privacy::BoundsMode> parse_bounds(const std::string& s) {
  if (s == "per_batch") return privacy::BoundsMode::kPerBatch;
  if (s == "calibration") return privacy::BoundsMode::kCalibration;
  return std::nullopt;
}

std::optional<TransportKind> parse_transport(const std::string& s) {
  if (s == "inproc") return TransportKind::kInProc;
  if (s == "tcp") return TransportKind::kTcp;
  return std::nullopt;
}

LayerSpec parse_layer(const json& j, const std::string& where) {
  allow_keys(j, {"kind", "units", "channels", "kernel", "stride"}, where);
  std::string kind;
  get(j, "kind", kind, where);
  const auto k = parse_layer_kind(kind);
  if (!k) throw ConfigError(where + ".kind: unknown layer '" + kind + "'");
  LayerSpec s;
  s.kind = *k;
  s.units = get_count(j, "units", 0, where);
  s.channels = get_count(j, "channels", 0, where);
  s.kernel = get_count(j, "kernel", 0, where);
  s.stride = get_count(j, "stride", s.kind == LayerKind::kConv2d ? 1 : 0, where);
  return s;
}

void parse_privacy(const json& j, privacy::PrivacyConfig& p) {
  const std::string w = "privacy";
  allow_keys(j, {"dp_sgd", "dp_fl", "laplace", "nopeek", "epsilon", "delta", "clip_norm",
                 "noise_multiplier", "laplace_epsilon", "bounds", "alpha1", "alpha2",
                 "nopeek_max_batch"},
             w);
  get(j, "dp_sgd", p.dp_sgd, w);
  get(j, "dp_fl", p.dp_fl, w);
  get(j, "laplace", p.laplace, w);
  get(j, "nopeek", p.nopeek, w);
  get(j, "epsilon", p.epsilon, w);
  get(j, "delta", p.delta, w);
  get(j, "clip_norm", p.clip_norm, w);
  get(j, "noise_multiplier", p.noise_multiplier, w);
  get(j, "laplace_epsilon", p.laplace_epsilon, w);
  p.bounds = get_enum(j, "bounds", p.bounds, parse_bounds, w);
  get(j, "alpha1", p.alpha1, w);
  get(j, "alpha2", p.alpha2, w);
  p.nopeek_max_batch = get_count(j, "nopeek_max_batch", p.nopeek_max_batch, w);
}

void parse_dataset(const json& j, DatasetConfig& d) {
  const std::string w = "dataset";
  allow_keys(j, {"kind", "n", "n_test", "classes", "dim", "shape", "separation", "seed", "path",
                 "labels_path", "test_path", "test_labels_path", "test_fraction", "limit"},
             w);
  get(j, "kind", d.kind, w);
  if (d.kind != "blobs" && d.kind != "sdsh" && d.kind != "csv" && d.kind != "idx")
    throw ConfigError("dataset.kind: unknown value '" + d.kind + "'");
  d.n = get_count(j, "n", d.n, w);
  d.n_test = get_count(j, "n_test", d.n_test, w);
  d.classes = get_count(j, "classes", d.classes, w);
  d.dim = get_count(j, "dim", d.dim, w);
  get(j, "shape", d.shape, w);
  get(j, "separation", d.separation, w);
  if (j.contains("seed")) d.seed = get_count(j, "seed", 0, w);
  get(j, "path", d.path, w);
  get(j, "labels_path", d.labels_path, w);
  get(j, "test_path", d.test_path, w);
  get(j, "test_labels_path", d.test_labels_path, w);
  get(j, "test_fraction", d.test_fraction, w);
  d.limit = get_count(j, "limit", d.limit, w);
  if (d.kind == "blobs") {
    if (d.n == 0 || d.n_test == 0) throw ConfigError("dataset: n and n_test must be positive");
    if (d.classes < 2) throw ConfigError("dataset.classes must be >= 2");
    if (!(d.separation >= 0)) throw ConfigError("dataset.separation must be >= 0");
  } else if (d.path.empty()) {
    throw ConfigError("dataset.path is required for kind '" + d.kind + "'");
  }
  if (d.kind == "idx" && d.labels_path.empty())
    throw ConfigError("dataset.labels_path is required for idx");
  if (!(d.test_fraction > 0 && d.test_fraction < 1))
    throw ConfigError("dataset.test_fraction must lie in (0,1)");
}

bool fed_protocol(Protocol p) {
  return p == Protocol::kFl || p == Protocol::kSflV1 || p == Protocol::kSflV2;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const std::string w = "config";
  allow_keys(j, {"protocol", "model", "cut", "back_cut", "K", "partition", "dataset", "epochs",
                 "rounds", "batch", "lr", "seed", "deterministic", "privacy", "transport",
                 "relay", "sync_interval", "merge", "output_dir", "reports"},
             w);
  ExperimentConfig c;
  ExperimentSetup& s = c.setup;
  if (!j.contains("protocol")) throw ConfigError("config.protocol is required");
  s.protocol = get_enum(j, "protocol", s.protocol, parse_protocol, w);

  c.model_preset = "mlp-small";
  if (auto it = j.find("model"); it != j.end()) {
    if (it->is_string()) {
      c.model_preset = it->get<std::string>();
    } else {
      allow_keys(*it, {"name", "layers"}, "model");
      get(*it, "name", c.model_preset, "model");
      if (!it->contains("layers") || !(*it)["layers"].is_array())
        throw ConfigError("model.layers: expected an array");
      std::vector<LayerSpec> layers;
      for (std::size_t i = 0; i < (*it)["layers"].size(); ++i)
        layers.push_back(parse_layer((*it)["layers"][i], "model.layers[" + std::to_string(i) + "]"));
      c.custom_layers = std::move(layers);
    }
  }
  s.cut = get_count(j, "cut", s.cut, w);
  s.back_cut = get_count(j, "back_cut", s.back_cut, w);
  c.clients = get_count(j, "K", c.clients, w);
  if (c.clients == 0) throw ConfigError("config.K must be >= 1");

  if (auto it = j.find("partition"); it != j.end()) {
    allow_keys(*it, {"scheme", "classes_per_client", "sizes"}, "partition");
    c.scheme = get_enum(*it, "scheme", c.scheme, parse_scheme, "partition");
    c.classes_per_client = get_count(*it, "classes_per_client", c.classes_per_client, "partition");
    get(*it, "sizes", c.quantity_sizes, "partition");
  }
  if (s.protocol == Protocol::kSlVertical) c.scheme = PartitionScheme::kVertical;
  if (auto it = j.find("dataset"); it != j.end()) parse_dataset(*it, c.data);

  // One metrics row per round. Sequential protocols count rounds in epochs;
  // federated ones run `epochs` local passes per round.
  const std::size_t epochs = get_count(j, "epochs", 1, w);
  if (fed_protocol(s.protocol)) {
    s.train.local_epochs = epochs;
    s.train.rounds = get_count(j, "rounds", 1, w);
  } else {
    if (j.contains("rounds"))
      throw ConfigError("config.rounds applies to fl/sfl only; use epochs");
    s.train.local_epochs = 1;
    s.train.rounds = epochs;
  }
  s.train.batch = get_count(j, "batch", s.train.batch, w);
  get(j, "lr", s.train.lr, w);
  s.train.seed = get_count(j, "seed", s.train.seed, w);
  get(j, "deterministic", s.train.deterministic, w);
  s.train.sync_interval = get_count(j, "sync_interval", s.train.sync_interval, w);
  s.relay = get_enum(j, "relay", s.relay, parse_relay, w);
  s.merge = get_enum(j, "merge", s.merge, parse_merge, w);
  s.train.validate();

  if (auto it = j.find("privacy"); it != j.end()) parse_privacy(*it, s.privacy);
  s.privacy.validate();

  if (auto it = j.find("transport"); it != j.end()) {
    allow_keys(*it, {"kind", "host", "port"}, "transport");
    s.transport = get_enum(*it, "kind", s.transport, parse_transport, "transport");
    get(*it, "host", c.host, "transport");
    const std::size_t port = get_count(*it, "port", 0, "transport");
    if (port > 65535) throw ConfigError("transport.port out of range");
    c.port = static_cast<uint16_t>(port);
  }
  get(j, "output_dir", c.output_dir, w);
  if (auto it = j.find("reports"); it != j.end()) {
    allow_keys(*it, {"leakage", "bins", "save_model", "save_leakage", "reconcile"}, "reports");
    get(*it, "leakage", c.reports.leakage, "reports");
    c.reports.bins = get_count(*it, "bins", c.reports.bins, "reports");
    get(*it, "save_model", c.reports.save_model, "reports");
    get(*it, "save_leakage", c.reports.save_leakage, "reports");
    get(*it, "reconcile", c.reports.reconcile, "reports");
    if (c.reports.bins < 2) throw ConfigError("reports.bins must be >= 2");
  }
  s.leakage_report = c.reports.leakage;
  s.leakage_bins = c.reports.bins;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {

std::pair<Dataset, Dataset> split_holdout(const Dataset& all, double test_fraction) {
  const std::size_t n_test = std::max<std::size_t>(
      1, static_cast<std::size_t>(test_fraction * static_cast<double>(all.size())));
  if (n_test >= all.size()) throw DataError("dataset too small to hold out a test split");
  std::vector<std::size_t> tr(all.size() - n_test), te(n_test);
  for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = i;
  for (std::size_t i = 0; i < n_test; ++i) te[i] = tr.size() + i;
  return {all.subset(tr), all.subset(te)};
}

Dataset reshape_samples(Dataset d, const Shape& shape) {
  if (shape.empty()) return d;
  if (shape_numel(shape) != d.sample_size())
    throw ConfigError("dataset.shape " + shape_str(shape) + " does not hold " +
                      std::to_string(d.sample_size()) + " features");
  d.sample_shape = shape;
  return d;
}

Dataset load_one(const DatasetConfig& d, const std::string& path, const std::string& labels) {
  if (d.kind == "sdsh") return load_container(path);
  if (d.kind == "csv") return load_csv(path);
  return load_idx(path, labels, d.limit);
}

}  // namespace

PreparedRun prepare(const ExperimentConfig& c) {
  PreparedRun run;
  run.setup = c.setup;
  const DatasetConfig& d = c.data;
  const uint64_t seed = c.setup.train.seed;
  if (d.kind == "blobs") {
    const Shape shape = d.shape.empty() ? Shape{d.dim} : d.shape;
    const Dataset all = synth_blobs(d.n + d.n_test, d.classes, shape, d.separation,
                                    d.seed ? *d.seed : derive_seed(seed, {stream::kData}));
    std::tie(run.train, run.test) =
        split_holdout(all, static_cast<double>(d.n_test) / static_cast<double>(d.n + d.n_test));
  } else {
    Dataset train = reshape_samples(load_one(d, d.path, d.labels_path), d.shape);
    if (!d.test_path.empty()) {
      run.train = std::move(train);
      run.test = reshape_samples(load_one(d, d.test_path, d.test_labels_path), d.shape);
    } else {
      std::tie(run.train, run.test) = split_holdout(train, d.test_fraction);
    }
    run.test.classes = run.train.classes = std::max(run.train.classes, run.test.classes);
  }

  ExperimentSetup& s = run.setup;
  const bool vertical = s.protocol == Protocol::kSlVertical;
  const Shape input = vertical ? Shape{run.train.sample_size()} : run.train.sample_shape;
  if (c.custom_layers) {
    s.model = ModelSpec{c.model_preset, input, *c.custom_layers};
    try {
      validate_model_spec(s.model);
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  } else {
    s.model = model_preset(c.model_preset, input, run.train.classes);
  }

  const uint64_t pseed = derive_seed(seed, {stream::kPartition});
  const std::size_t n = run.train.size(), K = c.clients;
  if (K > n) throw ConfigError("more clients than training samples");
  try {
    switch (vertical ? PartitionScheme::kVertical : c.scheme) {
      case PartitionScheme::kIid:
        s.plan = iid_partition(n, K, pseed);
        break;
      case PartitionScheme::kLabelSkew:
        s.plan = label_skew_partition(run.train.labels, run.train.classes, K, c.classes_per_client,
                                      pseed);
        break;
      case PartitionScheme::kQuantitySkew:
        if (c.quantity_sizes.size() != K)
          throw ConfigError("partition.sizes needs one entry per client");
        s.plan = quantity_skew_partition(n, c.quantity_sizes, pseed);
        break;
      case PartitionScheme::kVertical:
        s.plan = vertical_partition(n, run.train.sample_size(), K, pseed);
        break;
    }
    if (!c.quantity_sizes.empty() && s.plan.scheme != PartitionScheme::kQuantitySkew) {
      if (c.quantity_sizes.size() != K)
        throw ConfigError("partition.sizes needs one entry per client");
      s.plan = limit_shard_sizes(std::move(s.plan), c.quantity_sizes, pseed);
    }
  } catch (const DataError& e) {
    throw ConfigError(std::string("partition: ") + e.what());
  }
  return run;
}

}  // namespace sfl
