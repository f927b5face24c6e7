#include <doctest.h>

#include <string>

#include <json.hpp>

#include "sfl/artifacts.hpp"
#include "sfl/config.hpp"
#include "sfl/error.hpp"

using namespace sfl;

TEST_CASE("config defaults and the epochs mapping") {
  const ExperimentConfig sl = parse_config(R"({"protocol":"sl","K":3,"epochs":4})");
  CHECK(sl.setup.protocol == Protocol::kSl);
  CHECK(sl.clients == 3);
  CHECK(sl.setup.train.rounds == 4);
  CHECK(sl.setup.train.local_epochs == 1);

  const ExperimentConfig fl = parse_config(R"({"protocol":"fl","K":2,"epochs":3,"rounds":5})");
  CHECK(fl.setup.train.rounds == 5);
  CHECK(fl.setup.train.local_epochs == 3);
  CHECK_THROWS_AS(parse_config(R"({"protocol":"sl","rounds":2})"), ConfigError);
}

TEST_CASE("strict parsing") {
  CHECK_THROWS_AS(parse_config(R"({"protocol":"sl","extra":1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"protocol":"nope"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"K":2})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"protocol":"sl","lr":"fast"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"protocol":"sl","batch":0})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"protocol":"sl","privacy":{"laplace":true,"laplace_epsilon":-1}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"protocol":"sl","reports":{"bins":1}})"), ConfigError);
}

TEST_CASE("prepare builds data, model and partition") {
  const ExperimentConfig c = parse_config(R"({
    "protocol":"sl","K":4,"partition":{"scheme":"label-skew","classes_per_client":1},
    "dataset":{"kind":"blobs","n":400,"n_test":100,"classes":4,"dim":6},
    "model":"mlp-small","cut":1,"seed":5})");
  const PreparedRun run = prepare(c);
  CHECK(run.train.size() == 400);
  CHECK(run.test.size() == 100);
  CHECK(run.setup.plan.client_count() == 4);
  CHECK(run.setup.model.input_shape == Shape{6});
  for (const auto& shard : run.setup.plan.indices) {
    const uint32_t first = run.train.labels[shard.front()];
    for (std::size_t i : shard) CHECK(run.train.labels[i] == first);
  }
  const PreparedRun again = prepare(c);
  CHECK(again.train.features == run.train.features);
  CHECK(again.setup.plan.indices == run.setup.plan.indices);
}

TEST_CASE("partition sizes trim label-skew shards") {
  const char* base = R"({
    "protocol":"sl","K":4,"partition":{"scheme":"label-skew","classes_per_client":1,"sizes":SIZES},
    "dataset":{"kind":"blobs","n":400,"n_test":100,"classes":4,"dim":6},"model":"mlp-small","cut":1})";
  const auto with = [&](const std::string& sizes) {
    std::string text = base;
    text.replace(text.find("SIZES"), 5, sizes);
    return parse_config(text);
  };
  const PreparedRun run = prepare(with("[10,20,30,40]"));
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(run.setup.plan.shard_size(k) == 10 * (k + 1));
    const uint32_t first = run.train.labels[run.setup.plan.indices[k].front()];
    for (std::size_t i : run.setup.plan.indices[k]) CHECK(run.train.labels[i] == first);
  }
  CHECK_THROWS_AS(prepare(with("[10,20]")), ConfigError);
  CHECK_THROWS_AS(prepare(with("[1000,1,1,1]")), ConfigError);
}

TEST_CASE("custom model layers") {
  const ExperimentConfig c = parse_config(R"({
    "protocol":"sl_vertical","K":2,"partition":{"scheme":"vertical"},"merge":"sum",
    "dataset":{"kind":"blobs","n":40,"n_test":10,"classes":2,"dim":4},
    "model":{"layers":[{"kind":"dense","units":5},{"kind":"relu"},{"kind":"dense","units":2},{"kind":"softmax-xent-head"}]}})");
  const PreparedRun run = prepare(c);
  CHECK(run.setup.model.layers.size() == 4);
  CHECK(run.setup.merge == MergeMode::kSum);
  CHECK(run.setup.plan.features.size() == 2);
  CHECK_THROWS_AS(prepare(parse_config(R"({"protocol":"sl","partition":{"scheme":"label-skew","classes_per_client":9},
    "K":2,"dataset":{"classes":4}})")), ConfigError);
}

TEST_CASE("shipped schema agrees with the parser on every key") {
  const auto schema = nlohmann::json::parse(read_text(SFL_SOURCE_DIR "/docs/config.schema.json"));
  std::size_t checked = 0;
  const auto& top = schema["properties"];
  for (const auto& [key, prop] : top.items()) {
    if (key == "protocol") continue;
    nlohmann::json cfg{{"protocol", prop.contains("properties") ? "sl_vertical" : "sl"}};
    if (prop.contains("default")) {
      cfg[key] = prop["default"];
    } else if (prop.contains("properties")) {
      cfg[key] = nlohmann::json::object();
      for (const auto& [sub, sp] : prop["properties"].items())
        if (sp.contains("default")) cfg[key][sub] = sp["default"];
    } else {
      continue;
    }
    CAPTURE(cfg.dump());
    try {
      parse_config(cfg.dump());
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("unknown") == std::string::npos);
    }
    ++checked;
  }
  CHECK(checked >= 15);
}
