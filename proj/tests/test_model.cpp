#include <doctest.h>

#include "helpers.hpp"
#include "sfl/error.hpp"
#include "sfl/model.hpp"

using namespace sfl;

TEST_CASE("split portions compose to the full forward pass") {
  std::mt19937_64 rng(1);
  const ModelSpec spec = model_preset("mlp-small", {12}, 3);
  const Network full = build_network(spec, 5);
  const Tensor x = testutil::random_tensor({7, 12}, rng);
  const Tensor y = full.forward(x);
  for (std::size_t cut = 1; cut + 1 < full.size(); ++cut) {
    const SplitModel s = split(full, cut);
    CHECK(s.client.size() == cut + 1);
    CHECK(s.server.forward(s.client.forward(x)) == y);
    CHECK(s.smashed_shape == s.client.output_shape());
    const Network back = recombine(s);
    CHECK(back.flat_params() == full.flat_params());
    CHECK(back.forward(x) == y);
  }
}

TEST_CASE("degenerate cuts are rejected") {
  const Network full = build_network(model_preset("mlp-small", {4}, 2), 1);
  CHECK_THROWS_AS(split(full, 0), ConfigError);
  CHECK_THROWS_AS(split(full, full.size() - 1), ConfigError);
  CHECK_THROWS_AS(split(full, full.size() + 3), ConfigError);
  CHECK_THROWS(split_ushaped(full, 3, 2));
}

TEST_CASE("u-shaped split keeps the tail on the client") {
  std::mt19937_64 rng(2);
  const Network full = build_network(model_preset("mlp-small", {6}, 3), 3);
  const UShapedModel u = split_ushaped(full, 1, 3);
  CHECK(u.front.size() == 2);
  CHECK(u.middle.size() == 2);
  CHECK(u.tail.size() == 2);
  CHECK(u.tail.layers().back().spec.kind == LayerKind::kSoftmaxXentHead);
  const Tensor x = testutil::random_tensor({3, 6}, rng);
  CHECK(u.tail.forward(u.middle.forward(u.front.forward(x))) == full.forward(x));
  CHECK(recombine(u).flat_params() == full.flat_params());
}

TEST_CASE("presets") {
  const auto mlp = model_preset("mlp-small", {20}, 5);
  CHECK(mlp.layers.size() == 6);
  CHECK(mlp.layers[4] == LayerSpec::dense(5));
  CHECK(model_preset("mlp-small", {1, 4, 4}, 2).layers.front().kind == LayerKind::kFlatten);

  const Network lenet = build_network(model_preset("lenet-lite", {1, 28, 28}, 10), 1);
  CHECK(lenet.output_shape() == Shape{10});
  CHECK(split(lenet, 5).smashed_shape == Shape{16, 4, 4});
  CHECK_THROWS_AS(model_preset("resnet", {4}, 2), ConfigError);
  CHECK_THROWS(build_network(model_preset("lenet-lite", {1, 6, 6}, 2), 1));
}

TEST_CASE("forward flop counts by hand") {
  Network mlp({10}, {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(3), LayerSpec::head()});
  // 2*10*8 + 8, then 8, then 2*8*3 + 3, head free.
  CHECK(layer_flops(mlp.layers()[0]) == 168);
  CHECK(layer_flops(mlp.layers()[1]) == 8);
  CHECK(forward_flops(mlp) == 168 + 8 + 51);

  Network cnn({1, 6, 6}, {LayerSpec::conv2d(2, 3), LayerSpec::maxpool2d(2, 2), LayerSpec::flatten(),
                          LayerSpec::dense(2), LayerSpec::head()});
  // conv: 32 outputs, each 9 MACs + bias -> 2*9*32 + 32; pool: 8 outputs.
  CHECK(layer_flops(cnn.layers()[0]) == 608);
  CHECK(layer_flops(cnn.layers()[1]) == 8);
  CHECK(layer_flops(cnn.layers()[2]) == 0);
  CHECK(forward_flops(cnn) == 608 + 8 + 2 * 8 * 2 + 2);
}

TEST_CASE("portion statistics") {
  const Network full = build_network(model_preset("mlp-small", {10}, 3), 1);
  const SplitModel s = split(full, 1);
  const auto c = client_stats(s), v = server_stats(s);
  CHECK(c.param_count == 10 * 64 + 64);
  CHECK(c.param_count + v.param_count == full.param_count());
  CHECK(c.client_fraction == doctest::Approx(704.0 / static_cast<double>(full.param_count())));
  CHECK(c.flops_per_sample + v.flops_per_sample == forward_flops(full));
}

TEST_CASE("parameter payload layout and round trip") {
  const Network full = build_network(model_preset("mlp-small", {5}, 2), 4);
  const auto bytes = serialize_params(full);
  CHECK(bytes.size() == 8 + 4 * full.param_count());
  CHECK(codec::get_u32(bytes, 0) == 1);
  CHECK(codec::get_u32(bytes, 4) == full.param_count());
  Network other = build_network(model_preset("mlp-small", {5}, 2), 99);
  deserialize_params(bytes, other);
  CHECK(other.flat_params() == full.flat_params());
  Network small = build_network(model_preset("mlp-small", {4}, 2), 1);
  CHECK_THROWS_AS(deserialize_params(bytes, small), DecodeError);
}
