#include "sfl/model.hpp"

#include "sfl/error.hpp"

namespace sfl {

void validate_model_spec(const ModelSpec& spec) {
  if (spec.layers.size() < 2) throw ConfigError("model needs at least two layers");
  if (spec.layers.back().kind != LayerKind::kSoftmaxXentHead) {
    throw ConfigError("model must end in a softmax-xent-head layer");
  }
  for (std::size_t i = 0; i + 1 < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == LayerKind::kSoftmaxXentHead) {
      throw ConfigError("softmax-xent-head may only be the last layer");
    }
  }
  // Shape-compatibility check; throws ShapeError on mismatch.
  Shape cur = spec.input_shape;
  for (const LayerSpec& l : spec.layers) cur = infer_output_shape(l, cur);
}

ModelSpec model_preset(const std::string& name, const Shape& input_shape, std::size_t classes) {
  ModelSpec spec{name, input_shape, {}};
  if (name == "mlp-small") {
    if (input_shape.size() != 1) spec.layers.push_back(LayerSpec::flatten());
    spec.layers.insert(spec.layers.end(),
                       {LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(32),
                        LayerSpec::relu(), LayerSpec::dense(classes), LayerSpec::head()});
  } else if (name == "lenet-lite") {
    spec.layers = {LayerSpec::conv2d(6, 5),   LayerSpec::relu(),          LayerSpec::maxpool2d(2, 2),
                   LayerSpec::conv2d(16, 5),  LayerSpec::relu(),          LayerSpec::maxpool2d(2, 2),
                   LayerSpec::flatten(),      LayerSpec::dense(64),       LayerSpec::relu(),
                   LayerSpec::dense(classes), LayerSpec::head()};
  } else {
    throw ConfigError("unknown model preset '" + name + "'");
  }
  validate_model_spec(spec);
  return spec;
}

Network build_network(const ModelSpec& spec, uint64_t seed) {
  validate_model_spec(spec);
  Network net(spec.input_shape, spec.layers);
  net.init_xavier(seed);
  return net;
}

SplitModel split(const Network& full, std::size_t cut) {
  if (cut < 1 || cut + 1 >= full.size()) {
    throw ConfigError("cut " + std::to_string(cut) + " is degenerate for a " +
                      std::to_string(full.size()) + "-layer model (need 1 <= cut < " +
                      std::to_string(full.size() - 1) + ")");
  }
  SplitModel m;
  m.client = full.slice(0, cut + 1);
  m.server = full.slice(cut + 1, full.size());
  m.cut = cut;
  m.smashed_shape = m.client.output_shape();
  return m;
}

Network recombine(const SplitModel& model) { return Network::concat(model.client, model.server); }

UShapedModel split_ushaped(const Network& full, std::size_t front_cut, std::size_t back_cut) {
  if (front_cut < 1 || back_cut <= front_cut || back_cut + 1 >= full.size()) {
    throw ConfigError("u-shaped cuts (" + std::to_string(front_cut) + ", " +
                      std::to_string(back_cut) + ") are degenerate for a " +
                      std::to_string(full.size()) + "-layer model");
  }
  UShapedModel m;
  m.front = full.slice(0, front_cut + 1);
  m.middle = full.slice(front_cut + 1, back_cut + 1);
  m.tail = full.slice(back_cut + 1, full.size());
  m.front_cut = front_cut;
  m.back_cut = back_cut;
  return m;
}

Network recombine(const UShapedModel& model) {
  return Network::concat(Network::concat(model.front, model.middle), model.tail);
}

uint64_t layer_flops(const Layer& l) {
  switch (l.spec.kind) {
    case LayerKind::kDense: {
      const uint64_t in = l.in_shape[0], out = l.out_shape[0];
      return 2 * in * out + out;
    }
    case LayerKind::kConv2d: {
      const uint64_t outs = shape_numel(l.out_shape);
      const uint64_t macs_per_out = l.in_shape[0] * l.spec.kernel * l.spec.kernel;
      return 2 * macs_per_out * outs + outs;
    }
    case LayerKind::kRelu:
    case LayerKind::kMaxPool2d:
      return shape_numel(l.out_shape);
    case LayerKind::kFlatten:
    case LayerKind::kSoftmaxXentHead:
      return 0;
  }
  return 0;
}

uint64_t forward_flops(const Network& portion) {
  uint64_t total = 0;
  for (const Layer& l : portion.layers()) total += layer_flops(l);
  return total;
}

PortionStats portion_stats(const Network& portion, std::size_t client_params,
                           std::size_t total_params) {
  PortionStats s;
  s.param_count = portion.param_count();
  s.client_fraction = total_params == 0 ? 0.0
                                        : static_cast<double>(client_params) /
                                              static_cast<double>(total_params);
  s.flops_per_sample = forward_flops(portion);
  return s;
}

PortionStats client_stats(const SplitModel& m) {
  const std::size_t total = m.client.param_count() + m.server.param_count();
  return portion_stats(m.client, m.client.param_count(), total);
}

PortionStats server_stats(const SplitModel& m) {
  const std::size_t total = m.client.param_count() + m.server.param_count();
  return portion_stats(m.server, m.client.param_count(), total);
}

codec::Bytes serialize_params(const Network& portion) {
  const std::vector<float> flat = portion.flat_params();
  codec::Bytes out;
  codec::append_tensor(out, {flat.size()}, flat);
  return out;
}

void deserialize_params(std::span<const uint8_t> bytes, Network& portion) {
  const Tensor t = codec::decode_tensor(bytes);
  if (t.rank() != 1 || t.numel() != portion.param_count()) {
    throw DecodeError("parameter payload " + shape_str(t.shape()) + " does not fit a portion with " +
                      std::to_string(portion.param_count()) + " parameters");
  }
  portion.set_flat_params(t.data());
}

}  // namespace sfl
