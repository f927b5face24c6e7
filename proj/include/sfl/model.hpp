#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfl/codec.hpp"
#include "sfl/network.hpp"

namespace sfl {

// Full architecture before splitting. `layers` must end in a
// softmax-xent-head and contain at least two layers.
struct ModelSpec {
  std::string name;
  Shape input_shape;
  std::vector<LayerSpec> layers;
};

void validate_model_spec(const ModelSpec& spec);

// Presets sized by the dataset:
//   "mlp-small"  dense(64) relu dense(32) relu dense(C) head
//   "lenet-lite" conv(6,5) relu pool(2,2) conv(16,5) relu pool(2,2) flatten
//                dense(64) relu dense(C) head
// Throws ConfigError for an unknown name.
ModelSpec model_preset(const std::string& name, const Shape& input_shape, std::size_t classes);

Network build_network(const ModelSpec& spec, uint64_t seed);

// Client portion holds layers [0, cut], the server portion (cut, end).
struct SplitModel {
  Network client;
  Network server;
  std::size_t cut = 0;
  Shape smashed_shape;
};

// Requires 1 <= cut and a non-empty server portion.
SplitModel split(const Network& full, std::size_t cut);
Network recombine(const SplitModel& model);

// Three-way split for the label-private configuration: the client keeps the
// front [0, front_cut] and the tail (back_cut, end), the server the middle.
struct UShapedModel {
  Network front;
  Network middle;
  Network tail;
  std::size_t front_cut = 0;
  std::size_t back_cut = 0;
};

UShapedModel split_ushaped(const Network& full, std::size_t front_cut, std::size_t back_cut);
Network recombine(const UShapedModel& model);

struct PortionStats {
  std::size_t param_count = 0;
  double client_fraction = 0.0;  // client params / total params
  uint64_t flops_per_sample = 0;
};

// Forward FLOPs for one sample. Dense and conv count 2 per multiply-accumulate
// plus one per bias add; relu and maxpool count one per output element;
// flatten and the head are free.
uint64_t forward_flops(const Network& portion);
uint64_t layer_flops(const Layer& layer);

// `client_fraction` is relative to `total_params` (the unsplit model).
PortionStats portion_stats(const Network& portion, std::size_t client_params,
                           std::size_t total_params);
PortionStats client_stats(const SplitModel& model);
PortionStats server_stats(const SplitModel& model);

// Parameters travel as one rank-1 tensor holding every weight and bias in
// layer order: 8 header bytes plus 4 per parameter.
codec::Bytes serialize_params(const Network& portion);
void deserialize_params(std::span<const uint8_t> bytes, Network& portion);

}  // namespace sfl
