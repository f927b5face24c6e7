#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

enum class LayerKind { kDense, kConv2d, kRelu, kMaxPool2d, kFlatten, kSoftmaxXentHead };

const char* layer_kind_name(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t units = 0;     // dense: output width
  std::size_t channels = 0;  // conv2d: output channels
  std::size_t kernel = 0;    // conv2d / maxpool2d: filter size f
  std::size_t stride = 0;    // maxpool2d: stride s (conv2d is always stride 1)

  static LayerSpec dense(std::size_t units) { return {LayerKind::kDense, units, 0, 0, 0}; }
  static LayerSpec conv2d(std::size_t channels, std::size_t kernel) {
    return {LayerKind::kConv2d, 0, channels, kernel, 1};
  }
  static LayerSpec relu() { return {LayerKind::kRelu, 0, 0, 0, 0}; }
  static LayerSpec maxpool2d(std::size_t kernel, std::size_t stride) {
    return {LayerKind::kMaxPool2d, 0, 0, kernel, stride};
  }
  static LayerSpec flatten() { return {LayerKind::kFlatten, 0, 0, 0, 0}; }
  static LayerSpec head() { return {LayerKind::kSoftmaxXentHead, 0, 0, 0, 0}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Output sample shape (no batch axis) of `spec` applied to `in`. Throws
// ShapeError when the layer cannot consume that shape.
Shape infer_output_shape(const LayerSpec& spec, const Shape& in);

struct Layer {
  LayerSpec spec;
  Shape in_shape;   // per-sample
  Shape out_shape;  // per-sample
  Tensor weight;    // dense [out,in]; conv [out_ch,in_ch,k,k]; empty otherwise
  Tensor bias;      // dense [out]; conv [out_ch]; empty otherwise

  bool has_params() const { return !weight.empty(); }
  std::size_t param_count() const { return weight.numel() + bias.numel(); }
};

// Recording of one forward pass. Valid for backward only against the network
// that produced it and only until that network's parameters change.
struct Tape {
  uint64_t network_id = 0;
  uint64_t version = 0;
  std::vector<Tensor> inputs;                  // input of every layer
  std::vector<std::vector<uint32_t>> argmax;   // maxpool selections per layer
  bool recorded = false;
};

// Parameter gradients, one (weight, bias) pair per layer; parameter-free
// layers carry empty tensors.
struct Gradients {
  std::vector<Tensor> weight;
  std::vector<Tensor> bias;

  std::size_t param_count() const;
  std::vector<float> flat() const;
  static Gradients from_flat(const class Network& like, std::span<const float> values);
  // Elementwise this += other.
  void accumulate(const Gradients& other);
  void scale(float factor);
};

struct BackwardResult {
  Gradients grads;
  Tensor input_grad;  // empty when not requested
};

// A sequential stack of layers. Parameters are binary32; forward values are
// checked for NaN/Inf after every layer.
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, const std::vector<LayerSpec>& specs);
  // Copies get a fresh identity so tapes never validate against a copy.
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  // Xavier-uniform weights, zero biases. Each layer draws from its own stream
  // keyed by (seed, first_layer_index + position) so a slice of a larger
  // model initializes exactly like the corresponding layers of the whole.
  void init_xavier(uint64_t seed, std::size_t first_layer_index = 0);

  const Shape& input_shape() const { return input_shape_; }
  Shape output_shape() const;
  std::size_t size() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<LayerSpec> specs() const;

  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;
  BackwardResult backward(const Tape& tape, const Tensor& grad_out,
                          bool need_input_grad = true) const;

  // p <- p - lr * g for every parameter.
  void sgd_step(const Gradients& grads, float lr);

  std::size_t param_count() const;
  std::vector<float> flat_params() const;
  void set_flat_params(std::span<const float> values);

  // Layers [begin, end) as an independent network with copied parameters.
  Network slice(std::size_t begin, std::size_t end) const;
  static Network concat(const Network& front, const Network& back);

  uint64_t version() const { return version_; }

 private:
  void touch();

  Shape input_shape_;
  std::vector<Layer> layers_;
  uint64_t id_ = 0;
  uint64_t version_ = 0;
};

// p <- p - lr * g over flat vectors of equal length.
void sgd_step(std::span<float> params, std::span<const float> grads, float lr);

}  // namespace sfl
