#include "sfl/network.hpp"

#include <atomic>
#include <cmath>

#include "sfl/error.hpp"
#include "sfl/kernels.hpp"
#include "sfl/rng.hpp"

namespace sfl {

namespace {

std::atomic<uint64_t> g_next_network_id{1};

Shape with_batch(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void require_rank(const LayerSpec& spec, const Shape& in, std::size_t rank) {
  if (in.size() != rank) {
    throw ShapeError(std::string(layer_kind_name(spec.kind)) + " expects rank-" +
                     std::to_string(rank) + " samples, got " + shape_str(in));
  }
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kSoftmaxXentHead: return "softmax-xent-head";
  }
  return "?";
}

std::optional<LayerKind> parse_layer_kind(const std::string& name) {
  for (LayerKind k : {LayerKind::kDense, LayerKind::kConv2d, LayerKind::kRelu,
                      LayerKind::kMaxPool2d, LayerKind::kFlatten, LayerKind::kSoftmaxXentHead}) {
    if (name == layer_kind_name(k)) return k;
  }
  return std::nullopt;
}

Shape infer_output_shape(const LayerSpec& spec, const Shape& in) {
  for (std::size_t d : in) {
    if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(in));
  }
  switch (spec.kind) {
    case LayerKind::kDense:
      require_rank(spec, in, 1);
      if (spec.units == 0) throw ShapeError("dense layer needs units >= 1");
      return {spec.units};
    case LayerKind::kConv2d:
      require_rank(spec, in, 3);
      if (spec.kernel < 1 || spec.channels < 1) throw ShapeError("conv2d needs kernel, channels >= 1");
      if (spec.kernel > in[1] || spec.kernel > in[2]) {
        throw ShapeError("conv2d kernel larger than input " + shape_str(in));
      }
      return {spec.channels, in[1] - spec.kernel + 1, in[2] - spec.kernel + 1};
    case LayerKind::kMaxPool2d:
      require_rank(spec, in, 3);
      if (spec.kernel < 1 || spec.stride < 1) throw ShapeError("maxpool2d needs kernel, stride >= 1");
      if (spec.kernel > in[1] || spec.kernel > in[2]) {
        throw ShapeError("maxpool2d kernel larger than input " + shape_str(in));
      }
      return {in[0], (in[1] - spec.kernel) / spec.stride + 1, (in[2] - spec.kernel) / spec.stride + 1};
    case LayerKind::kFlatten:
      return {shape_numel(in)};
    case LayerKind::kRelu:
      return in;
    case LayerKind::kSoftmaxXentHead:
      require_rank(spec, in, 1);
      return in;
  }
  throw ShapeError("unknown layer kind");
}

std::size_t Gradients::param_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) n += weight[i].numel() + bias[i].numel();
  return n;
}

std::vector<float> Gradients::flat() const {
  std::vector<float> out;
  out.reserve(param_count());
  for (std::size_t i = 0; i < weight.size(); ++i) {
    out.insert(out.end(), weight[i].vec().begin(), weight[i].vec().end());
    out.insert(out.end(), bias[i].vec().begin(), bias[i].vec().end());
  }
  return out;
}

Gradients Gradients::from_flat(const Network& like, std::span<const float> values) {
  if (values.size() != like.param_count()) {
    throw ShapeError("gradient vector has " + std::to_string(values.size()) +
                     " values, network has " + std::to_string(like.param_count()));
  }
  Gradients g;
  std::size_t off = 0;
  for (const Layer& l : like.layers()) {
    auto take = [&](const Tensor& ref) {
      if (ref.empty()) return Tensor({0});
      std::vector<float> v(values.begin() + static_cast<std::ptrdiff_t>(off),
                           values.begin() + static_cast<std::ptrdiff_t>(off + ref.numel()));
      off += ref.numel();
      return Tensor(ref.shape(), std::move(v));
    };
    g.weight.push_back(take(l.weight));
    g.bias.push_back(take(l.bias));
  }
  return g;
}

void Gradients::accumulate(const Gradients& other) {
  if (other.weight.size() != weight.size()) throw ShapeError("gradient layer count mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    if (weight[i].shape() != other.weight[i].shape() || bias[i].shape() != other.bias[i].shape()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(i));
    }
    for (std::size_t j = 0; j < weight[i].numel(); ++j) weight[i][j] += other.weight[i][j];
    for (std::size_t j = 0; j < bias[i].numel(); ++j) bias[i][j] += other.bias[i][j];
  }
}

void Gradients::scale(float factor) {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    for (float& v : weight[i].data()) v *= factor;
    for (float& v : bias[i].data()) v *= factor;
  }
}

Network::Network(Shape input_shape, const std::vector<LayerSpec>& specs)
    : input_shape_(std::move(input_shape)), id_(g_next_network_id.fetch_add(1)) {
  Shape cur = input_shape_;
  for (const LayerSpec& spec : specs) {
    Layer layer;
    layer.spec = spec;
    layer.in_shape = cur;
    layer.out_shape = infer_output_shape(spec, cur);
    if (spec.kind == LayerKind::kDense) {
      layer.weight = Tensor({spec.units, cur[0]});
      layer.bias = Tensor({spec.units});
    } else if (spec.kind == LayerKind::kConv2d) {
      layer.weight = Tensor({spec.channels, cur[0], spec.kernel, spec.kernel});
      layer.bias = Tensor({spec.channels});
    }
    cur = layer.out_shape;
    layers_.push_back(std::move(layer));
  }
}

Network::Network(const Network& other)
    : input_shape_(other.input_shape_),
      layers_(other.layers_),
      id_(g_next_network_id.fetch_add(1)) {}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    input_shape_ = other.input_shape_;
    layers_ = other.layers_;
    id_ = g_next_network_id.fetch_add(1);
    version_ = 0;
  }
  return *this;
}

void Network::touch() {
  ++version_;
  if (id_ == 0) id_ = g_next_network_id.fetch_add(1);
}

void Network::init_xavier(uint64_t seed, std::size_t first_layer_index) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = layers_[i];
    if (!l.has_params()) continue;
    std::size_t fan_in = 0, fan_out = 0;
    if (l.spec.kind == LayerKind::kDense) {
      fan_in = l.weight.dim(1);
      fan_out = l.weight.dim(0);
    } else {
      const std::size_t k2 = l.spec.kernel * l.spec.kernel;
      fan_in = l.weight.dim(1) * k2;
      fan_out = l.weight.dim(0) * k2;
    }
    const float limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
    Rng rng = make_rng(seed, {stream::kInit, first_layer_index + i});
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (float& w : l.weight.data()) w = dist(rng);
    std::fill(l.bias.data().begin(), l.bias.data().end(), 0.0f);
  }
  touch();
}

Shape Network::output_shape() const {
  return layers_.empty() ? input_shape_ : layers_.back().out_shape;
}

std::vector<LayerSpec> Network::specs() const {
  std::vector<LayerSpec> out;
  for (const Layer& l : layers_) out.push_back(l.spec);
  return out;
}

Tensor Network::forward(const Tensor& x, Tape* tape) const {
  if (x.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), x.shape().begin() + 1)) {
    throw ShapeError("network input expects [batch]" + shape_str(input_shape_) + ", got " +
                     shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  if (tape) {
    *tape = Tape{};
    tape->network_id = id_;
    tape->version = version_;
    tape->argmax.resize(layers_.size());
  }
  Tensor cur = x;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    Tensor out(with_batch(batch, l.out_shape));
    switch (l.spec.kind) {
      case LayerKind::kDense:
        kernels::dense_forward({batch, l.in_shape[0], l.out_shape[0]}, cur.data(),
                               l.weight.data(), l.bias.data(), out.data());
        break;
      case LayerKind::kConv2d:
        kernels::conv2d_forward({batch, l.in_shape[0], l.in_shape[1], l.in_shape[2],
                                 l.spec.channels, l.spec.kernel},
                                cur.data(), l.weight.data(), l.bias.data(), out.data());
        break;
      case LayerKind::kRelu:
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = cur[i] > 0.0f ? cur[i] : 0.0f;
        break;
      case LayerKind::kMaxPool2d: {
        std::vector<uint32_t> arg(out.numel());
        kernels::maxpool_forward({batch, l.in_shape[0], l.in_shape[1], l.in_shape[2],
                                  l.spec.kernel, l.spec.stride},
                                 cur.data(), out.data(), arg);
        if (tape) tape->argmax[li] = std::move(arg);
        break;
      }
      case LayerKind::kFlatten:
      case LayerKind::kSoftmaxXentHead:
        out = cur.reshaped(with_batch(batch, l.out_shape));
        break;
    }
    require_finite(out, layer_kind_name(l.spec.kind));
    if (tape) tape->inputs.push_back(std::move(cur));
    cur = std::move(out);
  }
  if (tape) tape->recorded = true;
  return cur;
}

BackwardResult Network::backward(const Tape& tape, const Tensor& grad_out,
                                 bool need_input_grad) const {
  if (!tape.recorded || tape.inputs.size() != layers_.size()) {
    throw TapeError("backward called without a recorded forward pass");
  }
  if (tape.network_id != id_ || tape.version != version_) {
    throw TapeError("tape is stale: parameters changed since the forward pass");
  }
  const std::size_t batch = layers_.empty() ? grad_out.dim(0) : tape.inputs[0].dim(0);
  if (grad_out.shape() != with_batch(batch, output_shape())) {
    throw ShapeError("upstream gradient " + shape_str(grad_out.shape()) + " does not match output " +
                     shape_str(with_batch(batch, output_shape())));
  }
  BackwardResult res;
  res.grads.weight.resize(layers_.size());
  res.grads.bias.resize(layers_.size());
  Tensor g = grad_out;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& l = layers_[li];
    const Tensor& in = tape.inputs[li];
    const bool want_gx = li > 0 || need_input_grad;
    Tensor gx(in.shape());
    std::span<float> gx_span = want_gx ? gx.data() : std::span<float>{};
    switch (l.spec.kind) {
      case LayerKind::kDense: {
        Tensor gw(l.weight.shape()), gb(l.bias.shape());
        kernels::dense_backward({batch, l.in_shape[0], l.out_shape[0]}, in.data(),
                                l.weight.data(), g.data(), gw.data(), gb.data(), gx_span);
        res.grads.weight[li] = std::move(gw);
        res.grads.bias[li] = std::move(gb);
        break;
      }
      case LayerKind::kConv2d: {
        Tensor gw(l.weight.shape()), gb(l.bias.shape());
        kernels::conv2d_backward({batch, l.in_shape[0], l.in_shape[1], l.in_shape[2],
                                  l.spec.channels, l.spec.kernel},
                                 in.data(), l.weight.data(), g.data(), gw.data(), gb.data(),
                                 gx_span);
        res.grads.weight[li] = std::move(gw);
        res.grads.bias[li] = std::move(gb);
        break;
      }
      case LayerKind::kRelu:
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = in[i] > 0.0f ? g[i] : 0.0f;
        break;
      case LayerKind::kMaxPool2d:
        kernels::maxpool_backward({batch, l.in_shape[0], l.in_shape[1], l.in_shape[2],
                                   l.spec.kernel, l.spec.stride},
                                  g.data(), tape.argmax[li], gx.data());
        break;
      case LayerKind::kFlatten:
      case LayerKind::kSoftmaxXentHead:
        gx = g.reshaped(in.shape());
        break;
    }
    if (!l.has_params()) {
      res.grads.weight[li] = Tensor({0});
      res.grads.bias[li] = Tensor({0});
    }
    g = std::move(gx);
  }
  if (need_input_grad) {
    require_finite(g, "input gradient");
    res.input_grad = std::move(g);
  }
  return res;
}

void Network::sgd_step(const Gradients& grads, float lr) {
  if (grads.weight.size() != layers_.size() || grads.bias.size() != layers_.size()) {
    throw ShapeError("gradient layer count does not match network");
  }
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    Layer& l = layers_[li];
    if (!l.has_params()) continue;
    if (grads.weight[li].shape() != l.weight.shape() || grads.bias[li].shape() != l.bias.shape()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(li));
    }
    for (std::size_t i = 0; i < l.weight.numel(); ++i) l.weight[i] -= lr * grads.weight[li][i];
    for (std::size_t i = 0; i < l.bias.numel(); ++i) l.bias[i] -= lr * grads.bias[li][i];
    require_finite(l.weight, "weights after sgd step");
    require_finite(l.bias, "biases after sgd step");
  }
  touch();
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.param_count();
  return n;
}

std::vector<float> Network::flat_params() const {
  std::vector<float> out;
  out.reserve(param_count());
  for (const Layer& l : layers_) {
    out.insert(out.end(), l.weight.vec().begin(), l.weight.vec().end());
    out.insert(out.end(), l.bias.vec().begin(), l.bias.vec().end());
  }
  return out;
}

void Network::set_flat_params(std::span<const float> values) {
  if (values.size() != param_count()) {
    throw ShapeError("parameter vector has " + std::to_string(values.size()) +
                     " values, network expects " + std::to_string(param_count()));
  }
  std::size_t off = 0;
  for (Layer& l : layers_) {
    for (float& w : l.weight.data()) w = values[off++];
    for (float& b : l.bias.data()) b = values[off++];
  }
  touch();
}

Network Network::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > layers_.size()) throw ShapeError("layer slice out of range");
  Network out;
  out.id_ = g_next_network_id.fetch_add(1);
  out.input_shape_ = begin == 0 ? input_shape_ : layers_[begin - 1].out_shape;
  out.layers_.assign(layers_.begin() + static_cast<std::ptrdiff_t>(begin),
                     layers_.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

Network Network::concat(const Network& front, const Network& back) {
  if (front.output_shape() != back.input_shape()) {
    throw ShapeError("cannot join " + shape_str(front.output_shape()) + " to " +
                     shape_str(back.input_shape()));
  }
  Network out;
  out.id_ = g_next_network_id.fetch_add(1);
  out.input_shape_ = front.input_shape_;
  out.layers_ = front.layers_;
  out.layers_.insert(out.layers_.end(), back.layers_.begin(), back.layers_.end());
  return out;
}

void sgd_step(std::span<float> params, std::span<const float> grads, float lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

}  // namespace sfl
