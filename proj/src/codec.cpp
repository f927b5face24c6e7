#include "sfl/codec.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "sfl/error.hpp"

namespace sfl::codec {

void put_u32(Bytes& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

uint32_t get_u32(std::span<const uint8_t> in, std::size_t offset) {
  if (offset + 4 > in.size()) throw DecodeError("truncated u32 at offset " + std::to_string(offset));
  return static_cast<uint32_t>(in[offset]) | (static_cast<uint32_t>(in[offset + 1]) << 8) |
         (static_cast<uint32_t>(in[offset + 2]) << 16) |
         (static_cast<uint32_t>(in[offset + 3]) << 24);
}

void put_f32(Bytes& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

float get_f32(std::span<const uint8_t> in, std::size_t offset) {
  return std::bit_cast<float>(get_u32(in, offset));
}

std::size_t tensor_header_size(std::size_t rank) { return 4 + 4 * rank; }

std::size_t tensor_wire_size(const Shape& shape) {
  return tensor_header_size(shape.size()) + 4 * shape_numel(shape);
}

void append_tensor(Bytes& out, const Shape& shape, std::span<const float> values) {
  if (shape_numel(shape) != values.size()) throw ShapeError("append_tensor: shape/value mismatch");
  out.reserve(out.size() + tensor_wire_size(shape));
  put_u32(out, static_cast<uint32_t>(shape.size()));
  for (std::size_t d : shape) {
    if (d > std::numeric_limits<uint32_t>::max()) throw ShapeError("dimension exceeds u32");
    put_u32(out, static_cast<uint32_t>(d));
  }
  for (float v : values) put_f32(out, v);
}

Bytes encode_tensor(const Tensor& t) {
  Bytes out;
  append_tensor(out, t.shape(), t.data());
  return out;
}

Tensor decode_tensor(std::span<const uint8_t> in, std::size_t& offset) {
  const uint32_t rank = get_u32(in, offset);
  if (rank > 8) throw DecodeError("implausible tensor rank " + std::to_string(rank));
  std::size_t pos = offset + 4;
  Shape shape(rank);
  std::size_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(in, pos);
    pos += 4;
    count *= shape[i];
  }
  if (pos + 4 * count > in.size()) {
    throw DecodeError("tensor " + shape_str(shape) + " truncated: need " +
                      std::to_string(pos + 4 * count) + " bytes, have " + std::to_string(in.size()));
  }
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i, pos += 4) values[i] = get_f32(in, pos);
  offset = pos;
  return Tensor(std::move(shape), std::move(values));
}

Tensor decode_tensor(std::span<const uint8_t> in) {
  std::size_t offset = 0;
  Tensor t = decode_tensor(in, offset);
  if (offset != in.size()) {
    throw DecodeError("trailing " + std::to_string(in.size() - offset) + " bytes after tensor");
  }
  return t;
}

Bytes encode_labels(std::span<const uint32_t> labels) {
  std::vector<float> v(labels.begin(), labels.end());
  Bytes out;
  append_tensor(out, {labels.size()}, v);
  return out;
}

std::vector<uint32_t> decode_labels(std::span<const uint8_t> in) {
  const Tensor t = decode_tensor(in);
  if (t.rank() != 1) throw DecodeError("labels must be a rank-1 tensor");
  std::vector<uint32_t> out(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const float v = t[i];
    if (!(v >= 0.0f) || v != std::floor(v) || v > 16777216.0f) {
      throw DecodeError("label value is not a class index");
    }
    out[i] = static_cast<uint32_t>(v);
  }
  return out;
}

}  // namespace sfl::codec
