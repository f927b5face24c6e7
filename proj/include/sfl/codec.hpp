#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sfl/tensor.hpp"

// Tensor wire format: u32 rank, u32 dims[rank], binary32 values row-major.
// Every integer and float is little-endian.
namespace sfl::codec {

using Bytes = std::vector<uint8_t>;

void put_u32(Bytes& out, uint32_t v);
uint32_t get_u32(std::span<const uint8_t> in, std::size_t offset);
void put_f32(Bytes& out, float v);
float get_f32(std::span<const uint8_t> in, std::size_t offset);

std::size_t tensor_wire_size(const Shape& shape);
std::size_t tensor_header_size(std::size_t rank);

void append_tensor(Bytes& out, const Shape& shape, std::span<const float> values);
Bytes encode_tensor(const Tensor& t);
// Decodes one tensor starting at `offset`; advances `offset` past it.
Tensor decode_tensor(std::span<const uint8_t> in, std::size_t& offset);
// Decodes a payload that must contain exactly one tensor.
Tensor decode_tensor(std::span<const uint8_t> in);

// Labels travel as a rank-1 tensor of class indices stored as binary32.
Bytes encode_labels(std::span<const uint32_t> labels);
std::vector<uint32_t> decode_labels(std::span<const uint8_t> in);

}  // namespace sfl::codec
