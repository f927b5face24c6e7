#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

struct Dataset {
  Shape sample_shape;           // per-sample feature shape, e.g. {d} or {C,H,W}
  std::vector<float> features;  // size() * sample_size() values, row-major
  std::vector<uint32_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_numel(sample_shape); }

  // Throws DataError when the invariants (label < classes, sizes) fail.
  void validate() const;

  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<uint32_t> batch_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  // Columns [begin, end) of a flat (rank-1 sample) dataset.
  Dataset feature_slice(std::size_t begin, std::size_t end) const;
};

enum class PartitionScheme { kIid, kLabelSkew, kQuantitySkew, kVertical };

const char* scheme_name(PartitionScheme scheme);

struct FeatureRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const FeatureRange&, const FeatureRange&) = default;
};

// Horizontal schemes fill `indices` (one disjoint list per client);
// the vertical scheme fills `features` and gives every client all samples.
struct PartitionPlan {
  PartitionScheme scheme = PartitionScheme::kIid;
  std::vector<std::vector<std::size_t>> indices;
  std::vector<FeatureRange> features;
  uint64_t seed = 0;

  std::size_t client_count() const { return indices.size(); }
  std::size_t shard_size(std::size_t k) const { return indices.at(k).size(); }
  std::size_t total_size() const;
};

// Each client receives floor(n/K) indices drawn without replacement.
PartitionPlan iid_partition(std::size_t n, std::size_t clients, uint64_t seed);

// Classes are shuffled and dealt round-robin so client k holds
// classes_per_client consecutive entries of the shuffled order; each class's
// samples are then split evenly among its holders (remainder to lower ids).
PartitionPlan label_skew_partition(std::span<const uint32_t> labels, std::size_t classes,
                                   std::size_t clients, std::size_t classes_per_client,
                                   uint64_t seed);

PartitionPlan quantity_skew_partition(std::size_t n, std::span<const std::size_t> sizes,
                                      uint64_t seed);

// Keeps a seeded random sizes[k] of client k's indices, layering quantity skew
// on top of another horizontal plan (e.g. label skew). The scheme tag is kept.
PartitionPlan limit_shard_sizes(PartitionPlan plan, std::span<const std::size_t> sizes,
                                uint64_t seed);

// Contiguous feature ranges; the first d % K clients get one extra feature.
PartitionPlan vertical_partition(std::size_t n, std::size_t d, std::size_t clients, uint64_t seed);

// Gaussian class clusters (unit variance per dimension). Class centers are
// orthonormal directions scaled so neighbouring centers sit `separation`
// apart whenever classes <= dimension; label of sample i is i % classes.
Dataset synth_blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation,
                    uint64_t seed);
Dataset synth_blobs(std::size_t n, std::size_t classes, const Shape& sample_shape,
                    double separation, uint64_t seed);

// Flat binary container: "SDSH", u32 version (1), u32 n, u32 d, u32 classes,
// then n*d binary32 features, then n u8 labels. Little-endian throughout.
void save_container(const std::filesystem::path& path, const Dataset& data);
Dataset load_container(const std::filesystem::path& path);

// Header row required; the column named "label" holds class indices, all
// other columns are numeric features in file order.
Dataset load_csv(const std::filesystem::path& path);

// MNIST-style IDX pair (ubyte images and labels). Pixels scale to [0,1];
// samples get shape {1, rows, cols}. `limit` = 0 loads everything.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t limit = 0);

}  // namespace sfl
