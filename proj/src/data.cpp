#include "sfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sfl/codec.hpp"
#include "sfl/error.hpp"
#include "sfl/rng.hpp"

namespace sfl {

namespace {

std::vector<std::size_t> shuffled_range(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// Sizes of an even split of `n` into `parts`, remainder to lower indices.
std::vector<std::size_t> even_split(std::size_t n, std::size_t parts) {
  std::vector<std::size_t> sizes(parts, n / parts);
  for (std::size_t i = 0; i < n % parts; ++i) ++sizes[i];
  return sizes;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

uint32_t big_endian_u32(const std::vector<uint8_t>& b, std::size_t off) {
  if (off + 4 > b.size()) throw DataError("truncated IDX header");
  return (uint32_t{b[off]} << 24) | (uint32_t{b[off + 1]} << 16) | (uint32_t{b[off + 2]} << 8) |
         uint32_t{b[off + 3]};
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (features.size() != labels.size() * sample_size()) {
    throw DataError("feature count does not match samples x sample size");
  }
  for (uint32_t y : labels) {
    if (y >= classes) throw DataError("label " + std::to_string(y) + " >= class count");
  }
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t s = sample_size();
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  std::vector<float> out(indices.size() * s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DataError("sample index out of range");
    std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(indices[i] * s), s,
                out.begin() + static_cast<std::ptrdiff_t>(i * s));
  }
  return Tensor(std::move(shape), std::move(out));
}

std::vector<uint32_t> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<uint32_t> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.sample_shape = sample_shape;
  d.classes = classes;
  d.features = batch(indices).vec();
  d.labels = batch_labels(indices);
  return d;
}

Dataset Dataset::feature_slice(std::size_t begin, std::size_t end) const {
  if (sample_shape.size() != 1) throw DataError("feature slicing needs flat samples");
  if (begin >= end || end > sample_shape[0]) throw DataError("feature range out of bounds");
  Dataset d;
  d.sample_shape = {end - begin};
  d.classes = classes;
  d.labels = labels;
  d.features.reserve(size() * (end - begin));
  const std::size_t s = sample_size();
  for (std::size_t i = 0; i < size(); ++i) {
    d.features.insert(d.features.end(), features.begin() + static_cast<std::ptrdiff_t>(i * s + begin),
                      features.begin() + static_cast<std::ptrdiff_t>(i * s + end));
  }
  return d;
}

const char* scheme_name(PartitionScheme scheme) {
  switch (scheme) {
    case PartitionScheme::kIid: return "iid";
    case PartitionScheme::kLabelSkew: return "label-skew";
    case PartitionScheme::kQuantitySkew: return "quantity-skew";
    case PartitionScheme::kVertical: return "vertical";
  }
  return "?";
}

std::size_t PartitionPlan::total_size() const {
  std::size_t n = 0;
  for (const auto& l : indices) n += l.size();
  return n;
}

PartitionPlan iid_partition(std::size_t n, std::size_t clients, uint64_t seed) {
  if (clients == 0) throw DataError("need at least one client");
  if (clients > n) throw DataError("more clients (" + std::to_string(clients) + ") than samples");
  Rng rng = make_rng(seed, {stream::kPartition});
  const std::vector<std::size_t> pool = shuffled_range(n, rng);
  PartitionPlan plan{PartitionScheme::kIid, {}, {}, seed};
  const std::size_t per = n / clients;
  for (std::size_t k = 0; k < clients; ++k) {
    plan.indices.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(k * per),
                              pool.begin() + static_cast<std::ptrdiff_t>((k + 1) * per));
  }
  return plan;
}

PartitionPlan label_skew_partition(std::span<const uint32_t> labels, std::size_t classes,
                                   std::size_t clients, std::size_t classes_per_client,
                                   uint64_t seed) {
  if (clients == 0 || classes == 0) throw DataError("need at least one client and class");
  if (classes_per_client < 1 || classes_per_client > classes) {
    throw DataError("classes_per_client must be in [1, classes]");
  }
  if (classes_per_client * clients < classes) {
    throw DataError("classes_per_client * clients < classes: some classes would be unassigned");
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw DataError("label out of range");
    by_class[labels[i]].push_back(i);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].empty()) throw DataError("class " + std::to_string(c) + " has no samples");
  }
  Rng rng = make_rng(seed, {stream::kPartition});
  const std::vector<std::size_t> class_order = shuffled_range(classes, rng);
  std::vector<std::vector<std::size_t>> holders(classes);
  for (std::size_t k = 0; k < clients; ++k) {
    for (std::size_t j = 0; j < classes_per_client; ++j) {
      holders[class_order[(k * classes_per_client + j) % classes]].push_back(k);
    }
  }
  PartitionPlan plan{PartitionScheme::kLabelSkew, std::vector<std::vector<std::size_t>>(clients), {}, seed};
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    auto& owners = holders[c];
    std::sort(owners.begin(), owners.end());
    owners.erase(std::unique(owners.begin(), owners.end()), owners.end());
    const std::vector<std::size_t> sizes = even_split(members.size(), owners.size());
    std::size_t off = 0;
    for (std::size_t h = 0; h < owners.size(); ++h) {
      auto& dst = plan.indices[owners[h]];
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(off),
                 members.begin() + static_cast<std::ptrdiff_t>(off + sizes[h]));
      off += sizes[h];
    }
  }
  return plan;
}

PartitionPlan quantity_skew_partition(std::size_t n, std::span<const std::size_t> sizes,
                                      uint64_t seed) {
  if (sizes.empty()) throw DataError("need at least one client");
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total > n) {
    throw DataError("requested shard sizes sum to " + std::to_string(total) + " > n = " +
                    std::to_string(n));
  }
  Rng rng = make_rng(seed, {stream::kPartition});
  const std::vector<std::size_t> pool = shuffled_range(n, rng);
  PartitionPlan plan{PartitionScheme::kQuantitySkew, {}, {}, seed};
  std::size_t off = 0;
  for (std::size_t s : sizes) {
    plan.indices.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(off),
                              pool.begin() + static_cast<std::ptrdiff_t>(off + s));
    off += s;
  }
  return plan;
}

PartitionPlan limit_shard_sizes(PartitionPlan plan, std::span<const std::size_t> sizes,
                                uint64_t seed) {
  if (plan.scheme == PartitionScheme::kVertical) throw DataError("vertical plans have no shard sizes");
  if (sizes.size() != plan.client_count()) throw DataError("need one size per client");
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    auto& shard = plan.indices[k];
    if (sizes[k] > shard.size()) {
      throw DataError("client " + std::to_string(k) + " holds " + std::to_string(shard.size()) +
                      " samples, fewer than the requested " + std::to_string(sizes[k]));
    }
    std::sort(shard.begin(), shard.end());
    Rng rng = make_rng(seed, {stream::kPartition, k, 1});
    std::shuffle(shard.begin(), shard.end(), rng);
    shard.resize(sizes[k]);
  }
  return plan;
}

PartitionPlan vertical_partition(std::size_t n, std::size_t d, std::size_t clients, uint64_t seed) {
  if (clients == 0) throw DataError("need at least one client");
  if (d < clients) throw DataError("fewer features than clients");
  PartitionPlan plan{PartitionScheme::kVertical, {}, {}, seed};
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::size_t off = 0;
  for (std::size_t s : even_split(d, clients)) {
    plan.features.push_back({off, off + s});
    plan.indices.push_back(all);
    off += s;
  }
  return plan;
}

Dataset synth_blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation,
                    uint64_t seed) {
  return synth_blobs(n, classes, Shape{dim}, separation, seed);
}

Dataset synth_blobs(std::size_t n, std::size_t classes, const Shape& sample_shape,
                    double separation, uint64_t seed) {
  if (classes < 2) throw DataError("blobs need at least two classes");
  if (n == 0) throw DataError("blobs need n >= 1");
  const std::size_t dim = shape_numel(sample_shape);
  Rng rng = make_rng(seed, {stream::kData});
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  for (std::size_t c = 0; c < classes; ++c) {
    auto& v = centers[c];
    for (double& x : v) x = normal(rng);
    if (c < dim) {
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += v[i] * centers[p][i];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * centers[p][i];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  const double scale = separation / std::sqrt(2.0);

  Dataset d;
  d.sample_shape = sample_shape;
  d.classes = classes;
  d.features.resize(n * dim);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    d.labels[i] = static_cast<uint32_t>(c);
    for (std::size_t j = 0; j < dim; ++j) {
      d.features[i * dim + j] = static_cast<float>(scale * centers[c][j] + normal(rng));
    }
  }
  return d;
}

void save_container(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  if (data.classes > 256) throw DataError("container stores labels as u8; too many classes");
  codec::Bytes out{'S', 'D', 'S', 'H'};
  codec::put_u32(out, 1);
  codec::put_u32(out, static_cast<uint32_t>(data.size()));
  codec::put_u32(out, static_cast<uint32_t>(data.sample_size()));
  codec::put_u32(out, static_cast<uint32_t>(data.classes));
  out.reserve(out.size() + data.features.size() * 4 + data.size());
  for (float v : data.features) codec::put_f32(out, v);
  for (uint32_t y : data.labels) out.push_back(static_cast<uint8_t>(y));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

Dataset load_container(const std::filesystem::path& path) {
  const std::vector<uint8_t> b = read_file(path);
  if (b.size() < 20 || b[0] != 'S' || b[1] != 'D' || b[2] != 'S' || b[3] != 'H') {
    throw DataError(path.string() + " is not a SDSH container");
  }
  const uint32_t version = codec::get_u32(b, 4);
  if (version != 1) throw DataError("unsupported container version " + std::to_string(version));
  const std::size_t n = codec::get_u32(b, 8), d = codec::get_u32(b, 12), c = codec::get_u32(b, 16);
  if (b.size() != 20 + n * d * 4 + n) throw DataError("container size does not match header");
  Dataset out;
  out.sample_shape = {d};
  out.classes = c;
  out.features.resize(n * d);
  for (std::size_t i = 0; i < n * d; ++i) out.features[i] = codec::get_f32(b, 20 + 4 * i);
  out.labels.assign(b.begin() + static_cast<std::ptrdiff_t>(20 + n * d * 4), b.end());
  out.validate();
  return out;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV has no header row");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto label_it = std::find(header.begin(), header.end(), "label");
  if (label_it == header.end()) throw DataError("CSV header lacks a 'label' column");
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());
  Dataset d;
  d.sample_shape = {header.size() - 1};
  uint32_t max_label = 0;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        if (col == label_col) {
          const long v = std::stol(cell);
          if (v < 0) throw DataError("negative label");
          d.labels.push_back(static_cast<uint32_t>(v));
          max_label = std::max(max_label, d.labels.back());
        } else {
          d.features.push_back(std::stof(cell));
        }
      } catch (const std::logic_error&) {
        throw DataError("CSV row " + std::to_string(row) + ": bad value '" + cell + "'");
      }
      ++col;
    }
    if (col != header.size()) throw DataError("CSV row " + std::to_string(row) + " has wrong column count");
  }
  d.classes = static_cast<std::size_t>(max_label) + 1;
  d.validate();
  return d;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t limit) {
  const std::vector<uint8_t> ib = read_file(images), lb = read_file(labels);
  if (big_endian_u32(ib, 0) != 0x803 || big_endian_u32(lb, 0) != 0x801) {
    throw DataError("bad IDX magic");
  }
  std::size_t n = big_endian_u32(ib, 4);
  const std::size_t rows = big_endian_u32(ib, 8), cols = big_endian_u32(ib, 12);
  if (big_endian_u32(lb, 4) != n) throw DataError("IDX image/label counts differ");
  if (limit) n = std::min(n, limit);
  if (ib.size() < 16 + n * rows * cols || lb.size() < 8 + n) throw DataError("truncated IDX file");
  Dataset d;
  d.sample_shape = {1, rows, cols};
  d.features.resize(n * rows * cols);
  for (std::size_t i = 0; i < d.features.size(); ++i) d.features[i] = ib[16 + i] / 255.0f;
  d.labels.assign(lb.begin() + 8, lb.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  d.classes = 1 + *std::max_element(d.labels.begin(), d.labels.end());
  d.validate();
  return d;
}

}  // namespace sfl
