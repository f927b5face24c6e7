#pragma once

#include <random>
#include <utility>
#include <vector>

#include "sfl/data.hpp"
#include "sfl/protocols.hpp"

namespace testutil {

// One blob draw split into train rows [0, n) and test rows [n, n + n_test).
inline std::pair<sfl::Dataset, sfl::Dataset> blobs(std::size_t n, std::size_t n_test,
                                                   std::size_t classes, std::size_t dim,
                                                   double sep, uint64_t seed) {
  const sfl::Dataset all = sfl::synth_blobs(n + n_test, classes, dim, sep, seed);
  std::vector<std::size_t> a(n), b(n_test);
  for (std::size_t i = 0; i < n; ++i) a[i] = i;
  for (std::size_t i = 0; i < n_test; ++i) b[i] = n + i;
  return {all.subset(a), all.subset(b)};
}

inline sfl::ExperimentSetup mlp_setup(sfl::Protocol p, std::size_t dim, std::size_t classes,
                                      std::size_t n, std::size_t clients, std::size_t rounds,
                                      uint64_t seed = 7) {
  sfl::ExperimentSetup s;
  s.protocol = p;
  s.model = sfl::model_preset("mlp-small", {dim}, classes);
  s.cut = 1;
  s.train.rounds = rounds;
  s.train.seed = seed;
  s.plan = sfl::iid_partition(n, clients, seed);
  return s;
}

inline sfl::Tensor random_tensor(sfl::Shape shape, std::mt19937_64& rng, float scale = 1.0f) {
  sfl::Tensor t(std::move(shape));
  std::normal_distribution<float> nd(0.0f, scale);
  for (float& v : t.data()) v = nd(rng);
  return t;
}

}  // namespace testutil
