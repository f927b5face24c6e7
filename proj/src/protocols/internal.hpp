#pragma once

#include "sfl/protocols.hpp"

namespace sfl {

EvalResult evaluate_vertical(const std::vector<Network>& fronts, const Network& server,
                             const std::vector<FeatureRange>& ranges, MergeMode merge,
                             const Dataset& test, std::size_t batch);

}  // namespace sfl
