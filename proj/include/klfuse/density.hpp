#pragma once

#include "klfuse/model.hpp"

#include <cstdint>

namespace klfuse {

// log p(x | model). Mixtures use log-sum-exp over components.
double log_density(const Model& model, const Eigen::Ref<const Vector>& x);

// Per-component log(alpha_s) + log N_s(x), length m.
Vector component_log_terms(const Model& model, const Eigen::Ref<const Vector>& x);

// Gradient of log_density in the FlatParams coordinates (see flat.hpp).
Vector score(const Model& model, const Eigen::Ref<const Vector>& x);

// count i.i.d. draws. Rows are generated in fixed blocks of kSampleBlock,
// each block from its own sub-stream of seed, so the output does not depend
// on how many threads run the blocks.
Dataset sample(const Model& model, Eigen::Index count, std::uint64_t seed);

inline constexpr Eigen::Index kSampleBlock = 4096;

}  // namespace klfuse
