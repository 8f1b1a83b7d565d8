#pragma once

#include <cstdint>

#include "devlang/models.hpp"
#include "devlang/numkernel.hpp"

namespace devlang {

inline constexpr double kGradcheckTolerance = 1e-3;

// Finite-difference check of one architecture on a small seeded instance
// (hidden 5, embedding 4, init scale 0.5) over three short examples.
GradientCheckReport check_architecture(ModelKind kind, std::size_t probes, std::uint64_t seed);

}  // namespace devlang
