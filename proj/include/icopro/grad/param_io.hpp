#pragma once

#include <cstdint>
#include <iosfwd>

#include "icopro/grad/mlp.hpp"

namespace icopro::grad {

// Binary layout (little-endian):
//   "ICPR" | version u32 | layer count u32
//   per layer: rows u32 | cols u32 | rows*cols f64 weights (row-major) | rows f64 biases
inline constexpr std::uint32_t kParamFormatVersion = 1;

void write_params(std::ostream& out, const MlpParams& params);

// Activation and output flag are not part of the file; the caller supplies them.
MlpParams read_params(std::istream& in, Activation activation, bool activate_output);

} // namespace icopro::grad
