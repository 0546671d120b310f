#pragma once

#include <cstdint>
#include <string_view>

#include <ATen/core/Generator.h>

namespace deffiller {

/// Derives a stage-specific seed from a run seed so that each stochastic
/// stage (training, sampling, splitting) can be replayed on its own.
std::uint64_t substream_seed(std::uint64_t run_seed, std::string_view stage);

/// A CPU torch generator with a fixed seed. All noise in the library is drawn
/// through explicit generators; the global torch RNG is only used for
/// parameter initialisation under `seed_parameter_init`.
at::Generator make_generator(std::uint64_t seed);

/// Seeds the global torch RNG used by module constructors.
void seed_parameter_init(std::uint64_t seed);

}  // namespace deffiller
