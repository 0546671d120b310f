#include "deffiller/random.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/utils.h>

namespace deffiller {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t run_seed, std::string_view stage) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  // torch seeds are consumed as 64-bit but mt19937 keeps the low bits; fold
  // the result so both halves matter.
  std::uint64_t mixed = splitmix64(run_seed ^ splitmix64(h));
  return mixed & 0x7FFFFFFFFFFFFFFFULL;
}

at::Generator make_generator(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

void seed_parameter_init(std::uint64_t seed) { torch::manual_seed(seed); }

}  // namespace deffiller
