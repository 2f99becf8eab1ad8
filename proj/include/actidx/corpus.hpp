#pragma once

#include <cstdint>
#include <vector>

#include "actidx/image.hpp"

namespace actidx {

// Deterministic procedural corpus: a mix of blurred multi-octave noise
// textures, linear gradients, and filled shapes, so both flat and textured
// regions occur.  Image i depends only on (seed, i, size).
Image generate_corpus_image(std::uint64_t seed, int index, int size);

// throws std::invalid_argument when count < 1 or size < 16
std::vector<Image> generate_corpus(std::uint64_t seed, int count, int size);

} // namespace actidx
