#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "latref/image.hpp"

namespace latref::pipeline {

/// Deterministic procedural portrait-like images: an elliptical "face" with
/// eyes, pupils, mouth and hair whose geometry and palette are fixed per
/// identity, plus small per-variant jitter. Enough identity structure for
/// the toy embedder to learn from, no external data needed.
struct ToyFacesSpec {
    int identities = 16;
    int variants = 5;  // images per identity
    int size = 64;
    uint64_t seed = 7;
};

ImageTensor toy_face(const ToyFacesSpec& spec, int identity, int variant);

/// Writes idNNN_varMM.png files under dir.
void write_toy_corpus(const std::filesystem::path& dir, const ToyFacesSpec& spec);

}  // namespace latref::pipeline
