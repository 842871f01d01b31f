#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "latref/image.hpp"

namespace latref::pipeline {

/// In-memory training corpus. Identity labels come from `idNNN_*` filename
/// stems when present; unlabeled images each count as their own identity.
struct Corpus {
    std::vector<ImageTensor> images;
    std::vector<std::string> names;
    std::vector<int> labels;

    int size() const { return static_cast<int>(images.size()); }
    int num_identities() const;
};

Corpus load_corpus(const std::filesystem::path& dir, int resolution);

}  // namespace latref::pipeline
