#include "latref/pipeline/corpus.hpp"

#include <algorithm>
#include <set>

namespace latref::pipeline {

int Corpus::num_identities() const {
    std::set<int> ids(labels.begin(), labels.end());
    return static_cast<int>(ids.size());
}

Corpus load_corpus(const std::filesystem::path& dir, int resolution) {
    Corpus corpus;
    const auto paths = list_pngs(dir);
    if (paths.empty()) throw Error("corpus", "no PNG images under " + dir.string());
    int next_fresh = 1 << 20;  // synthetic labels for unlabeled files
    for (const auto& p : paths) {
        corpus.images.push_back(fit_to_resolution(read_png(p), resolution));
        const std::string stem = p.stem().string();
        corpus.names.push_back(stem);
        int label = -1;
        if (stem.size() > 2 && stem.rfind("id", 0) == 0) {
            size_t i = 2;
            while (i < stem.size() && std::isdigit(static_cast<unsigned char>(stem[i]))) ++i;
            if (i > 2) label = std::stoi(stem.substr(2, i - 2));
        }
        corpus.labels.push_back(label >= 0 ? label : next_fresh++);
    }
    return corpus;
}

}  // namespace latref::pipeline
