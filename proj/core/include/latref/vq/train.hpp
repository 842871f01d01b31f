#pragma once

#include "latref/pipeline/corpus.hpp"
#include "latref/vq/autoencoder.hpp"

namespace latref::vq {

struct VqTrainLog {
    std::vector<LossBreakdown> steps;
    std::vector<double> disc_loss;  // 0 while the adversarial term is off
};

struct VqTrainResult {
    VqModel model;
    Discriminator disc;
    std::vector<int64_t> usage;  // codebook index counts over the final epoch
    VqTrainLog log;

    double dead_code_fraction() const;
};

/// End-to-end training of encoder, decoder, codebook (and discriminator
/// after cfg.disc_start). Aborts with the step number if any weight goes
/// non-finite. Deterministic given (corpus, cfg, seed).
VqTrainResult train_vqvae(const pipeline::Corpus& corpus, const VqConfig& cfg, uint64_t seed);

}  // namespace latref::vq
