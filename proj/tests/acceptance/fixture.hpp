#pragma once

#include <filesystem>

#include "latref/metrics/metrics.hpp"
#include "latref/pipeline/pipeline.hpp"

namespace acceptance {

using namespace latref;

/// Shared toy pipeline for the criteria that need trained stages. Training
/// runs once into acceptance_work/ and is reused across invocations when
/// the config hash still matches.
struct Fixture {
    PipelineConfig cfg;
    std::filesystem::path work;
    pipeline::Stack stack;

    // held-out degraded/clean pairs
    std::vector<ImageTensor> degraded, clean;
    std::vector<std::string> names;

    // per-arm reports over the held-out set (restored vs clean), plus the
    // degraded-input baseline
    metrics::MetricReport baseline, unguided, guided, guided_masked;

    static Fixture& get();

private:
    void ensure();
    void build_eval_pairs();
    void compute_reports();
};

/// Prints one line per acceptance criterion and feeds the result to doctest.
void report_criterion(int id, const std::string& text, bool ok);

}  // namespace acceptance
