#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latref/guidance/embedder.hpp"
#include "latref/image.hpp"

namespace latref::metrics {

/// 10*log10(1/MSE) on [0,1] images, capped at 100 dB when MSE < 1e-10.
double psnr(const ImageTensor& a, const ImageTensor& b);

/// Windowed SSIM, 11x11 Gaussian window (sigma 1.5), standard stabilizers
/// for unit dynamic range, averaged over channels and valid positions.
double ssim(const ImageTensor& a, const ImageTensor& b);

/// Cosine similarity of identity embeddings, in [-1, 1].
double ids(const ImageTensor& a, const ImageTensor& b,
           const guidance::IdentityEmbedder& embedder);

struct Point2 {
    double x = 0.0, y = 0.0;
};

using LandmarkFn = std::function<std::vector<Point2>(const ImageTensor&)>;

/// Mean L2 distance over corresponding landmark points (pixels).
double lmd(const ImageTensor& a, const ImageTensor& b, const LandmarkFn& landmarks);

/// Named landmark plugins; "quadrant_centroids" is the default test
/// detector (intensity centroid of the image and of each quadrant).
LandmarkFn make_landmark_fn(const std::string& name);

/// Squared-mean-difference + covariance-trace distance between two
/// embedding sets given as [n, dim] rows. Symmetric PSD square root via
/// eigendecomposition; optional diagonal shrinkage toward the average
/// variance for small-sample stability.
double frechet_distance(const Tensor& set_a, const Tensor& set_b, double shrinkage = 0.0);

/// L2 distance in the fixed perceptual feature space (LPIPS stand-in).
double feat_dist(const ImageTensor& a, const ImageTensor& b);

struct PerImageRecord {
    std::string name;
    double psnr = 0.0, ssim = 0.0, feat_dist = 0.0, ids = 0.0, lmd = 0.0;
};

struct MetricReport {
    std::vector<PerImageRecord> records;
    double mean_psnr = 0.0, mean_ssim = 0.0, mean_feat_dist = 0.0, mean_ids = 0.0,
           mean_lmd = 0.0;
    double frechet = 0.0;

    void recompute_aggregates();
    std::string to_json() const;
    std::string to_csv() const;
};

/// Full per-pair evaluation plus the corpus-level Fréchet distance over
/// identity embeddings.
MetricReport evaluate_sets(const std::vector<ImageTensor>& restored,
                           const std::vector<ImageTensor>& reference,
                           const std::vector<std::string>& names,
                           const guidance::IdentityEmbedder& embedder,
                           const LandmarkFn& landmarks);

}  // namespace latref::metrics
