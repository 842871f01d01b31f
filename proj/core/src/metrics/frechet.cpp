#include <Eigen/Dense>

#include <cmath>

#include "latref/metrics/metrics.hpp"

namespace latref::metrics {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

void moments(const Tensor& set, Vec& mu, Mat& cov, double shrinkage) {
    const int n = set.dim(0), d = set.dim(1);
    mu = Vec::Zero(d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mu[j] += set.at(i, j);
    mu /= static_cast<double>(n);
    cov = Mat::Zero(d, d);
    for (int i = 0; i < n; ++i) {
        Vec x(d);
        for (int j = 0; j < d; ++j) x[j] = set.at(i, j) - mu[j];
        cov.noalias() += x * x.transpose();
    }
    cov /= static_cast<double>(n - 1);
    if (shrinkage > 0.0) {
        const double avg_var = cov.trace() / d;
        cov = (1.0 - shrinkage) * cov + shrinkage * avg_var * Mat::Identity(d, d);
    }
}

// symmetric PSD square root via eigendecomposition; small negatives from
// roundoff are clamped, genuinely negative spectra are an error
Mat psd_sqrt(const Mat& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
    Vec ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < -1e-8 * std::max(1.0, std::abs(ev[ev.size() - 1])))
            throw Error("metrics", std::string("non-PSD covariance in ") + what);
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Tensor& set_a, const Tensor& set_b, double shrinkage) {
    if (set_a.ndim() != 2 || set_b.ndim() != 2 || set_a.dim(1) != set_b.dim(1))
        throw Error("metrics", "frechet_distance needs [n,dim] sets of equal dim");
    if (set_a.dim(0) < 2 || set_b.dim(0) < 2)
        throw Error("metrics", "frechet_distance needs at least 2 samples per set");

    Vec mu_a, mu_b;
    Mat cov_a, cov_b;
    moments(set_a, mu_a, cov_a, shrinkage);
    moments(set_b, mu_b, cov_b, shrinkage);

    const Mat sqrt_a = psd_sqrt(cov_a, "set a");
    const Mat prod = sqrt_a * cov_b * sqrt_a;  // similar to sqrt(cov_a cov_b)
    const Mat sqrt_prod = psd_sqrt(prod, "cross term");

    const double mean_term = (mu_a - mu_b).squaredNorm();
    const double trace_term = cov_a.trace() + cov_b.trace() - 2.0 * sqrt_prod.trace();
    double value = mean_term + trace_term;
    if (value < 0.0) {
        if (value < -1e-8) throw Error("metrics", "frechet_distance negative beyond roundoff");
        value = 0.0;
    }
    return value;
}

}  // namespace latref::metrics
