#include "latref/metrics/metrics.hpp"

#include <cmath>
#include <sstream>

#include "latref/vq/autoencoder.hpp"
#include <json.hpp>

namespace latref::metrics {

double psnr(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_shape(b)) throw Error("metrics", "psnr shape mismatch");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWin = 11;

const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> win(kWin);
        const double sigma = 1.5;
        double total = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double x = i - kWin / 2;
            win[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
            total += win[static_cast<size_t>(i)];
        }
        for (double& v : win) v /= total;
        return win;
    }();
    return w;
}

// separable valid-region Gaussian filtering of one channel plane
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w) {
    const auto& win = ssim_window();
    const int oh = h - kWin + 1, ow = w - kWin + 1;
    std::vector<double> tmp(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k)
                acc += win[static_cast<size_t>(k)] * img[static_cast<size_t>(y) * w + x + k];
            tmp[static_cast<size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k)
                acc += win[static_cast<size_t>(k)] * tmp[static_cast<size_t>(y + k) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double ssim(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_shape(b)) throw Error("metrics", "ssim shape mismatch");
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (h < kWin || w < kWin)
        throw Error("metrics", "image smaller than the 11x11 SSIM window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    double total = 0.0;
    const int oh = h - kWin + 1, ow = w - kWin + 1;
    for (int ch = 0; ch < c; ++ch) {
        std::vector<double> pa(static_cast<size_t>(h) * w), pb(pa.size()), paa(pa.size()),
            pbb(pa.size()), pab(pa.size());
        for (int i = 0; i < h * w; ++i) {
            const double va = a[static_cast<int64_t>(ch) * h * w + i];
            const double vb = b[static_cast<int64_t>(ch) * h * w + i];
            pa[static_cast<size_t>(i)] = va;
            pb[static_cast<size_t>(i)] = vb;
            paa[static_cast<size_t>(i)] = va * va;
            pbb[static_cast<size_t>(i)] = vb * vb;
            pab[static_cast<size_t>(i)] = va * vb;
        }
        const auto mu_a = filter_valid(pa, h, w);
        const auto mu_b = filter_valid(pb, h, w);
        const auto m_aa = filter_valid(paa, h, w);
        const auto m_bb = filter_valid(pbb, h, w);
        const auto m_ab = filter_valid(pab, h, w);

        double acc = 0.0;
        for (size_t i = 0; i < mu_a.size(); ++i) {
            const double va = m_aa[i] - mu_a[i] * mu_a[i];
            const double vb = m_bb[i] - mu_b[i] * mu_b[i];
            const double cov = m_ab[i] - mu_a[i] * mu_b[i];
            acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        }
        total += acc / static_cast<double>(oh * ow);
    }
    return total / c;
}

double ids(const ImageTensor& a, const ImageTensor& b,
           const guidance::IdentityEmbedder& embedder) {
    return dot(embedder.embed(a), embedder.embed(b));
}

double lmd(const ImageTensor& a, const ImageTensor& b, const LandmarkFn& landmarks) {
    const auto la = landmarks(a);
    const auto lb = landmarks(b);
    if (la.size() != lb.size() || la.empty())
        throw Error("metrics", "landmark count mismatch: " + std::to_string(la.size()) + " vs " +
                                   std::to_string(lb.size()));
    double acc = 0.0;
    for (size_t i = 0; i < la.size(); ++i)
        acc += std::hypot(la[i].x - lb[i].x, la[i].y - lb[i].y);
    return acc / static_cast<double>(la.size());
}

namespace {

Point2 intensity_centroid(const ImageTensor& img, int y0, int y1, int x0, int x1) {
    double wsum = 0.0, xs = 0.0, ys = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            double v = 0.0;
            for (int c = 0; c < img.dim(0); ++c) v += img.at(c, y, x);
            v += 1e-9;
            wsum += v;
            xs += v * x;
            ys += v * y;
        }
    return {xs / wsum, ys / wsum};
}

}  // namespace

LandmarkFn make_landmark_fn(const std::string& name) {
    if (name == "quadrant_centroids") {
        return [](const ImageTensor& img) {
            const int h = img.dim(1), w = img.dim(2);
            std::vector<Point2> pts;
            pts.push_back(intensity_centroid(img, 0, h, 0, w));
            pts.push_back(intensity_centroid(img, 0, h / 2, 0, w / 2));
            pts.push_back(intensity_centroid(img, 0, h / 2, w / 2, w));
            pts.push_back(intensity_centroid(img, h / 2, h, 0, w / 2));
            pts.push_back(intensity_centroid(img, h / 2, h, w / 2, w));
            return pts;
        };
    }
    throw Error("metrics", "unknown landmark plugin '" + name + "'");
}

double feat_dist(const ImageTensor& a, const ImageTensor& b) {
    const int h = a.dim(1), w = a.dim(2);
    return vq::perceptual().rms_distance(a.reshaped({1, 3, h, w}), b.reshaped({1, 3, h, w}));
}

void MetricReport::recompute_aggregates() {
    mean_psnr = mean_ssim = mean_feat_dist = mean_ids = mean_lmd = 0.0;
    if (records.empty()) return;
    for (const auto& r : records) {
        mean_psnr += r.psnr;
        mean_ssim += r.ssim;
        mean_feat_dist += r.feat_dist;
        mean_ids += r.ids;
        mean_lmd += r.lmd;
    }
    const double n = static_cast<double>(records.size());
    mean_psnr /= n;
    mean_ssim /= n;
    mean_feat_dist /= n;
    mean_ids /= n;
    mean_lmd /= n;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["aggregates"] = {{"psnr", mean_psnr},       {"ssim", mean_ssim},
                       {"feat_dist", mean_feat_dist}, {"ids", mean_ids},
                       {"lmd", mean_lmd},         {"frechet_distance", frechet}};
    j["records"] = nlohmann::json::array();
    for (const auto& r : records)
        j["records"].push_back({{"name", r.name},
                                {"psnr", r.psnr},
                                {"ssim", r.ssim},
                                {"feat_dist", r.feat_dist},
                                {"ids", r.ids},
                                {"lmd", r.lmd}});
    return j.dump(2);
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << "name,psnr,ssim,feat_dist,ids,lmd\n";
    os.precision(10);
    for (const auto& r : records)
        os << r.name << ',' << r.psnr << ',' << r.ssim << ',' << r.feat_dist << ',' << r.ids
           << ',' << r.lmd << '\n';
    return os.str();
}

MetricReport evaluate_sets(const std::vector<ImageTensor>& restored,
                           const std::vector<ImageTensor>& reference,
                           const std::vector<std::string>& names,
                           const guidance::IdentityEmbedder& embedder,
                           const LandmarkFn& landmarks) {
    if (restored.size() != reference.size() || restored.empty())
        throw Error("metrics", "evaluate_sets needs equally many restored and reference images");
    MetricReport report;
    Tensor emb_a({static_cast<int>(restored.size()), embedder.dim()});
    Tensor emb_b(emb_a.shape());
    for (size_t i = 0; i < restored.size(); ++i) {
        PerImageRecord rec;
        rec.name = i < names.size() ? names[i] : std::to_string(i);
        rec.psnr = psnr(restored[i], reference[i]);
        rec.ssim = ssim(restored[i], reference[i]);
        rec.feat_dist = feat_dist(restored[i], reference[i]);
        Tensor ea = embedder.embed(restored[i]);
        Tensor eb = embedder.embed(reference[i]);
        rec.ids = dot(ea, eb);
        rec.lmd = lmd(restored[i], reference[i], landmarks);
        for (int j = 0; j < embedder.dim(); ++j) {
            emb_a.at(static_cast<int>(i), j) = ea[j];
            emb_b.at(static_cast<int>(i), j) = eb[j];
        }
        report.records.push_back(rec);
    }
    report.recompute_aggregates();
    report.frechet =
        restored.size() >= 2 ? frechet_distance(emb_a, emb_b, 0.05) : 0.0;
    return report;
}

}  // namespace latref::metrics
