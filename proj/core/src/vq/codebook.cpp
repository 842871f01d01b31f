#include "latref/vq/codebook.hpp"

namespace latref::vq {

void Codebook::validate() const {
    if (entries.ndim() != 2 || entries.dim(0) < 2)
        throw Error("vq", "codebook must be K x d with K >= 2");
    if (!entries.all_finite()) throw Error("vq", "codebook contains non-finite entries");
}

namespace {

int32_t nearest_entry(const float* vec, int stride, const Codebook& cb) {
    const int K = cb.size(), d = cb.dim();
    double best = 0.0;
    int32_t best_k = 0;
    for (int k = 0; k < K; ++k) {
        const float* e = cb.entries.data() + static_cast<size_t>(k) * d;
        double dist = 0.0;
        for (int c = 0; c < d; ++c) {
            const double diff = static_cast<double>(vec[static_cast<size_t>(c) * stride]) - e[c];
            dist += diff * diff;
        }
        if (k == 0 || dist < best) {
            best = dist;
            best_k = k;
        }
    }
    return best_k;
}

}  // namespace

QuantizedLatent quantize(const Tensor& z, const Codebook& cb) {
    cb.validate();
    if (z.ndim() != 3 || z.dim(0) != cb.dim())
        throw Error("vq", "latent depth " + z.shape_str() + " does not match codebook dim " +
                              std::to_string(cb.dim()));
    const int d = z.dim(0), h = z.dim(1), w = z.dim(2);
    QuantizedLatent out;
    out.h = h;
    out.w = w;
    out.data = Tensor({d, h, w});
    out.indices.resize(static_cast<size_t>(h) * w);
    const int plane = h * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int32_t k = nearest_entry(z.data() + y * w + x, plane, cb);
            out.indices[static_cast<size_t>(y) * w + x] = k;
            const float* e = cb.entries.data() + static_cast<size_t>(k) * d;
            for (int c = 0; c < d; ++c) out.data.at(c, y, x) = e[c];
        }
    return out;
}

void quantize_batch(const Tensor& z, const Codebook& cb, Tensor& out,
                    std::vector<int32_t>& indices) {
    const int n = z.dim(0), d = z.dim(1), h = z.dim(2), w = z.dim(3);
    if (d != cb.dim()) throw Error("vq", "latent depth does not match codebook dim");
    out = Tensor(z.shape());
    indices.resize(static_cast<size_t>(n) * h * w);
    const int plane = h * w;
    for (int i = 0; i < n; ++i) {
        const float* base = z.data() + static_cast<size_t>(i) * d * plane;
        for (int p = 0; p < plane; ++p) {
            const int32_t k = nearest_entry(base + p, plane, cb);
            indices[static_cast<size_t>(i) * plane + p] = k;
            const float* e = cb.entries.data() + static_cast<size_t>(k) * d;
            for (int c = 0; c < d; ++c)
                out[(static_cast<size_t>(i) * d + c) * plane + p] = e[c];
        }
    }
}

Tensor straight_through(const Tensor& z, const QuantizedLatent& zq) {
    if (!z.same_shape(zq.data))
        throw Error("vq", "straight_through shape mismatch " + z.shape_str());
    return zq.data;
}

Tensor straight_through_backward(const Tensor& grad_out) { return grad_out; }

}  // namespace latref::vq
