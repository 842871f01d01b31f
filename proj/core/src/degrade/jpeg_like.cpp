#include <algorithm>
#include <array>
#include <cmath>

#include "latref/degrade/degrade.hpp"

namespace latref::degrade {

namespace {

// standard JPEG Annex K quantization tables
constexpr std::array<int, 64> kLumaQ = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaQ = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

struct DctBasis {
    // orthonormal DCT-II basis, b[u][x]
    double b[8][8];
    DctBasis() {
        for (int u = 0; u < 8; ++u) {
            const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int x = 0; x < 8; ++x)
                b[u][x] = cu * std::cos((2.0 * x + 1.0) * u * M_PI / 16.0);
        }
    }
};

const DctBasis& basis() {
    static const DctBasis basis;
    return basis;
}

void dct8x8(const double* in, double* out) {
    const auto& B = basis();
    double tmp[64];
    for (int u = 0; u < 8; ++u)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int y = 0; y < 8; ++y) acc += B.b[u][y] * in[y * 8 + x];
            tmp[u * 8 + x] = acc;
        }
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double acc = 0.0;
            for (int x = 0; x < 8; ++x) acc += B.b[v][x] * tmp[u * 8 + x];
            out[u * 8 + v] = acc;
        }
}

void idct8x8(const double* in, double* out) {
    const auto& B = basis();
    double tmp[64];
    for (int y = 0; y < 8; ++y)
        for (int v = 0; v < 8; ++v) {
            double acc = 0.0;
            for (int u = 0; u < 8; ++u) acc += B.b[u][y] * in[u * 8 + v];
            tmp[y * 8 + v] = acc;
        }
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int v = 0; v < 8; ++v) acc += B.b[v][x] * tmp[y * 8 + v];
            out[y * 8 + x] = acc;
        }
}

// libjpeg quality scaling of the base tables
std::array<double, 64> scaled_table(const std::array<int, 64>& base, double quality) {
    const double q = std::clamp(quality, 1.0, 100.0);
    const double scale = q < 50.0 ? 5000.0 / q : 200.0 - 2.0 * q;
    std::array<double, 64> t{};
    for (int i = 0; i < 64; ++i)
        t[i] = std::clamp(std::floor((base[i] * scale + 50.0) / 100.0), 1.0, 255.0);
    return t;
}

void codec_channel(std::vector<double>& plane, int h, int w, const std::array<double, 64>& q) {
    // process 8x8 tiles; edges replicate into the tile
    double block[64], coef[64];
    for (int by = 0; by < h; by += 8)
        for (int bx = 0; bx < w; bx += 8) {
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const int sy = std::min(by + y, h - 1), sx = std::min(bx + x, w - 1);
                    block[y * 8 + x] = plane[static_cast<size_t>(sy) * w + sx];
                }
            dct8x8(block, coef);
            for (int i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / q[i]) * q[i];
            idct8x8(coef, block);
            for (int y = 0; y < 8 && by + y < h; ++y)
                for (int x = 0; x < 8 && bx + x < w; ++x)
                    plane[static_cast<size_t>(by + y) * w + bx + x] = block[y * 8 + x];
        }
}

}  // namespace

ImageTensor jpeg_like(const ImageTensor& x, double quality) {
    const int h = x.dim(1), w = x.dim(2);
    const auto luma_q = scaled_table(kLumaQ, quality);
    const auto chroma_q = scaled_table(kChromaQ, quality);

    // RGB [0,1] -> YCbCr on the 0..255 level-shifted scale used by the tables
    std::vector<double> Y(static_cast<size_t>(h) * w), Cb(Y.size()), Cr(Y.size());
    for (int i = 0; i < h * w; ++i) {
        const double r = x[i] * 255.0;
        const double g = x[static_cast<size_t>(h) * w + i] * 255.0;
        const double b = x[2 * static_cast<size_t>(h) * w + i] * 255.0;
        Y[i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
        Cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
        Cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    codec_channel(Y, h, w, luma_q);
    codec_channel(Cb, h, w, chroma_q);
    codec_channel(Cr, h, w, chroma_q);

    ImageTensor out({3, h, w});
    for (int i = 0; i < h * w; ++i) {
        const double y = Y[i] + 128.0;
        const double r = y + 1.402 * Cr[i];
        const double g = y - 0.344136 * Cb[i] - 0.714136 * Cr[i];
        const double b = y + 1.772 * Cb[i];
        out[i] = static_cast<float>(r / 255.0);
        out[static_cast<size_t>(h) * w + i] = static_cast<float>(g / 255.0);
        out[2 * static_cast<size_t>(h) * w + i] = static_cast<float>(b / 255.0);
    }
    return clamp01(std::move(out));
}

}  // namespace latref::degrade
