#include "latref/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace latref {

namespace fs = std::filesystem;

bool is_valid_image(const ImageTensor& x) {
    if (x.ndim() != 3 || x.dim(0) != 3) return false;
    for (int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(x[i]) || x[i] < 0.0f || x[i] > 1.0f) return false;
    return true;
}

void require_image(const ImageTensor& x, const char* what) {
    if (x.ndim() != 3 || x.dim(0) != 3)
        throw Error("shape", std::string(what) + ": expected 3xHxW image, got " + x.shape_str());
    if (!x.all_finite()) throw Error("image", std::string(what) + ": non-finite pixel values");
}

namespace {

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace

ImageTensor read_png(const fs::path& path) {
    PngReadCloser h;
    h.fp = std::fopen(path.string().c_str(), "rb");
    if (!h.fp) throw Error("io", "cannot open " + path.string());
    h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    h.info = png_create_info_struct(h.png);
    if (setjmp(png_jmpbuf(h.png))) throw Error("io", "png decode failed: " + path.string());
    png_init_io(h.png, h.fp);
    png_read_info(h.png, h.info);

    png_uint_32 w, hgt;
    int bit_depth, color_type;
    png_get_IHDR(h.png, h.info, &w, &hgt, &bit_depth, &color_type, nullptr, nullptr, nullptr);

    // normalize every variant to 8-bit RGB
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(h.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(h.png);
    if (png_get_valid(h.png, h.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(h.png);
    if (bit_depth == 16) png_set_strip_16(h.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(h.png);
    png_set_strip_alpha(h.png);
    png_read_update_info(h.png, h.info);

    const int height = static_cast<int>(hgt), width = static_cast<int>(w);
    std::vector<uint8_t> row(static_cast<size_t>(width) * 3);
    ImageTensor img({3, height, width});
    for (int y = 0; y < height; ++y) {
        png_read_row(h.png, row.data(), nullptr);
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.0f;
    }
    png_read_end(h.png, nullptr);
    return img;
}

void write_png(const fs::path& path, const ImageTensor& img) {
    require_image(img, "write_png");
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    PngWriteCloser h;
    h.fp = std::fopen(path.string().c_str(), "wb");
    if (!h.fp) throw Error("io", "cannot create " + path.string());
    h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    h.info = png_create_info_struct(h.png);
    if (setjmp(png_jmpbuf(h.png))) throw Error("io", "png encode failed: " + path.string());
    png_init_io(h.png, h.fp);

    const int height = img.dim(1), width = img.dim(2);
    png_set_IHDR(h.png, h.info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(h.png, h.info);
    std::vector<uint8_t> row(static_cast<size_t>(width) * 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<uint8_t>(std::lround(v * 255.0f));
            }
        png_write_row(h.png, row.data());
    }
    png_write_end(h.png, nullptr);
}

namespace {

// Catmull-Rom kernel (a = -0.5)
inline double cubic_weight(double x) {
    x = std::abs(x);
    if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
    if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
    return 0.0;
}

}  // namespace

ImageTensor resize_bicubic(const ImageTensor& img, int out_h, int out_w) {
    const int c = img.dim(0), in_h = img.dim(1), in_w = img.dim(2);
    if (out_h == in_h && out_w == in_w) return img;
    const double sy = static_cast<double>(in_h) / out_h;
    const double sx = static_cast<double>(in_w) / out_w;

    // horizontal pass
    Tensor tmp({c, in_h, out_w});
    for (int ox = 0; ox < out_w; ++ox) {
        const double src = (ox + 0.5) * sx - 0.5;
        const int base = static_cast<int>(std::floor(src));
        double wts[4];
        double wsum = 0.0;
        for (int k = 0; k < 4; ++k) {
            wts[k] = cubic_weight(src - (base - 1 + k));
            wsum += wts[k];
        }
        for (int k = 0; k < 4; ++k) wts[k] /= wsum;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < in_h; ++y) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    const int xi = std::clamp(base - 1 + k, 0, in_w - 1);
                    acc += wts[k] * img.at(ch, y, xi);
                }
                tmp.at(ch, y, ox) = static_cast<float>(acc);
            }
    }
    // vertical pass
    Tensor out({c, out_h, out_w});
    for (int oy = 0; oy < out_h; ++oy) {
        const double src = (oy + 0.5) * sy - 0.5;
        const int base = static_cast<int>(std::floor(src));
        double wts[4];
        double wsum = 0.0;
        for (int k = 0; k < 4; ++k) {
            wts[k] = cubic_weight(src - (base - 1 + k));
            wsum += wts[k];
        }
        for (int k = 0; k < 4; ++k) wts[k] /= wsum;
        for (int ch = 0; ch < c; ++ch)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    const int yi = std::clamp(base - 1 + k, 0, in_h - 1);
                    acc += wts[k] * tmp.at(ch, yi, x);
                }
                out.at(ch, oy, x) = static_cast<float>(acc);
            }
    }
    return clamp01(std::move(out));
}

ImageTensor center_crop(const ImageTensor& img, int h, int w) {
    const int c = img.dim(0), in_h = img.dim(1), in_w = img.dim(2);
    if (h > in_h || w > in_w) throw Error("image", "center_crop larger than input");
    const int y0 = (in_h - h) / 2, x0 = (in_w - w) / 2;
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            std::memcpy(out.data() + (static_cast<size_t>(ch) * h + y) * w,
                        img.data() + (static_cast<size_t>(ch) * in_h + y0 + y) * in_w + x0,
                        sizeof(float) * w);
    return out;
}

ImageTensor fit_to_resolution(const ImageTensor& img, int size) {
    const int h = img.dim(1), w = img.dim(2);
    if (h == size && w == size) return img;
    const int side = std::min(h, w);
    return resize_bicubic(center_crop(img, side, side), size, size);
}

Tensor clamp01(Tensor t) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = std::clamp(t[i], 0.0f, 1.0f);
    return t;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) throw Error("io", "directory not found: " + dir.string());
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace latref
