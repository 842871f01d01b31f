#include "latref/pipeline/toy_faces.hpp"

#include <cmath>
#include <cstdio>

#include "latref/rng.hpp"

namespace latref::pipeline {

namespace {

struct Color {
    double r, g, b;
};

struct FaceParams {
    Color bg_top, bg_bottom, skin, hair, eye, mouth;
    double face_rx, face_ry;       // ellipse half-axes, fraction of size
    double eye_dx, eye_dy;         // eye offsets from face center
    double eye_r, pupil_r;
    double mouth_w, mouth_h, mouth_dy, mouth_curve;
    double hair_drop;              // how far the hair cap reaches
};

Color rand_color(Rng& rng, double lo, double hi) {
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

FaceParams identity_params(uint64_t seed, int identity) {
    Rng rng(mix_seed(seed, 0xFACE, static_cast<uint64_t>(identity)));
    FaceParams p;
    p.bg_top = rand_color(rng, 0.05, 0.35);
    p.bg_bottom = rand_color(rng, 0.15, 0.5);
    p.skin = {rng.uniform(0.55, 0.95), rng.uniform(0.45, 0.8), rng.uniform(0.35, 0.7)};
    p.hair = rand_color(rng, 0.05, 0.45);
    p.eye = rand_color(rng, 0.02, 0.3);
    p.mouth = {rng.uniform(0.5, 0.85), rng.uniform(0.1, 0.35), rng.uniform(0.15, 0.4)};
    p.face_rx = rng.uniform(0.26, 0.36);
    p.face_ry = rng.uniform(0.32, 0.42);
    p.eye_dx = rng.uniform(0.10, 0.17);
    p.eye_dy = rng.uniform(-0.14, -0.06);
    p.eye_r = rng.uniform(0.035, 0.06);
    p.pupil_r = p.eye_r * rng.uniform(0.35, 0.55);
    p.mouth_w = rng.uniform(0.10, 0.2);
    p.mouth_h = rng.uniform(0.02, 0.045);
    p.mouth_dy = rng.uniform(0.14, 0.22);
    p.mouth_curve = rng.uniform(-0.05, 0.08);
    p.hair_drop = rng.uniform(0.05, 0.22);
    return p;
}

// soft-edged membership of a point in an ellipse, 1 inside, 0 outside
double ellipse_mask(double x, double y, double cx, double cy, double rx, double ry,
                    double softness) {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d <= 1.0 - softness) return 1.0;
    if (d >= 1.0 + softness) return 0.0;
    const double t = (d - (1.0 - softness)) / (2.0 * softness);
    return 1.0 - t * t * (3.0 - 2.0 * t);
}

void blend(Color& dst, const Color& src, double a) {
    dst.r += (src.r - dst.r) * a;
    dst.g += (src.g - dst.g) * a;
    dst.b += (src.b - dst.b) * a;
}

}  // namespace

ImageTensor toy_face(const ToyFacesSpec& spec, int identity, int variant) {
    const FaceParams p = identity_params(spec.seed, identity);
    Rng vr(mix_seed(spec.seed, 0x7A9, mix_seed(identity, variant)));
    const double jx = vr.uniform(-0.03, 0.03);
    const double jy = vr.uniform(-0.03, 0.03);
    const double brightness = vr.uniform(0.9, 1.1);
    const double tint_r = vr.uniform(0.97, 1.03);
    const double tint_b = vr.uniform(0.97, 1.03);

    const int n = spec.size;
    ImageTensor img({3, n, n});
    const double cx = 0.5 + jx, cy = 0.52 + jy;
    const double soft = 1.5 / n;

    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double u = (x + 0.5) / n, v = (y + 0.5) / n;
            Color c = p.bg_top;
            blend(c, p.bg_bottom, v);

            const double face = ellipse_mask(u, v, cx, cy, p.face_rx, p.face_ry, soft * 2);
            blend(c, p.skin, face);

            // hair: the cap of a slightly larger ellipse above the forehead
            const double hair_region = v < cy - p.face_ry * (1.0 - p.hair_drop) ? 1.0 : 0.0;
            const double hair =
                ellipse_mask(u, v, cx, cy - 0.02, p.face_rx * 1.12, p.face_ry * 1.1, soft * 2) *
                hair_region;
            blend(c, p.hair, hair);

            for (int side : {-1, 1}) {
                const double ex = cx + side * p.eye_dx, ey = cy + p.eye_dy;
                blend(c, p.eye, ellipse_mask(u, v, ex, ey, p.eye_r, p.eye_r, soft) * face);
                Color white{0.9, 0.9, 0.9};
                blend(c, white,
                      ellipse_mask(u, v, ex, ey, p.eye_r * 0.9, p.eye_r * 0.9, soft) * face);
                Color pupil{0.05, 0.05, 0.08};
                blend(c, pupil,
                      ellipse_mask(u, v, ex, ey, p.pupil_r, p.pupil_r, soft) * face);
            }

            const double mouth_cy = cy + p.mouth_dy + p.mouth_curve * std::cos((u - cx) * 12.0);
            blend(c, p.mouth,
                  ellipse_mask(u, v, cx, mouth_cy, p.mouth_w, p.mouth_h, soft) * face);

            img.at(0, y, x) = static_cast<float>(std::clamp(c.r * brightness * tint_r, 0.0, 1.0));
            img.at(1, y, x) = static_cast<float>(std::clamp(c.g * brightness, 0.0, 1.0));
            img.at(2, y, x) = static_cast<float>(std::clamp(c.b * brightness * tint_b, 0.0, 1.0));
        }
    }
    return img;
}

void write_toy_corpus(const std::filesystem::path& dir, const ToyFacesSpec& spec) {
    std::filesystem::create_directories(dir);
    char name[64];
    for (int id = 0; id < spec.identities; ++id)
        for (int v = 0; v < spec.variants; ++v) {
            std::snprintf(name, sizeof(name), "id%03d_var%02d.png", id, v);
            write_png(dir / name, toy_face(spec, id, v));
        }
}

}  // namespace latref::pipeline
