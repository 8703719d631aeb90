#ifndef CXR_AFFINE_HPP
#define CXR_AFFINE_HPP

// Conventional geometric augmentation: random rotation, shift, horizontal
// flip, scaling and shear, applied as a single inverse-mapped warp about the
// image center with bilinear interpolation and nearest-edge fill.

#include <array>
#include <cmath>
#include <cstring>

#include "cxr/rng.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

struct affine_params {
    double rotation_deg = 0.0;    // [-15, +15]
    double shift_x_frac = 0.0;    // [-0.15, +0.15] of width
    double shift_y_frac = 0.0;    // [-0.15, +0.15] of height
    bool flip_horizontal = false;
    double scale = 1.0;           // [0.85, 1.15]
    double shear_deg = 0.0;       // [-15, +15], x-shear angle

    static affine_params identity() { return {}; }

    bool is_identity() const {
        return rotation_deg == 0.0 && shift_x_frac == 0.0 && shift_y_frac == 0.0 &&
               !flip_horizontal && scale == 1.0 && shear_deg == 0.0;
    }
};

struct affine_ranges {
    double rotation_deg = 15.0;
    double shift_frac = 0.15;
    double scale_lo = 0.85;
    double scale_hi = 1.15;
    double shear_deg = 15.0;
};

// Draw order: rotation, shift x, shift y, flip, scale, shear.
inline affine_params sample_affine(rng_stream& rng, const affine_ranges& r = {}) {
    affine_params p;
    p.rotation_deg = rng.uniform(-r.rotation_deg, r.rotation_deg);
    p.shift_x_frac = rng.uniform(-r.shift_frac, r.shift_frac);
    p.shift_y_frac = rng.uniform(-r.shift_frac, r.shift_frac);
    p.flip_horizontal = rng.bernoulli(0.5);
    p.scale = rng.uniform(r.scale_lo, r.scale_hi);
    p.shear_deg = rng.uniform(-r.shear_deg, r.shear_deg);
    return p;
}

namespace detail {

template <typename T>
inline T lerp_exact(T a, T b, T t) {
    // a + t*(b-a): exact at t == 0 and for a == b, which keeps flips and
    // constant images bit-stable.
    return a + t * (b - a);
}

}  // namespace detail

// Inverse-mapped warp. The forward transform acts on centered coordinates as
// scale, then shear, then rotation, then pixel translation, with the
// horizontal flip applied last. Out-of-range samples clamp to the nearest
// edge pixel. Output values are clamped to [0, 1].
template <typename T>
image<T> apply_affine(const image<T>& img, const affine_params& p) {
    if (p.is_identity()) return img;

    const double theta = p.rotation_deg * (M_PI / 180.0);
    const double phi = p.shear_deg * (M_PI / 180.0);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double sh = std::tan(phi);
    const double s = p.scale;

    // A = R(theta) * Shear(phi) * Scale(s) on (x, y) column vectors.
    //   Shear: x' = x + tan(phi) * y
    const double a00 = s * ct, a01 = s * (ct * sh - st);
    const double a10 = s * st, a11 = s * (st * sh + ct);
    const double det = a00 * a11 - a01 * a10;
    const double i00 = a11 / det, i01 = -a01 / det;
    const double i10 = -a10 / det, i11 = a00 / det;

    const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
    const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
    const double tx = p.shift_x_frac * static_cast<double>(img.width);
    const double ty = p.shift_y_frac * static_cast<double>(img.height);
    const double flip = p.flip_horizontal ? -1.0 : 1.0;

    image<T> out(img.channels, img.height, img.width);
    const long w = static_cast<long>(img.width);
    const long h = static_cast<long>(img.height);
    for (std::size_t c = 0; c < img.channels; ++c) {
        const T* in = img.channel(c);
        T* dst = out.channel(c);
        for (long y = 0; y < h; ++y) {
            const double uy = static_cast<double>(y) - cy;
            for (long x = 0; x < w; ++x) {
                // Undo flip, then translation, then the linear part.
                const double ux = flip * (static_cast<double>(x) - cx) - tx;
                const double vy = uy - ty;
                const double sx = i00 * ux + i01 * vy + cx;
                const double sy = i10 * ux + i11 * vy + cy;

                double fx = sx < 0.0 ? 0.0 : (sx > w - 1 ? w - 1 : sx);
                double fy = sy < 0.0 ? 0.0 : (sy > h - 1 ? h - 1 : sy);
                long x0 = static_cast<long>(fx);
                long y0 = static_cast<long>(fy);
                if (x0 > w - 1) x0 = w - 1;
                if (y0 > h - 1) y0 = h - 1;
                const long x1 = x0 + 1 < w ? x0 + 1 : x0;
                const long y1 = y0 + 1 < h ? y0 + 1 : y0;
                const T wx = static_cast<T>(fx - static_cast<double>(x0));
                const T wy = static_cast<T>(fy - static_cast<double>(y0));

                const T top = detail::lerp_exact(in[y0 * w + x0], in[y0 * w + x1], wx);
                const T bot = detail::lerp_exact(in[y1 * w + x0], in[y1 * w + x1], wx);
                T v = detail::lerp_exact(top, bot, wy);
                if (v < T(0)) v = T(0);
                if (v > T(1)) v = T(1);
                dst[y * w + x] = v;
            }
        }
    }
    return out;
}

}  // namespace cxr

#endif
