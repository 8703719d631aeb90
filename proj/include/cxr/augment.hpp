#ifndef CXR_AUGMENT_HPP
#define CXR_AUGMENT_HPP

// Batch-level augmentation: mixup (one convex combination per batch) and
// RICAP (four random crops patched into each output image, labels weighted
// by patch area), plus the policy that chains per-example affine warps with
// the batch-level methods.

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cxr/affine.hpp"
#include "cxr/manifest.hpp"
#include "cxr/parallel.hpp"
#include "cxr/rng.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

class augment_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Probability vector over the three classes; mixing augmentations put their
// weights here.
struct soft_label {
    std::array<double, num_classes> w{};

    static soft_label one_hot(int cls) {
        if (cls < 0 || cls >= num_classes)
            throw augment_error("one_hot: class index " + std::to_string(cls) + " out of range");
        soft_label l;
        l.w[cls] = 1.0;
        return l;
    }

    double sum() const { return w[0] + w[1] + w[2]; }
};

struct augmentation_policy {
    bool conventional_enabled = false;
    bool mixup_enabled = false;
    double mixup_alpha = 0.1;
    bool ricap_enabled = false;
    double ricap_beta = 0.3;
};

// The augmentation combinations exercised in the ablation runs.
enum class augmentation_preset {
    none,
    conv,
    mixup,
    ricap,
    conv_mixup,
    conv_ricap,
    conv_mixup_ricap,
};

constexpr std::array<augmentation_preset, 7> all_augmentation_presets = {
    augmentation_preset::none,       augmentation_preset::conv,
    augmentation_preset::mixup,      augmentation_preset::ricap,
    augmentation_preset::conv_mixup, augmentation_preset::conv_ricap,
    augmentation_preset::conv_mixup_ricap,
};

inline const char* to_string(augmentation_preset p) {
    switch (p) {
        case augmentation_preset::none: return "none";
        case augmentation_preset::conv: return "conv";
        case augmentation_preset::mixup: return "mixup";
        case augmentation_preset::ricap: return "ricap";
        case augmentation_preset::conv_mixup: return "conv+mixup";
        case augmentation_preset::conv_ricap: return "conv+ricap";
        case augmentation_preset::conv_mixup_ricap: return "conv+mixup+ricap";
    }
    return "?";
}

inline augmentation_preset parse_augmentation_preset(const std::string& s) {
    for (auto p : all_augmentation_presets)
        if (s == to_string(p)) return p;
    throw augment_error("unknown augmentation preset '" + s + "'");
}

inline augmentation_policy preset_policy(augmentation_preset p, double mixup_alpha = 0.1,
                                         double ricap_beta = 0.3) {
    augmentation_policy pol;
    pol.mixup_alpha = mixup_alpha;
    pol.ricap_beta = ricap_beta;
    switch (p) {
        case augmentation_preset::none: break;
        case augmentation_preset::conv: pol.conventional_enabled = true; break;
        case augmentation_preset::mixup: pol.mixup_enabled = true; break;
        case augmentation_preset::ricap: pol.ricap_enabled = true; break;
        case augmentation_preset::conv_mixup:
            pol.conventional_enabled = pol.mixup_enabled = true;
            break;
        case augmentation_preset::conv_ricap:
            pol.conventional_enabled = pol.ricap_enabled = true;
            break;
        case augmentation_preset::conv_mixup_ricap:
            pol.conventional_enabled = pol.mixup_enabled = pol.ricap_enabled = true;
            break;
    }
    return pol;
}

template <typename T = float>
struct example_batch {
    std::vector<image<T>> images;
    std::vector<soft_label> labels;

    std::size_t size() const { return images.size(); }
};

namespace detail {

template <typename T>
void require_uniform_shapes(const example_batch<T>& batch) {
    if (batch.images.size() != batch.labels.size())
        throw augment_error("batch images and labels differ in length");
    for (std::size_t i = 1; i < batch.images.size(); ++i)
        if (!batch.images[i].same_shape(batch.images[0]))
            throw augment_error("batch images differ in shape at index " + std::to_string(i));
}

}  // namespace detail

// x_i <- lambda * x_i + (1 - lambda) * x_partner, labels mixed with the same
// lambda. lambda == 1 reproduces the batch bit-exactly.
template <typename T>
void mixup_apply(example_batch<T>& batch, double lambda, const std::vector<std::size_t>& partner) {
    detail::require_uniform_shapes(batch);
    if (partner.size() != batch.size())
        throw augment_error("mixup partner list length mismatch");

    const T lam = static_cast<T>(lambda);
    const T one_minus = static_cast<T>(1.0 - lambda);
    std::vector<image<T>> mixed_images(batch.size());
    std::vector<soft_label> mixed_labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const image<T>& a = batch.images[i];
        const image<T>& b = batch.images[partner[i]];
        image<T> out = a;
        for (std::size_t k = 0; k < out.data.size(); ++k)
            out.data[k] = lam * a.data[k] + one_minus * b.data[k];
        mixed_images[i] = std::move(out);
        for (int c = 0; c < num_classes; ++c)
            mixed_labels[i].w[c] =
                lambda * batch.labels[i].w[c] + (1.0 - lambda) * batch.labels[partner[i]].w[c];
    }
    batch.images = std::move(mixed_images);
    batch.labels = std::move(mixed_labels);
}

// Draw order: lambda ~ Beta(alpha, alpha), then the partner permutation.
template <typename T>
void mixup_batch(example_batch<T>& batch, double alpha, rng_stream& rng) {
    if (batch.size() == 0) throw augment_error("mixup: empty batch");
    if (alpha <= 0.0) throw augment_error("mixup: alpha must be positive");
    const double lambda = rng.beta(alpha, alpha);
    const std::vector<std::size_t> partner = rng.permutation(batch.size());
    mixup_apply(batch, lambda, partner);
}

// One RICAP assembly: boundary (w, h), four donor indices and their crop
// offsets. Quadrant k sizes: 0 -> (w, h), 1 -> (W-w, h), 2 -> (w, H-h),
// 3 -> (W-w, H-h).
struct ricap_draw {
    long boundary_w = 0;
    long boundary_h = 0;
    std::array<std::size_t, 4> donors{};
    std::array<std::array<long, 2>, 4> offsets{};  // (x, y) per quadrant
};

inline std::array<std::array<long, 2>, 4> ricap_quadrant_sizes(const ricap_draw& d, long W, long H) {
    const long w = d.boundary_w, h = d.boundary_h;
    return {{{w, h}, {W - w, h}, {w, H - h}, {W - w, H - h}}};
}

// Draw order per example: u, v, then per quadrant donor index, crop x, crop y.
inline ricap_draw sample_ricap_draw(rng_stream& rng, long W, long H, std::size_t batch_size,
                                    double beta) {
    ricap_draw d;
    const double u = rng.beta(beta, beta);
    const double v = rng.beta(beta, beta);
    // round-half-up with clamping
    long w = static_cast<long>(std::floor(u * static_cast<double>(W) + 0.5));
    long h = static_cast<long>(std::floor(v * static_cast<double>(H) + 0.5));
    d.boundary_w = w < 0 ? 0 : (w > W ? W : w);
    d.boundary_h = h < 0 ? 0 : (h > H ? H : h);
    const auto sizes = ricap_quadrant_sizes(d, W, H);
    for (int k = 0; k < 4; ++k) {
        d.donors[k] = static_cast<std::size_t>(rng.below(batch_size));
        d.offsets[k][0] = static_cast<long>(rng.below(static_cast<std::uint64_t>(W - sizes[k][0] + 1)));
        d.offsets[k][1] = static_cast<long>(rng.below(static_cast<std::uint64_t>(H - sizes[k][1] + 1)));
    }
    return d;
}

template <typename T>
std::pair<image<T>, soft_label> ricap_compose(const example_batch<T>& batch, const ricap_draw& d) {
    const image<T>& ref = batch.images[0];
    const long W = static_cast<long>(ref.width);
    const long H = static_cast<long>(ref.height);
    const auto sizes = ricap_quadrant_sizes(d, W, H);
    const std::array<std::array<long, 2>, 4> dest = {
        {{0, 0}, {d.boundary_w, 0}, {0, d.boundary_h}, {d.boundary_w, d.boundary_h}}};

    image<T> out(ref.channels, ref.height, ref.width);
    soft_label label;
    for (int k = 0; k < 4; ++k) {
        const long qw = sizes[k][0], qh = sizes[k][1];
        if (qw == 0 || qh == 0) continue;  // zero-area quadrant: no pixels, weight 0
        const image<T>& donor = batch.images[d.donors[k]];
        for (std::size_t c = 0; c < out.channels; ++c) {
            const T* src = donor.channel(c);
            T* dst = out.channel(c);
            for (long y = 0; y < qh; ++y) {
                const T* srow = src + (d.offsets[k][1] + y) * W + d.offsets[k][0];
                T* drow = dst + (dest[k][1] + y) * W + dest[k][0];
                for (long x = 0; x < qw; ++x) drow[x] = srow[x];
            }
        }
        const double weight =
            static_cast<double>(qw) * static_cast<double>(qh) / (static_cast<double>(W) * static_cast<double>(H));
        for (int c = 0; c < num_classes; ++c)
            label.w[c] += weight * batch.labels[d.donors[k]].w[c];
    }
    return {std::move(out), label};
}

template <typename T>
void ricap_batch(example_batch<T>& batch, double beta, rng_stream& rng) {
    detail::require_uniform_shapes(batch);
    if (batch.size() < 4) throw augment_error("ricap: batch size must be at least 4");
    if (beta <= 0.0) throw augment_error("ricap: beta must be positive");
    const image<T>& ref = batch.images[0];
    if (ref.width < 2 || ref.height < 2)
        throw augment_error("ricap: image dimensions must be at least 2x2");

    const long W = static_cast<long>(ref.width);
    const long H = static_cast<long>(ref.height);
    example_batch<T> out;
    out.images.resize(batch.size());
    out.labels.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ricap_draw d = sample_ricap_draw(rng, W, H, batch.size(), beta);
        auto [img, label] = ricap_compose(batch, d);
        out.images[i] = std::move(img);
        out.labels[i] = label;
    }
    batch = std::move(out);
}

// Enabled stages in fixed order: per-example affine, then mixup, then RICAP.
// Affine parameters come from per-example substreams (example i uses
// rng.substream(i)), so the per-example work parallelizes without changing
// results; the batch-level stages draw from `rng` itself.
template <typename T>
void augment_training_batch(example_batch<T>& batch, const augmentation_policy& policy,
                            rng_stream& rng, int workers = 1) {
    detail::require_uniform_shapes(batch);
    if (policy.conventional_enabled) {
        parallel_for(batch.size(), workers, [&](std::size_t i) {
            rng_stream sub = rng.substream(i);
            batch.images[i] = apply_affine(batch.images[i], sample_affine(sub));
        });
    }
    if (policy.mixup_enabled) mixup_batch(batch, policy.mixup_alpha, rng);
    if (policy.ricap_enabled) ricap_batch(batch, policy.ricap_beta, rng);
}

}  // namespace cxr

#endif
