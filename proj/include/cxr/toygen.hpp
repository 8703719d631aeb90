#ifndef CXR_TOYGEN_HPP
#define CXR_TOYGEN_HPP

// Synthetic desk-scale dataset: three separable grayscale pattern classes
// with per-image phase, frequency jitter, and additive noise. Patterns are
// chosen to survive the training augmentations (rotations up to 15 degrees,
// shifts, flips, mild scaling): healthy is horizontal bands, non-covid
// pneumonia vertical bands, covid pneumonia concentric rings.
//
// Image i (in manifest order) draws only from substream(i) of the dataset
// seed, so the pixels of any one image are independent of how many others
// exist and identical across runs.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxr/image_io.hpp"
#include "cxr/manifest.hpp"
#include "cxr/rng.hpp"

namespace cxr {

struct toy_spec {
    std::size_t n_per_class = 100;
    std::size_t image_size = 64;
};

namespace detail {

inline std::vector<std::uint8_t> render_toy_image(diagnosis label, std::size_t size,
                                                  rng_stream rng) {
    // draw order: phase, frequency jitter, then one noise value per pixel
    const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double freq_jitter = rng.uniform(0.9, 1.1);
    const double period = static_cast<double>(size) / 8.0 * freq_jitter;
    const double two_pi = 2.0 * 3.14159265358979323846;
    const double cx = (static_cast<double>(size) - 1.0) / 2.0;
    const double cy = (static_cast<double>(size) - 1.0) / 2.0;

    std::vector<std::uint8_t> pix(size * size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            double t = 0.0;
            switch (label) {
                case diagnosis::healthy: t = static_cast<double>(y); break;
                case diagnosis::non_covid_pneumonia: t = static_cast<double>(x); break;
                case diagnosis::covid_pneumonia:
                    t = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
                    break;
            }
            double v = 0.5 + 0.35 * std::sin(two_pi * t / period + phase);
            v += rng.uniform(-0.08, 0.08);
            v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            pix[y * size + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return pix;
}

inline std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace detail

// Writes images under out_dir/images/ plus out_dir/manifest.csv and returns
// the records. Optional attributes are deliberately patchy: every third view,
// every fourth age, and every fifth sex entry is absent, like real metadata.
inline std::vector<manifest_record> generate_toy_dataset(const std::filesystem::path& out_dir,
                                                         const toy_spec& spec, std::uint64_t seed) {
    if (spec.n_per_class == 0) throw image_error("toy dataset needs at least one image per class");
    if (spec.image_size < 8) throw image_error("toy image size must be at least 8");
    std::filesystem::create_directories(out_dir / "images");

    const rng_stream root(seed);
    std::vector<manifest_record> records;
    records.reserve(spec.n_per_class * num_classes);
    std::size_t index = 0;
    for (int cls = 0; cls < num_classes; ++cls) {
        const auto label = static_cast<diagnosis>(cls);
        for (std::size_t i = 0; i < spec.n_per_class; ++i, ++index) {
            const std::string stem =
                std::string("toy_") + to_string(label) + "_" + detail::zero_pad(i, 4);
            const std::string rel = "images/" + stem + ".png";
            const auto pix = detail::render_toy_image(label, spec.image_size, root.substream(index));
            write_png_gray(out_dir / rel, pix.data(), spec.image_size, spec.image_size);

            manifest_record rec;
            rec.id = stem;
            rec.filepath = rel;
            rec.label = label;
            rec.view = index % 3 == 0  ? cxr_view::unknown
                       : index % 2 == 0 ? cxr_view::pa
                                        : cxr_view::ap;
            if (index % 4 != 0) rec.age = static_cast<int>(20 + (index * 7) % 60);
            if (index % 5 != 0) rec.sex = index % 2 == 0 ? patient_sex::male : patient_sex::female;
            records.push_back(std::move(rec));
        }
    }
    save_manifest(records, out_dir / "manifest.csv");
    return records;
}

}  // namespace cxr

#endif
