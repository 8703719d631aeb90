#ifndef CXR_TENSOR_HPP
#define CXR_TENSOR_HPP

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cxr {

// Dense n-dimensional array, row-major. Used for network parameters and
// gradients; images get their own rank-3 type below.
template <typename T = float>
struct tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    tensor() = default;
    explicit tensor(std::vector<std::size_t> s, T fill = T{})
        : shape(std::move(s)), data(count(shape), fill) {}

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::size_t size() const { return data.size(); }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    static tensor zeros_like(const tensor& other) { return tensor(other.shape); }

    bool same_shape(const tensor& other) const { return shape == other.shape; }
};

// Dense rank-3 image, channels x height x width, row-major within a channel.
// After normalization every element lies in [0, 1].
template <typename T = float>
struct image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> data;

    image() = default;
    image(std::size_t c, std::size_t h, std::size_t w, T fill = T{})
        : channels(c), height(h), width(w), data(c * h * w, fill) {
        if (c == 0 || h == 0 || w == 0)
            throw std::invalid_argument("image: dimensions must be positive");
    }

    std::size_t size() const { return data.size(); }

    T& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }
    const T& at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }

    T* channel(std::size_t c) { return data.data() + c * height * width; }
    const T* channel(std::size_t c) const { return data.data() + c * height * width; }

    bool same_shape(const image& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

}  // namespace cxr

#endif
