#ifndef CXR_CHECKPOINT_HPP
#define CXR_CHECKPOINT_HPP

// Binary weight snapshot. Layout, all integers little-endian:
//   magic "CXRT", version u32, tensor count u32, then per tensor:
//   name length u16, name bytes, rank u8, each dim u32, values f32 row-major.
// Only parameter tensors are stored; optimizer state is not.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cxr/net.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

class checkpoint_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct byte_reader {
    const unsigned char* p;
    std::size_t n;
    std::size_t pos = 0;

    void need(std::size_t k, const char* what) {
        if (n - pos < k) throw checkpoint_error(std::string("truncated checkpoint while reading ") + what);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return p[pos++];
    }
    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const model_state<T>& m) {
    std::string buf;
    buf += "CXRT";
    detail::put_u32(buf, checkpoint_version);
    detail::put_u32(buf, static_cast<std::uint32_t>(m.params.size()));
    for (std::size_t t = 0; t < m.params.size(); ++t) {
        const std::string& name = m.names[t];
        if (name.size() > 0xffff) throw checkpoint_error("tensor name too long: " + name);
        detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
        buf += name;
        const auto& shape = m.params[t].shape;
        if (shape.size() > 0xff) throw checkpoint_error("tensor rank too large: " + name);
        buf.push_back(static_cast<char>(shape.size()));
        for (std::size_t d : shape) detail::put_u32(buf, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < m.params[t].size(); ++i)
            detail::put_f32(buf, static_cast<float>(m.params[t][i]));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw checkpoint_error("cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw checkpoint_error("write failed for " + path.string());
}

// Loads weights into an existing model. Every tensor must match the model's
// name and shape at the same position; the first offending tensor is named in
// the error. The model is only touched after the whole file validates.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, model_state<T>& m) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw checkpoint_error("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    detail::byte_reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "CXRT", 4) != 0)
        throw checkpoint_error(path.string() + " is not a checkpoint (bad magic)");
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != checkpoint_version)
        throw checkpoint_error("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32("tensor count");
    if (count != m.params.size())
        throw checkpoint_error("checkpoint has " + std::to_string(count) + " tensors, model has " +
                               std::to_string(m.params.size()));

    std::vector<std::vector<float>> values(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint16_t name_len = r.u16("tensor name length");
        r.need(name_len, "tensor name");
        std::string name(bytes.data() + r.pos, name_len);
        r.pos += name_len;
        if (name != m.names[t])
            throw checkpoint_error("tensor " + std::to_string(t) + " is \"" + name +
                                   "\", model expects \"" + m.names[t] + "\"");
        const std::uint8_t rank = r.u8("tensor rank");
        std::vector<std::size_t> shape(rank);
        for (std::uint8_t d = 0; d < rank; ++d) shape[d] = r.u32("tensor dims");
        if (shape != m.params[t].shape)
            throw checkpoint_error("shape mismatch for " + name + ": checkpoint " +
                                   shape_string(shape) + ", model " + shape_string(m.params[t].shape));
        values[t].resize(m.params[t].size());
        for (auto& v : values[t]) v = r.f32(name.c_str());
    }
    if (r.pos != r.n) throw checkpoint_error("trailing bytes after last tensor in " + path.string());

    for (std::uint32_t t = 0; t < count; ++t)
        for (std::size_t i = 0; i < values[t].size(); ++i)
            m.params[t][i] = static_cast<T>(values[t][i]);
}

}  // namespace cxr

#endif
