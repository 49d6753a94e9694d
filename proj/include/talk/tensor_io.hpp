#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "talk/tensor.hpp"

namespace talk {

// Parse or write failure; offset is the byte position the problem was found at.
struct format_error : std::runtime_error {
    format_error(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

using TensorVariant = std::variant<Tensor<float>, Tensor<double>>;
using NamedTensors = std::map<std::string, TensorVariant>;

namespace detail {

constexpr char kMagic[4] = {'T', 'A', 'L', 'K'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::uint8_t* p;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t bytes, const char* what) const {
        if (pos + bytes > size) throw format_error(std::string("truncated file while reading ") + what, pos);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return p[pos++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
};

template <class T>
void append_payload(std::vector<std::uint8_t>& buf, const Tensor<T>& t) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if constexpr (sizeof(T) == 4) {
            std::uint32_t bits;
            std::memcpy(&bits, &t[i], 4);
            put_u32(buf, bits);
        } else {
            std::uint64_t bits;
            std::memcpy(&bits, &t[i], 8);
            put_u64(buf, bits);
        }
    }
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), detail::kMagic, detail::kMagic + 4);
    detail::put_u32(buf, detail::kVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, var] : tensors) {
        if (name.empty()) throw std::invalid_argument("tensor name must be non-empty");
        detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        std::visit(
            [&buf](const auto& t) {
                buf.push_back(std::is_same_v<std::decay_t<decltype(t)>, Tensor<float>> ? 0 : 1);
            },
            var);
        const Shape& shape = std::visit([](const auto& t) -> const Shape& { return t.shape(); }, var);
        detail::put_u32(buf, static_cast<std::uint32_t>(shape.size()));
        for (auto e : shape) detail::put_u64(buf, static_cast<std::uint64_t>(e));
        std::visit([&buf](const auto& t) { detail::append_payload(buf, t); }, var);
    }
    return buf;
}

inline NamedTensors decode_tensors(const std::uint8_t* data, std::size_t size) {
    detail::Reader r{data, size};
    r.need(4, "magic");
    if (std::memcmp(data, detail::kMagic, 4) != 0) throw format_error("bad magic, expected \"TALK\"", 0);
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != detail::kVersion)
        throw format_error("unsupported version " + std::to_string(version), 4);
    const std::uint32_t count = r.u32("tensor count");
    NamedTensors out;
    for (std::uint32_t idx = 0; idx < count; ++idx) {
        const std::uint32_t name_len = r.u32("name length");
        r.need(name_len, "name");
        std::string name(reinterpret_cast<const char*>(data + r.pos), name_len);
        r.pos += name_len;
        if (name.empty()) throw format_error("empty tensor name", r.pos - name_len);
        const std::size_t dtype_pos = r.pos;
        const std::uint8_t dtype = r.u8("dtype");
        if (dtype > 1) throw format_error("unknown dtype tag " + std::to_string(dtype), dtype_pos);
        const std::uint32_t rank = r.u32("rank");
        if (rank == 0) throw format_error("rank must be >= 1", r.pos - 4);
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::size_t extent_pos = r.pos;
            const std::uint64_t e = r.u64("extent");
            if (e == 0) throw format_error("zero extent", extent_pos);
            shape[d] = static_cast<std::int64_t>(e);
        }
        const std::int64_t numel = shape_numel(shape);
        if (dtype == 0) {
            Tensor<float> t(shape);
            for (std::int64_t i = 0; i < numel; ++i) {
                const std::uint32_t bits = r.u32("f32 payload");
                std::memcpy(&t[i], &bits, 4);
            }
            if (!out.emplace(name, std::move(t)).second)
                throw format_error("duplicate tensor name \"" + name + "\"", r.pos);
        } else {
            Tensor<double> t(shape);
            for (std::int64_t i = 0; i < numel; ++i) {
                const std::uint64_t bits = r.u64("f64 payload");
                std::memcpy(&t[i], &bits, 8);
            }
            if (!out.emplace(name, std::move(t)).second)
                throw format_error("duplicate tensor name \"" + name + "\"", r.pos);
        }
    }
    return out;
}

inline void save_tensors(const NamedTensors& tensors, const std::string& path) {
    const std::vector<std::uint8_t> buf = encode_tensors(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline NamedTensors load_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_tensors(buf.data(), buf.size());
}

// Typed access into a loaded checkpoint.
template <class T>
const Tensor<T>& get_tensor(const NamedTensors& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw std::out_of_range("missing tensor \"" + name + "\"");
    const Tensor<T>* t = std::get_if<Tensor<T>>(&it->second);
    if (!t) throw std::runtime_error("tensor \"" + name + "\" has a different dtype than requested");
    return *t;
}

}  // namespace talk
