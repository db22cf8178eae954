#pragma once

// Minimal protocol-buffers wire format reader/writer, enough for the ONNX
// messages the model layer touches. Fields a message type does not model
// are captured verbatim (tag and payload) so they survive a round trip.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "robustify/error.hpp"

namespace robustify::pb {

enum class WireType : std::uint32_t { Varint = 0, Fixed64 = 1, Bytes = 2, Fixed32 = 5 };

struct Field {
    std::uint32_t number = 0;
    WireType type = WireType::Varint;
    std::uint64_t varint = 0;
    std::uint32_t fixed32 = 0;
    std::uint64_t fixed64 = 0;
    std::string_view bytes;
    /// Entire encoded field, tag included.
    std::string_view raw;

    std::int64_t as_int64() const { return static_cast<std::int64_t>(varint); }
    float as_float() const { return std::bit_cast<float>(fixed32); }
    double as_double() const { return std::bit_cast<double>(fixed64); }
};

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    bool done() const { return pos_ >= data_.size(); }

    Field next()
    {
        const std::size_t start = pos_;
        const std::uint64_t key = varint();
        Field f;
        f.number = static_cast<std::uint32_t>(key >> 3);
        const auto wt = static_cast<std::uint32_t>(key & 7);
        if (f.number == 0)
            throw ModelError("protobuf: field number 0");
        switch (wt) {
        case 0:
            f.type = WireType::Varint;
            f.varint = varint();
            break;
        case 1:
            f.type = WireType::Fixed64;
            need(8);
            std::memcpy(&f.fixed64, data_.data() + pos_, 8);
            pos_ += 8;
            break;
        case 2: {
            f.type = WireType::Bytes;
            const std::uint64_t len = varint();
            if (len > data_.size() - pos_)
                throw ModelError("protobuf: length-delimited field runs past the end of the buffer");
            f.bytes = data_.substr(pos_, static_cast<std::size_t>(len));
            pos_ += static_cast<std::size_t>(len);
            break;
        }
        case 5:
            f.type = WireType::Fixed32;
            need(4);
            std::memcpy(&f.fixed32, data_.data() + pos_, 4);
            pos_ += 4;
            break;
        default: throw ModelError("protobuf: unsupported wire type " + std::to_string(wt));
        }
        f.raw = data_.substr(start, pos_ - start);
        return f;
    }

    std::uint64_t varint()
    {
        std::uint64_t v = 0;
        for (int shift = 0; shift < 64; shift += 7) {
            need(1);
            const auto b = static_cast<std::uint8_t>(data_[pos_++]);
            v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
            if (!(b & 0x80))
                return v;
        }
        throw ModelError("protobuf: varint longer than 10 bytes");
    }

private:
    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n)
            throw ModelError("protobuf: truncated message");
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

/// Decodes a packed repeated varint payload, or a single unpacked element.
inline void read_varints(const Field& f, std::vector<std::int64_t>& out)
{
    if (f.type == WireType::Varint) {
        out.push_back(f.as_int64());
        return;
    }
    if (f.type != WireType::Bytes)
        throw ModelError("protobuf: bad wire type for repeated integer field");
    Reader r(f.bytes);
    while (!r.done())
        out.push_back(static_cast<std::int64_t>(r.varint()));
}

inline void read_floats(const Field& f, std::vector<float>& out)
{
    if (f.type == WireType::Fixed32) {
        out.push_back(f.as_float());
        return;
    }
    if (f.type != WireType::Bytes || f.bytes.size() % 4)
        throw ModelError("protobuf: bad packed float field");
    const std::size_t n = f.bytes.size() / 4;
    const std::size_t base = out.size();
    out.resize(base + n);
    std::memcpy(out.data() + base, f.bytes.data(), n * 4);
}

inline void read_doubles(const Field& f, std::vector<double>& out)
{
    if (f.type == WireType::Fixed64) {
        out.push_back(f.as_double());
        return;
    }
    if (f.type != WireType::Bytes || f.bytes.size() % 8)
        throw ModelError("protobuf: bad packed double field");
    const std::size_t n = f.bytes.size() / 8;
    const std::size_t base = out.size();
    out.resize(base + n);
    std::memcpy(out.data() + base, f.bytes.data(), n * 8);
}

inline std::string_view expect_bytes(const Field& f, const char* what)
{
    if (f.type != WireType::Bytes)
        throw ModelError(std::string("protobuf: field '") + what + "' is not length-delimited");
    return f.bytes;
}

inline std::uint64_t expect_varint(const Field& f, const char* what)
{
    if (f.type != WireType::Varint)
        throw ModelError(std::string("protobuf: field '") + what + "' is not a varint");
    return f.varint;
}

class Writer {
public:
    void varint(std::uint64_t v)
    {
        while (v >= 0x80) {
            buf_.push_back(static_cast<char>((v & 0x7f) | 0x80));
            v >>= 7;
        }
        buf_.push_back(static_cast<char>(v));
    }

    void tag(std::uint32_t field, WireType wt) { varint((static_cast<std::uint64_t>(field) << 3) | static_cast<std::uint32_t>(wt)); }

    void int_field(std::uint32_t field, std::int64_t v)
    {
        tag(field, WireType::Varint);
        varint(static_cast<std::uint64_t>(v));
    }

    void float_field(std::uint32_t field, float v)
    {
        tag(field, WireType::Fixed32);
        const auto u = std::bit_cast<std::uint32_t>(v);
        char b[4];
        std::memcpy(b, &u, 4);
        buf_.append(b, 4);
    }

    void bytes_field(std::uint32_t field, std::string_view v)
    {
        tag(field, WireType::Bytes);
        varint(v.size());
        buf_.append(v.data(), v.size());
    }

    void string_field_if(std::uint32_t field, const std::string& v)
    {
        if (!v.empty())
            bytes_field(field, v);
    }

    void packed_ints(std::uint32_t field, const std::vector<std::int64_t>& v)
    {
        if (v.empty())
            return;
        Writer inner;
        for (auto x : v)
            inner.varint(static_cast<std::uint64_t>(x));
        bytes_field(field, inner.str());
    }

    /// Repeated scalars one tag per element, the proto2 default encoding.
    void repeated_ints(std::uint32_t field, const std::vector<std::int64_t>& v)
    {
        for (auto x : v)
            int_field(field, x);
    }

    void repeated_floats(std::uint32_t field, const std::vector<float>& v)
    {
        for (auto x : v)
            float_field(field, x);
    }

    void packed_floats(std::uint32_t field, const std::vector<float>& v)
    {
        if (v.empty())
            return;
        bytes_field(field, std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * 4));
    }

    void packed_doubles(std::uint32_t field, const std::vector<double>& v)
    {
        if (v.empty())
            return;
        bytes_field(field, std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * 8));
    }

    void raw(std::string_view bytes) { buf_.append(bytes.data(), bytes.size()); }

    const std::string& str() const { return buf_; }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

static_assert(std::endian::native == std::endian::little, "wire codec assumes a little-endian host");

} // namespace robustify::pb
