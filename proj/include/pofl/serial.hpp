#pragma once

#include "pofl/bytes.hpp"

#include <bit>
#include <cstring>

namespace pofl::ser {

// Canonical encoding used for everything that gets hashed or signed:
// integers are fixed-width big-endian, byte strings carry a 4-byte
// big-endian length prefix, vectors a 4-byte element count.
class writer {
public:
    void put_u8(uint8_t v) { out_.push_back(v); }

    void put_u32(uint32_t v) {
        for (int i = 3; i >= 0; --i)
            out_.push_back(uint8_t(v >> (8 * i)));
    }

    void put_u64(uint64_t v) {
        for (int i = 7; i >= 0; --i)
            out_.push_back(uint8_t(v >> (8 * i)));
    }

    void put_i64(int64_t v) { put_u64(uint64_t(v)); }

    void put_f64(double v) { put_u64(std::bit_cast<uint64_t>(v)); }

    void put_bytes(std::span<const uint8_t> b) {
        put_u32(uint32_t(b.size()));
        out_.insert(out_.end(), b.begin(), b.end());
    }

    void put_bytes(const byte_vec &b) { put_bytes(std::span<const uint8_t>(b.data(), b.size())); }

    void put_digest(const digest32 &d) { put_bytes(std::span<const uint8_t>(d.data(), d.size())); }

    void put_f64_vec(const std::vector<double> &v) {
        put_u32(uint32_t(v.size()));
        for (double x : v)
            put_f64(x);
    }

    const byte_vec &bytes() const { return out_; }
    byte_vec take() { return std::move(out_); }

private:
    byte_vec out_;
};

class decode_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class reader {
public:
    explicit reader(std::span<const uint8_t> data) : data_(data) {}
    explicit reader(const byte_vec &data) : data_(data.data(), data.size()) {}

    uint8_t get_u8() { return take(1)[0]; }

    uint32_t get_u32() {
        auto b = take(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v = v << 8 | b[size_t(i)];
        return v;
    }

    uint64_t get_u64() {
        auto b = take(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v = v << 8 | b[size_t(i)];
        return v;
    }

    int64_t get_i64() { return int64_t(get_u64()); }

    double get_f64() { return std::bit_cast<double>(get_u64()); }

    byte_vec get_bytes() {
        uint32_t n = get_u32();
        auto b = take(n);
        return byte_vec(b.begin(), b.end());
    }

    digest32 get_digest() {
        byte_vec b = get_bytes();
        if (b.size() != 32)
            throw decode_error("digest field must be 32 bytes");
        digest32 d;
        std::copy(b.begin(), b.end(), d.begin());
        return d;
    }

    std::vector<double> get_f64_vec() {
        uint32_t n = get_u32();
        std::vector<double> v;
        v.reserve(n);
        for (uint32_t i = 0; i < n; ++i)
            v.push_back(get_f64());
        return v;
    }

    bool at_end() const { return pos_ == data_.size(); }
    size_t remaining() const { return data_.size() - pos_; }

private:
    std::span<const uint8_t> take(size_t n) {
        if (data_.size() - pos_ < n)
            throw decode_error("record truncated");
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::span<const uint8_t> data_;
    size_t pos_ = 0;
};

} // namespace pofl::ser
