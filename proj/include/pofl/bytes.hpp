#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pofl {

using byte_vec = std::vector<uint8_t>;
using digest32 = std::array<uint8_t, 32>;

inline byte_vec to_bytes(std::string_view s) {
    return byte_vec(s.begin(), s.end());
}

std::string hex_encode(std::span<const uint8_t> data);
byte_vec hex_decode(std::string_view hex);

inline std::string hex_encode(const digest32 &d) {
    return hex_encode(std::span<const uint8_t>(d.data(), d.size()));
}

inline digest32 digest_from_hex(std::string_view hex) {
    byte_vec raw = hex_decode(hex);
    if (raw.size() != 32)
        throw std::invalid_argument("digest hex must decode to 32 bytes");
    digest32 d;
    std::copy(raw.begin(), raw.end(), d.begin());
    return d;
}

struct digest_hasher {
    size_t operator()(const digest32 &d) const noexcept {
        size_t h;
        std::copy_n(d.data(), sizeof(h), reinterpret_cast<uint8_t *>(&h));
        return h;
    }
};

} // namespace pofl
