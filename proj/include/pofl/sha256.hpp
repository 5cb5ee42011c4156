#pragma once

#include "pofl/bytes.hpp"

namespace pofl {

digest32 sha256(std::span<const uint8_t> data);

inline digest32 sha256(const byte_vec &data) {
    return sha256(std::span<const uint8_t>(data.data(), data.size()));
}

inline digest32 sha256(std::string_view s) {
    return sha256(std::span<const uint8_t>(reinterpret_cast<const uint8_t *>(s.data()), s.size()));
}

// Domain-separated instances. Every hash in the protocol is SHA-256 under one
// of three ASCII prefixes: "H1:" for signature material, "H2:" for key and
// address derivation, "BLK:" for transaction ids and block headers.
digest32 tagged_hash(std::string_view tag, std::span<const uint8_t> payload);

inline digest32 h1(std::span<const uint8_t> payload) { return tagged_hash("H1:", payload); }
inline digest32 h2(std::span<const uint8_t> payload) { return tagged_hash("H2:", payload); }
inline digest32 blk(std::span<const uint8_t> payload) { return tagged_hash("BLK:", payload); }

inline digest32 h1(const byte_vec &p) { return h1(std::span<const uint8_t>(p.data(), p.size())); }
inline digest32 h2(const byte_vec &p) { return h2(std::span<const uint8_t>(p.data(), p.size())); }
inline digest32 blk(const byte_vec &p) { return blk(std::span<const uint8_t>(p.data(), p.size())); }

// Maps a 256-bit digest to (0, 1] as (value + 1) / 2^256, so an all-zero
// digest still lands strictly above zero.
long double hash_to_unit(const digest32 &d);

} // namespace pofl
