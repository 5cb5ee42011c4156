#pragma once

#include "pofl/serial.hpp"
#include "pofl/sha256.hpp"

#include <optional>

namespace pofl::crypto {

// Keys, signatures, multi-signature aggregation and credit-weighted
// sortition. The default backend is a non-cryptographic mock: a signature is
// the keyed digest H1(secret || msg) and the public key is a version-tagged
// copy of the verification scalar, which lets any holder of the public key
// recompute and check signatures. The public surface below is the
// abstraction boundary; a pairing-based backend would replace the bodies in
// crypto.cpp without touching callers.

using public_key = byte_vec;
using secret_key = std::array<uint8_t, 32>;

struct key_pair {
    secret_key secret{};
    public_key pub;
    digest32 wallet{}; // h2(pub)

    bool operator==(const key_pair &) const = default;
};

struct signature {
    byte_vec bytes;

    bool operator==(const signature &) const = default;
};

struct multi_signature {
    byte_vec bytes;
    std::vector<public_key> signer_set; // canonically sorted

    bool operator==(const multi_signature &) const = default;
};

struct aggregated_key {
    byte_vec bytes;
    std::vector<public_key> keys; // canonically sorted

    bool operator==(const aggregated_key &) const = default;
};

key_pair keygen(const std::array<uint8_t, 32> &seed);

signature sign(const secret_key &sk, std::span<const uint8_t> msg);
bool verify(const public_key &pk, std::span<const uint8_t> msg, const signature &sig);

inline signature sign(const secret_key &sk, const byte_vec &msg) {
    return sign(sk, std::span<const uint8_t>(msg.data(), msg.size()));
}
inline bool verify(const public_key &pk, const byte_vec &msg, const signature &sig) {
    return verify(pk, std::span<const uint8_t>(msg.data(), msg.size()), sig);
}

// Per-key coefficient binding each key to the full signer set.
digest32 key_coefficient(const public_key &pk, const std::vector<public_key> &all_keys);

// Throws std::invalid_argument on an empty list or duplicate keys.
aggregated_key aggregate_pubkeys(std::vector<public_key> keys);

// Component signatures must all cover the same message; the coefficient for
// each signer is applied here. `sigs` and `keys` are aligned lists.
multi_signature aggregate_sigs(const std::vector<signature> &sigs,
                               const std::vector<public_key> &keys);

bool verify_multisig(const aggregated_key &apk, std::span<const uint8_t> msg,
                     const multi_signature &msig);
inline bool verify_multisig(const aggregated_key &apk, const byte_vec &msg,
                            const multi_signature &msig) {
    return verify_multisig(apk, std::span<const uint8_t>(msg.data(), msg.size()), msig);
}

digest32 wallet_address(const public_key &pk);

struct sortition_credential {
    byte_vec proof; // signature over (height, stage, seed)
    long double hash_fraction = 0.0L;
    uint64_t height = 0;
    uint32_t stage = 0;
    digest32 seed{};
};

struct sortition_params {
    uint64_t height = 0;
    uint32_t stage = 0;
    digest32 seed{};
    int64_t credit = 0;
    int64_t total_credit = 0;    // over the eligible key set
    uint32_t committee_size = 0; // expected committee size target
    uint32_t active_keys = 0;    // eligible keys in the lookback window
};

// Selection probability for one node: min(1, credit * committee_size /
// total_credit), so the expected committee size over all eligible nodes hits
// the target. Returns the credential only when selected. Throws on
// total_credit <= 0 or active_keys == 0.
std::optional<sortition_credential> sortition(const key_pair &kp, const sortition_params &p);

long double sortition_threshold(const sortition_params &p);

// Public-side check: recomputes the hash fraction from the proof and applies
// the same inequality. Malformed proofs verify false, never throw.
bool verify_credential(const public_key &pk, const sortition_credential &cred,
                       const sortition_params &p);

byte_vec sortition_message(uint64_t height, uint32_t stage, const digest32 &seed);

} // namespace pofl::crypto
