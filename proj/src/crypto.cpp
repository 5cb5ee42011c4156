#include "pofl/crypto.hpp"

#include <algorithm>
#include <set>

namespace pofl::crypto {

namespace {

constexpr uint8_t mock_key_version = 0x01;
constexpr size_t mock_pk_size = 33; // version byte + 32-byte scalar

bool extract_scalar(const public_key &pk, secret_key &out) {
    if (pk.size() != mock_pk_size || pk[0] != mock_key_version)
        return false;
    std::copy(pk.begin() + 1, pk.end(), out.begin());
    return true;
}

digest32 keyed_digest(const secret_key &sk, std::span<const uint8_t> msg) {
    byte_vec buf;
    buf.reserve(sk.size() + msg.size());
    buf.insert(buf.end(), sk.begin(), sk.end());
    buf.insert(buf.end(), msg.begin(), msg.end());
    return h1(buf);
}

byte_vec serialize_key_list(const std::vector<public_key> &keys) {
    ser::writer w;
    w.put_u32(uint32_t(keys.size()));
    for (const auto &k : keys)
        w.put_bytes(k);
    return w.take();
}

// sig^coefficient in the mock: digest of (coefficient || sig).
digest32 weighted_sig(const digest32 &coeff, const byte_vec &sig) {
    ser::writer w;
    w.put_digest(coeff);
    w.put_bytes(sig);
    return h1(w.bytes());
}

} // namespace

key_pair keygen(const std::array<uint8_t, 32> &seed) {
    key_pair kp;
    kp.secret = seed;
    kp.pub.reserve(mock_pk_size);
    kp.pub.push_back(mock_key_version);
    kp.pub.insert(kp.pub.end(), seed.begin(), seed.end());
    kp.wallet = wallet_address(kp.pub);
    return kp;
}

digest32 wallet_address(const public_key &pk) {
    return h2(pk);
}

signature sign(const secret_key &sk, std::span<const uint8_t> msg) {
    digest32 d = keyed_digest(sk, msg);
    return signature{byte_vec(d.begin(), d.end())};
}

bool verify(const public_key &pk, std::span<const uint8_t> msg, const signature &sig) {
    secret_key scalar;
    if (!extract_scalar(pk, scalar))
        return false;
    if (sig.bytes.size() != 32)
        return false;
    digest32 expect = keyed_digest(scalar, msg);
    return std::equal(expect.begin(), expect.end(), sig.bytes.begin());
}

digest32 key_coefficient(const public_key &pk, const std::vector<public_key> &all_keys) {
    ser::writer w;
    w.put_bytes(pk);
    w.put_bytes(serialize_key_list(all_keys));
    return h2(w.bytes());
}

aggregated_key aggregate_pubkeys(std::vector<public_key> keys) {
    if (keys.empty())
        throw std::invalid_argument("aggregate_pubkeys: empty key list");
    std::sort(keys.begin(), keys.end());
    if (std::adjacent_find(keys.begin(), keys.end()) != keys.end())
        throw std::invalid_argument("aggregate_pubkeys: duplicate key");
    ser::writer w;
    w.put_u32(uint32_t(keys.size()));
    for (const auto &k : keys) {
        digest32 coeff = key_coefficient(k, keys);
        w.put_digest(coeff);
        w.put_bytes(k);
    }
    digest32 d = h2(w.bytes());
    return aggregated_key{byte_vec(d.begin(), d.end()), std::move(keys)};
}

multi_signature aggregate_sigs(const std::vector<signature> &sigs,
                               const std::vector<public_key> &keys) {
    if (sigs.empty() || sigs.size() != keys.size())
        throw std::invalid_argument("aggregate_sigs: need one signature per key");
    std::vector<size_t> order(keys.size());
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return keys[a] < keys[b]; });
    std::vector<public_key> sorted_keys;
    sorted_keys.reserve(keys.size());
    for (size_t i : order)
        sorted_keys.push_back(keys[i]);
    if (std::adjacent_find(sorted_keys.begin(), sorted_keys.end()) != sorted_keys.end())
        throw std::invalid_argument("aggregate_sigs: duplicate key");
    ser::writer w;
    w.put_u32(uint32_t(order.size()));
    for (size_t i : order) {
        digest32 coeff = key_coefficient(keys[i], sorted_keys);
        w.put_digest(weighted_sig(coeff, sigs[i].bytes));
    }
    digest32 d = h1(w.bytes());
    return multi_signature{byte_vec(d.begin(), d.end()), std::move(sorted_keys)};
}

bool verify_multisig(const aggregated_key &apk, std::span<const uint8_t> msg,
                     const multi_signature &msig) {
    if (apk.keys.empty() || apk.keys != msig.signer_set)
        return false;
    std::vector<signature> expected;
    expected.reserve(apk.keys.size());
    for (const auto &pk : apk.keys) {
        secret_key scalar;
        if (!extract_scalar(pk, scalar))
            return false;
        expected.push_back(sign(scalar, msg));
    }
    multi_signature recomputed;
    try {
        recomputed = aggregate_sigs(expected, apk.keys);
    } catch (const std::invalid_argument &) {
        return false;
    }
    // Binding check: the aggregated key must match its own key list.
    aggregated_key rekey = aggregate_pubkeys(apk.keys);
    return recomputed.bytes == msig.bytes && rekey.bytes == apk.bytes;
}

byte_vec sortition_message(uint64_t height, uint32_t stage, const digest32 &seed) {
    ser::writer w;
    w.put_u64(height);
    w.put_u32(stage);
    w.put_digest(seed);
    return w.take();
}

long double sortition_threshold(const sortition_params &p) {
    if (p.total_credit <= 0)
        throw std::invalid_argument("sortition: total credit must be positive");
    if (p.active_keys == 0)
        throw std::invalid_argument("sortition: no active keys");
    long double t = (long double)(p.credit) / (long double)(p.total_credit) *
                    (long double)(p.committee_size);
    return t > 1.0L ? 1.0L : t;
}

std::optional<sortition_credential> sortition(const key_pair &kp, const sortition_params &p) {
    long double threshold = sortition_threshold(p);
    byte_vec msg = sortition_message(p.height, p.stage, p.seed);
    signature proof = sign(kp.secret, msg);
    long double frac = hash_to_unit(sha256(proof.bytes));
    if (frac > threshold)
        return std::nullopt;
    return sortition_credential{proof.bytes, frac, p.height, p.stage, p.seed};
}

bool verify_credential(const public_key &pk, const sortition_credential &cred,
                       const sortition_params &p) {
    if (cred.height != p.height || cred.stage != p.stage || cred.seed != p.seed)
        return false;
    byte_vec msg = sortition_message(p.height, p.stage, p.seed);
    if (!verify(pk, msg, signature{cred.proof}))
        return false;
    long double frac = hash_to_unit(sha256(cred.proof));
    long double threshold;
    try {
        threshold = sortition_threshold(p);
    } catch (const std::invalid_argument &) {
        return false;
    }
    return frac <= threshold;
}

} // namespace pofl::crypto
