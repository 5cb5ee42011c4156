#include "pofl/chain.hpp"
#include "pofl/contracts.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace pofl::chain {

namespace {

digest32 hash_tx_content(tx_kind kind, const byte_vec &content) {
    ser::writer w;
    w.put_u8(uint8_t(kind));
    w.put_bytes(content);
    return blk(w.bytes());
}

constexpr uint8_t block_record_tag = 0x00;

} // namespace

byte_vec task_publication_tx::content_bytes() const {
    ser::writer w;
    w.put_i64(reward);
    w.put_i64(hosting_fee);
    w.put_f64_vec(initial_params);
    w.put_u8(uint8_t(metric));
    w.put_u64(release_height);
    w.put_digest(test_digest);
    w.put_u64(timestamp_ms);
    w.put_bytes(requester_pk);
    return w.take();
}

digest32 task_publication_tx::compute_id() const {
    return hash_tx_content(tx_kind::task_publication, content_bytes());
}

byte_vec payment_tx::content_bytes() const {
    ser::writer w;
    w.put_digest(ref_tx);
    w.put_digest(to_wallet);
    w.put_i64(amount);
    w.put_u8(uint8_t(purpose));
    w.put_u64(timestamp_ms);
    w.put_bytes(payer_pk);
    return w.take();
}

digest32 payment_tx::compute_id() const {
    return hash_tx_content(tx_kind::payment, content_bytes());
}

byte_vec fl_model_tx::content_bytes() const {
    ser::writer w;
    w.put_digest(task_tx);
    w.put_digest(model_digest);
    w.put_f64(reference_score);
    w.put_i64(participation_fee);
    w.put_u64(timestamp_ms);
    w.put_u64(issue_height);
    w.put_bytes(pool_key.bytes);
    w.put_u32(uint32_t(pool_key.keys.size()));
    for (const auto &k : pool_key.keys)
        w.put_bytes(k);
    return w.take();
}

digest32 fl_model_tx::compute_id() const {
    return hash_tx_content(tx_kind::fl_model, content_bytes());
}

digest32 tx_id(const tx_variant &tx) {
    return std::visit([](const auto &t) { return t.id; }, tx);
}

uint64_t tx_timestamp(const tx_variant &tx) {
    return std::visit([](const auto &t) { return t.timestamp_ms; }, tx);
}

byte_vec serialize_tx(const tx_variant &tx) {
    ser::writer w;
    if (const auto *t = std::get_if<task_publication_tx>(&tx)) {
        w.put_u8(uint8_t(tx_kind::task_publication));
        w.put_digest(t->id);
        w.put_bytes(t->content_bytes());
        w.put_bytes(t->signature);
    } else if (const auto *p = std::get_if<payment_tx>(&tx)) {
        w.put_u8(uint8_t(tx_kind::payment));
        w.put_digest(p->id);
        w.put_bytes(p->content_bytes());
        w.put_bytes(p->signature);
    } else {
        const auto &m = std::get<fl_model_tx>(tx);
        w.put_u8(uint8_t(tx_kind::fl_model));
        w.put_digest(m.id);
        w.put_bytes(m.content_bytes());
        w.put_bytes(m.multisig.bytes);
        w.put_u32(uint32_t(m.multisig.signer_set.size()));
        for (const auto &k : m.multisig.signer_set)
            w.put_bytes(k);
    }
    return w.take();
}

tx_variant deserialize_tx(ser::reader &r) {
    auto kind = tx_kind(r.get_u8());
    digest32 id = r.get_digest();
    byte_vec content = r.get_bytes();
    ser::reader c(content);
    switch (kind) {
    case tx_kind::task_publication: {
        task_publication_tx t;
        t.id = id;
        t.reward = c.get_i64();
        t.hosting_fee = c.get_i64();
        t.initial_params = c.get_f64_vec();
        t.metric = metric_kind(c.get_u8());
        t.release_height = c.get_u64();
        t.test_digest = c.get_digest();
        t.timestamp_ms = c.get_u64();
        t.requester_pk = c.get_bytes();
        t.signature = r.get_bytes();
        return t;
    }
    case tx_kind::payment: {
        payment_tx p;
        p.id = id;
        p.ref_tx = c.get_digest();
        p.to_wallet = c.get_digest();
        p.amount = c.get_i64();
        p.purpose = payment_purpose(c.get_u8());
        p.timestamp_ms = c.get_u64();
        p.payer_pk = c.get_bytes();
        p.signature = r.get_bytes();
        return p;
    }
    case tx_kind::fl_model: {
        fl_model_tx m;
        m.id = id;
        m.task_tx = c.get_digest();
        m.model_digest = c.get_digest();
        m.reference_score = c.get_f64();
        m.participation_fee = c.get_i64();
        m.timestamp_ms = c.get_u64();
        m.issue_height = c.get_u64();
        m.pool_key.bytes = c.get_bytes();
        uint32_t nk = c.get_u32();
        for (uint32_t i = 0; i < nk; ++i)
            m.pool_key.keys.push_back(c.get_bytes());
        m.multisig.bytes = r.get_bytes();
        uint32_t ns = r.get_u32();
        for (uint32_t i = 0; i < ns; ++i)
            m.multisig.signer_set.push_back(r.get_bytes());
        return m;
    }
    }
    throw ser::decode_error("unknown transaction kind");
}

namespace {

byte_vec serialize_meta_core(const block_meta &m) {
    ser::writer w;
    w.put_u8(uint8_t(m.kind));
    w.put_digest(m.task_id);
    w.put_u32(uint32_t(m.ranking.size()));
    for (const auto &e : m.ranking) {
        w.put_digest(e.model_id);
        w.put_f64(e.score);
        w.put_u8(e.evaluated ? 1 : 0);
    }
    w.put_digest(m.next_seed);
    return w.take();
}

byte_vec vote_record_message(const vote_record &v, const digest32 &value, uint64_t height,
                             uint32_t stage, const digest32 &seed) {
    ser::writer w;
    w.put_digest(value);
    w.put_u64(height);
    w.put_u32(stage);
    w.put_digest(seed);
    w.put_u64(v.timestamp_ms);
    w.put_bytes(v.voter_pk);
    w.put_bytes(v.credential);
    return w.take();
}

} // namespace

digest32 block_hash(const block &b) {
    ser::writer w;
    w.put_u8(block_record_tag);
    w.put_digest(b.prev_hash);
    w.put_u64(b.timestamp_ms);
    w.put_digest(b.merkle_root);
    w.put_bytes(serialize_meta_core(b.meta));
    return blk(w.bytes());
}

byte_vec serialize_block(const block &b) {
    ser::writer w;
    w.put_digest(b.prev_hash);
    w.put_u64(b.timestamp_ms);
    w.put_digest(b.merkle_root);
    w.put_bytes(serialize_meta_core(b.meta));
    w.put_u32(b.meta.script.stage);
    w.put_digest(b.meta.script.value);
    w.put_u32(uint32_t(b.meta.script.votes.size()));
    for (const auto &v : b.meta.script.votes) {
        w.put_bytes(v.voter_pk);
        w.put_bytes(v.credential);
        w.put_bytes(v.signature);
        w.put_u64(v.timestamp_ms);
    }
    w.put_u32(uint32_t(b.body.size()));
    for (const auto &tx : b.body)
        w.put_bytes(serialize_tx(tx));
    return w.take();
}

block deserialize_block(std::span<const uint8_t> data) {
    ser::reader r(data);
    block b;
    b.prev_hash = r.get_digest();
    b.timestamp_ms = r.get_u64();
    b.merkle_root = r.get_digest();
    byte_vec meta = r.get_bytes();
    ser::reader mr(meta);
    b.meta.kind = settlement_kind(mr.get_u8());
    b.meta.task_id = mr.get_digest();
    uint32_t ne = mr.get_u32();
    for (uint32_t i = 0; i < ne; ++i) {
        ranking_entry e;
        e.model_id = mr.get_digest();
        e.score = mr.get_f64();
        e.evaluated = mr.get_u8() != 0;
        b.meta.ranking.push_back(e);
    }
    b.meta.next_seed = mr.get_digest();
    b.meta.script.stage = r.get_u32();
    b.meta.script.value = r.get_digest();
    uint32_t nv = r.get_u32();
    for (uint32_t i = 0; i < nv; ++i) {
        vote_record v;
        v.voter_pk = r.get_bytes();
        v.credential = r.get_bytes();
        v.signature = r.get_bytes();
        v.timestamp_ms = r.get_u64();
        b.meta.script.votes.push_back(std::move(v));
    }
    uint32_t nt = r.get_u32();
    for (uint32_t i = 0; i < nt; ++i) {
        byte_vec raw = r.get_bytes();
        ser::reader tr(raw);
        b.body.push_back(deserialize_tx(tr));
    }
    if (!r.at_end())
        throw ser::decode_error("trailing bytes after block record");
    return b;
}

digest32 merkle_root_of_leaves(const std::vector<digest32> &leaves) {
    if (leaves.empty())
        return sha256(std::string_view{});
    std::vector<digest32> level = leaves;
    if (level.size() == 1) {
        byte_vec buf(level[0].begin(), level[0].end());
        return sha256(buf);
    }
    while (level.size() > 1) {
        if (level.size() % 2 != 0)
            level.push_back(level.back());
        std::vector<digest32> next;
        next.reserve(level.size() / 2);
        for (size_t i = 0; i < level.size(); i += 2) {
            byte_vec buf;
            buf.reserve(64);
            buf.insert(buf.end(), level[i].begin(), level[i].end());
            buf.insert(buf.end(), level[i + 1].begin(), level[i + 1].end());
            next.push_back(sha256(buf));
        }
        level = std::move(next);
    }
    return level[0];
}

digest32 merkle_root(const std::vector<tx_variant> &txs) {
    std::vector<digest32> leaves;
    leaves.reserve(txs.size());
    for (const auto &tx : txs)
        leaves.push_back(sha256(serialize_tx(tx)));
    return merkle_root_of_leaves(leaves);
}

currency ledger_state::balance_of(const digest32 &wallet) const {
    auto it = balances.find(wallet);
    return it == balances.end() ? 0 : it->second;
}

int64_t ledger_state::credit_of(const digest32 &wallet) const {
    auto it = credits.find(wallet);
    return it == credits.end() ? 0 : it->second;
}

int64_t ledger_state::total_credit() const {
    int64_t sum = 0;
    for (const auto &[_, c] : credits)
        sum += c;
    return sum;
}

currency ledger_state::total_currency() const {
    currency sum = escrow;
    for (const auto &[_, b] : balances)
        sum += b;
    return sum;
}

// The genesis block has no parent; its prev-hash slot commits to the full
// genesis configuration instead, so a tampered genesis cannot revalidate.
digest32 genesis_commitment(const genesis_config &cfg) {
    ser::writer w;
    w.put_u32(uint32_t(cfg.accounts.size()));
    for (const auto &acc : cfg.accounts) {
        w.put_bytes(acc.pk);
        w.put_i64(acc.balance);
        w.put_i64(acc.credit);
    }
    w.put_u64(cfg.params.min_train_period);
    w.put_u64(cfg.params.test_duration);
    w.put_u64(cfg.params.lookback_k);
    w.put_u32(cfg.params.proposer_target);
    w.put_u32(cfg.params.vote_target);
    w.put_i64(cfg.params.credit_validator);
    w.put_i64(cfg.params.credit_winner);
    w.put_i64(cfg.params.credit_qualified);
    w.put_i64(cfg.params.default_hosting_fee);
    w.put_i64(cfg.params.default_participation_fee);
    w.put_digest(cfg.seed);
    w.put_u64(cfg.timestamp_ms);
    return h2(w.bytes());
}

ledger_state make_genesis(const genesis_config &cfg) {
    ledger_state st;
    st.params = cfg.params;
    for (const auto &acc : cfg.accounts) {
        digest32 wallet = crypto::wallet_address(acc.pk);
        st.balances[wallet] += acc.balance;
        st.credits[wallet] += acc.credit;
        st.keys[wallet] = acc.pk;
    }
    block genesis;
    genesis.prev_hash = genesis_commitment(cfg);
    genesis.timestamp_ms = cfg.timestamp_ms;
    genesis.merkle_root = merkle_root({});
    genesis.meta.next_seed = cfg.seed;
    st.head_block = std::move(genesis);
    st.block_height = 0;
    return st;
}

verdict validate_task_tx(const ledger_state &state, const task_publication_tx &tx,
                         uint64_t current_height) {
    if (tx.compute_id() != tx.id)
        return {false, "id mismatch"};
    if (!crypto::verify(tx.requester_pk, byte_vec(tx.id.begin(), tx.id.end()),
                        crypto::signature{tx.signature}))
        return {false, "bad signature"};
    if (tx.reward <= 0)
        return {false, "non-positive reward"};
    if (tx.hosting_fee < 0)
        return {false, "negative hosting fee"};
    digest32 wallet = crypto::wallet_address(tx.requester_pk);
    if (state.balance_of(wallet) < tx.reward + tx.hosting_fee)
        return {false, "insufficient funds"};
    if (tx.release_height < current_height ||
        tx.release_height - current_height < state.params.min_train_period)
        return {false, "training window too short"};
    return {true, ""};
}

verdict validate_model_tx(const ledger_state &state, const fl_model_tx &tx,
                          const task_state &task) {
    if (tx.compute_id() != tx.id)
        return {false, "id mismatch"};
    if (tx.task_tx != task.tx.id)
        return {false, "task mismatch"};
    if (tx.participation_fee < 0)
        return {false, "negative participation fee"};
    if (tx.issue_height > task.tx.release_height)
        return {false, "issued in testing phase"};
    auto dep = state.deposits.find(tx.id);
    if (dep == state.deposits.end() || dep->second < tx.participation_fee)
        return {false, "deposit below participation fee"};
    crypto::aggregated_key expect;
    try {
        expect = crypto::aggregate_pubkeys(tx.pool_key.keys);
    } catch (const std::invalid_argument &) {
        return {false, "malformed pool key"};
    }
    if (expect.bytes != tx.pool_key.bytes)
        return {false, "pool key mismatch"};
    if (!crypto::verify_multisig(tx.pool_key, byte_vec(tx.id.begin(), tx.id.end()), tx.multisig))
        return {false, "bad multisignature"};
    return {true, ""};
}

std::vector<digest32> order_task_queue(const ledger_state &state, uint64_t current_height) {
    struct entry {
        digest32 id;
        long double score;
        uint64_t ts;
    };
    std::vector<entry> rows;
    for (const auto &[id, task] : state.tasks) {
        if (!task.in_training(current_height))
            continue;
        long double remaining = (long double)(task.tx.release_height - current_height);
        rows.push_back({id, (long double)(task.tx.reward) * remaining, task.tx.timestamp_ms});
    }
    std::sort(rows.begin(), rows.end(), [](const entry &a, const entry &b) {
        if (a.score != b.score)
            return a.score > b.score;
        if (a.ts != b.ts)
            return a.ts < b.ts;
        return a.id < b.id;
    });
    std::vector<digest32> out;
    out.reserve(rows.size());
    for (const auto &r : rows)
        out.push_back(r.id);
    return out;
}

digest32 next_seed_for(const digest32 &prev_seed, uint64_t height) {
    ser::writer w;
    w.put_digest(prev_seed);
    w.put_u64(height);
    return h2(w.bytes());
}

digest32 empty_block_sentinel(uint64_t height, const digest32 &prev_hash) {
    ser::writer w;
    w.put_u8(0x45); // 'E'
    w.put_u64(height);
    w.put_digest(prev_hash);
    return blk(w.bytes());
}

std::optional<digest32> check_script_vote(const ledger_state &state, const vote_record &v,
                                          const digest32 &value, uint64_t height, uint32_t stage,
                                          const digest32 &seed, uint32_t committee_target,
                                          vote_verdict_cache *cache) {
    std::string key;
    if (cache != nullptr) {
        key.reserve(v.signature.size() + v.voter_pk.size());
        key.append(v.signature.begin(), v.signature.end());
        key.append(v.voter_pk.begin(), v.voter_pk.end());
        auto it = cache->find(key);
        if (it != cache->end())
            return it->second;
    }
    std::optional<digest32> out;
    do {
        digest32 wallet = crypto::wallet_address(v.voter_pk);
        auto known = state.keys.find(wallet);
        if (known == state.keys.end() || known->second != v.voter_pk)
            break;
        crypto::sortition_params sp;
        sp.height = height;
        sp.stage = stage;
        sp.seed = seed;
        sp.total_credit = state.total_credit();
        sp.committee_size = committee_target;
        sp.active_keys = uint32_t(state.keys.size());
        sp.credit = state.credit_of(wallet);
        if (sp.total_credit <= 0)
            break;
        crypto::sortition_credential cred;
        cred.proof = v.credential;
        cred.height = height;
        cred.stage = stage;
        cred.seed = seed;
        if (!crypto::verify_credential(v.voter_pk, cred, sp))
            break;
        byte_vec msg = vote_record_message(v, value, height, stage, seed);
        if (!crypto::verify(v.voter_pk, msg, crypto::signature{v.signature}))
            break;
        out = wallet;
    } while (false);
    if (cache != nullptr)
        cache->emplace(std::move(key), out);
    return out;
}

verdict check_script(const ledger_state &state, const block &b, vote_verdict_cache *cache) {
    const block_script &sc = b.meta.script;
    uint64_t height = state.height() + 1;
    digest32 hash = block_hash(b);
    digest32 sentinel = empty_block_sentinel(height, b.prev_hash);
    bool empty_path = b.body.empty() && b.meta.kind == settlement_kind::none;
    if (sc.value != hash && !(empty_path && sc.value == sentinel))
        return {false, "script votes a different value"};
    if (state.total_credit() <= 0)
        return {false, "no credit in ledger"};
    std::set<digest32> voters;
    for (const auto &v : sc.votes) {
        auto wallet = check_script_vote(state, v, sc.value, height, sc.stage, state.seed(),
                                        state.params.vote_target, cache);
        if (wallet)
            voters.insert(*wallet);
    }
    int needed = cert_threshold(state.params.vote_target);
    if (int(voters.size()) < needed)
        return {false, "script below vote threshold"};
    return {true, ""};
}

byte_vec make_vote_signing_bytes(const vote_record &v, const digest32 &value, uint64_t height,
                                 uint32_t stage, const digest32 &seed) {
    return vote_record_message(v, value, height, stage, seed);
}

verdict apply_single_tx(ledger_state &st, const tx_variant &tx, uint64_t height,
                        settlement_kind block_kind, const digest32 &settle_task) {
    digest32 id = tx_id(tx);
    if (st.seen_txs.contains(id))
        return {false, "transaction replay"};

    if (const auto *p = std::get_if<payment_tx>(&tx)) {
        if (p->compute_id() != p->id)
            return {false, "payment id mismatch"};
        if (p->amount <= 0)
            return {false, "non-positive payment"};
        if (p->from_escrow()) {
            if (block_kind == settlement_kind::none)
                return {false, "escrow payment outside settlement"};
            if (p->ref_tx != settle_task)
                return {false, "escrow payment for wrong task"};
            if (st.escrow < p->amount)
                return {false, "escrow overdraw"};
            st.escrow -= p->amount;
            st.balances[p->to_wallet] += p->amount;
        } else {
            if (!crypto::verify(p->payer_pk, byte_vec(p->id.begin(), p->id.end()),
                                crypto::signature{p->signature}))
                return {false, "bad payment signature"};
            digest32 payer = crypto::wallet_address(p->payer_pk);
            if (st.balance_of(payer) < p->amount)
                return {false, "payment overdraw"};
            if (p->purpose == payment_purpose::escrow_deposit) {
                st.balances[payer] -= p->amount;
                st.escrow += p->amount;
                st.deposits[p->ref_tx] += p->amount;
            } else if (p->purpose == payment_purpose::transfer) {
                st.balances[payer] -= p->amount;
                st.balances[p->to_wallet] += p->amount;
            } else {
                return {false, "signed payment must fund escrow or transfer"};
            }
        }
    } else if (const auto *t = std::get_if<task_publication_tx>(&tx)) {
        verdict v = validate_task_tx(st, *t, height);
        // Balance may already sit in escrow via the paired deposit.
        if (!v.ok && v.reason != "insufficient funds")
            return {false, "task tx invalid: " + v.reason};
        if (st.tasks.count(t->id))
            return {false, "task already registered"};
        auto dep = st.deposits.find(t->id);
        if (dep == st.deposits.end() || dep->second < t->reward + t->hosting_fee)
            return {false, "task not funded"};
        task_state ts_new;
        ts_new.tx = *t;
        ts_new.published_height = height;
        ts_new.funded = true;
        st.tasks[t->id] = std::move(ts_new);
    } else {
        const auto &m = std::get<fl_model_tx>(tx);
        auto task_it = st.tasks.find(m.task_tx);
        if (task_it == st.tasks.end())
            return {false, "model tx for unknown task"};
        if (task_it->second.settled || task_it->second.forfeited ||
            (block_kind != settlement_kind::none && settle_task == m.task_tx))
            return {false, "model tx for closed task"};
        if (m.issue_height > height)
            return {false, "model tx from the future"};
        verdict v = validate_model_tx(st, m, task_it->second);
        if (!v.ok)
            return {false, "model tx invalid: " + v.reason};
        task_it->second.submissions.push_back(m);
    }
    st.seen_txs.insert(id);
    return {true, ""};
}

namespace {

struct plan_key {
    digest32 to;
    currency amount;
    uint8_t purpose;
    digest32 ref;

    auto operator<=>(const plan_key &) const = default;
};

verdict apply_txs(ledger_state &st, const block &b, uint64_t height,
                  std::vector<payment_tx> &escrow_payments) {
    uint64_t prev_ts = 0;
    digest32 prev_id{};
    bool first = true;
    for (const auto &tx : b.body) {
        digest32 id = tx_id(tx);
        uint64_t ts = tx_timestamp(tx);
        if (!first && (ts < prev_ts || (ts == prev_ts && !(prev_id < id))))
            return {false, "body not in timestamp order"};
        first = false;
        prev_ts = ts;
        prev_id = id;
        verdict v = apply_single_tx(st, tx, height, b.meta.kind, b.meta.task_id);
        if (!v.ok)
            return v;
        if (const auto *p = std::get_if<payment_tx>(&tx))
            if (p->from_escrow())
                escrow_payments.push_back(*p);
    }
    return {true, ""};
}

} // namespace

apply_result apply_block(const ledger_state &state, const block &b, const apply_options &opts) {
    if (b.prev_hash != state.head_hash())
        return {std::nullopt, "parent mismatch"};
    if (b.timestamp_ms < state.head().timestamp_ms)
        return {std::nullopt, "timestamp regression"};
    if (b.merkle_root != merkle_root(b.body))
        return {std::nullopt, "merkle root mismatch"};
    uint64_t height = state.height() + 1;
    if (b.meta.next_seed != next_seed_for(state.seed(), height))
        return {std::nullopt, "seed chain broken"};
    if (opts.check_script) {
        verdict sv = check_script(state, b, opts.vote_cache);
        if (!sv.ok)
            return {std::nullopt, sv.reason};
    }

    ledger_state next = state;
    std::vector<payment_tx> escrow_payments;

    const task_state *settle_task = nullptr;
    if (b.meta.kind != settlement_kind::none) {
        auto it = state.tasks.find(b.meta.task_id);
        if (it == state.tasks.end())
            return {std::nullopt, "settlement for unknown task"};
        if (it->second.settled || it->second.forfeited)
            return {std::nullopt, "task already closed"};
        settle_task = &it->second;
        std::set<digest32> known_models;
        for (const auto &sub : it->second.submissions)
            known_models.insert(sub.model_digest);
        std::set<digest32> ranked;
        for (const auto &e : b.meta.ranking) {
            if (!known_models.count(e.model_id))
                return {std::nullopt, "ranking references unknown model"};
            if (!ranked.insert(e.model_id).second)
                return {std::nullopt, "duplicate model in ranking"};
        }
        if (b.meta.kind == settlement_kind::forfeited) {
            if (!b.meta.ranking.empty())
                return {std::nullopt, "forfeiture carries a ranking"};
            if (height <= it->second.tx.release_height + state.params.test_duration)
                return {std::nullopt, "forfeiture before window end"};
        }
    }

    verdict tv = apply_txs(next, b, height, escrow_payments);
    if (!tv.ok)
        return {std::nullopt, tv.reason};

    if (settle_task != nullptr) {
        if (opts.check_settlement_plan) {
            std::vector<digest32> validators;
            const block_script &parent_script = state.head().meta.script;
            std::set<digest32> seen;
            for (const auto &v : parent_script.votes) {
                digest32 w = crypto::wallet_address(v.voter_pk);
                if (seen.insert(w).second)
                    validators.push_back(w);
            }
            contracts::settlement_plan plan = contracts::block_rewarding(
                state, *settle_task, b.meta.ranking,
                b.meta.kind == settlement_kind::forfeited, validators);
            std::multiset<plan_key> want, got;
            for (const auto &t : plan.transfers)
                want.insert({t.to_wallet, t.amount, uint8_t(t.purpose), t.ref_tx});
            for (const auto &p : escrow_payments)
                got.insert({p.to_wallet, p.amount, uint8_t(p.purpose), p.ref_tx});
            if (want != got)
                return {std::nullopt, "settlement payments do not match the plan"};
            for (const auto &cd : plan.credit_deltas)
                next.credits[cd.wallet] += cd.delta;
        }
        task_state &ts = next.tasks[b.meta.task_id];
        if (b.meta.kind == settlement_kind::ranked) {
            ts.settled = true;
            ts.test_released = true;
        } else {
            ts.forfeited = true;
        }
        next.deposits.erase(b.meta.task_id);
        for (const auto &sub : ts.submissions)
            next.deposits.erase(sub.id);
        ts.submissions.clear();
        ts.submissions.shrink_to_fit();
    } else if (!escrow_payments.empty()) {
        return {std::nullopt, "escrow payment outside settlement"};
    }

    next.head_block = b;
    ++next.block_height;
    return {std::move(next), ""};
}

std::string dump_chain(const std::vector<block> &blocks) {
    std::ostringstream out;
    for (const auto &b : blocks)
        out << hex_encode(serialize_block(b)) << "\n";
    return out.str();
}

std::vector<block> parse_chain_dump(std::string_view text) {
    std::vector<block> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos)
            nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty())
            continue;
        byte_vec raw = hex_decode(line);
        out.push_back(deserialize_block(std::span<const uint8_t>(raw.data(), raw.size())));
    }
    return out;
}

} // namespace pofl::chain
