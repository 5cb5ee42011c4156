#pragma once

#include "pofl/crypto.hpp"
#include "pofl/serial.hpp"

#include <map>
#include <optional>
#include <unordered_map>
#include <set>
#include <variant>

namespace pofl::chain {

using currency = int64_t;

enum class tx_kind : uint8_t { task_publication = 1, payment = 2, fl_model = 3 };
enum class metric_kind : uint8_t { accuracy = 1, loss = 2, f1 = 3 };

// Payments either fund a referenced transaction into escrow, move value
// directly between wallets, or carry an escrow-sourced settlement transfer
// decided by the rewarding contract.
enum class payment_purpose : uint8_t {
    escrow_deposit = 1,
    reward = 2,
    fee_split = 3,
    refund = 4,
    forfeiture = 5,
    transfer = 6,
};

struct task_publication_tx {
    digest32 id{};
    currency reward = 0;          // p_t
    currency hosting_fee = 0;     // xi_1
    std::vector<double> initial_params;
    metric_kind metric = metric_kind::accuracy;
    uint64_t release_height = 0;  // i_t, test release block height
    digest32 test_digest{};       // dID
    uint64_t timestamp_ms = 0;
    crypto::public_key requester_pk;
    byte_vec signature;

    byte_vec content_bytes() const;
    digest32 compute_id() const;
};

struct payment_tx {
    digest32 id{};
    digest32 ref_tx{};            // transaction being funded / settled
    digest32 to_wallet{};         // zero wallet means "to escrow"
    currency amount = 0;
    payment_purpose purpose = payment_purpose::escrow_deposit;
    uint64_t timestamp_ms = 0;
    crypto::public_key payer_pk;  // empty for escrow-sourced settlements
    byte_vec signature;

    byte_vec content_bytes() const;
    digest32 compute_id() const;
    bool from_escrow() const { return payer_pk.empty(); }
};

struct fl_model_tx {
    digest32 id{};
    digest32 task_tx{};
    digest32 model_digest{};      // mID
    double reference_score = 0.0; // rs, informational only
    currency participation_fee = 0; // xi_2
    uint64_t timestamp_ms = 0;
    uint64_t issue_height = 0;    // i_m
    crypto::aggregated_key pool_key; // apk_j, member keys included
    crypto::multi_signature multisig;

    byte_vec content_bytes() const;
    digest32 compute_id() const;
    digest32 pool_wallet() const { return h2(pool_key.bytes); }
};

using tx_variant = std::variant<task_publication_tx, payment_tx, fl_model_tx>;

digest32 tx_id(const tx_variant &tx);
uint64_t tx_timestamp(const tx_variant &tx);
byte_vec serialize_tx(const tx_variant &tx);
tx_variant deserialize_tx(ser::reader &r);

struct ranking_entry {
    digest32 model_id{};
    double score = 0.0;
    bool evaluated = false;
};

enum class settlement_kind : uint8_t { none = 0, ranked = 1, forfeited = 2 };

struct vote_record {
    crypto::public_key voter_pk;
    byte_vec credential;
    byte_vec signature;
    uint64_t timestamp_ms = 0;
};

// Aggregated committee votes certifying the block. Stored in the metadata
// but excluded from the block hash (the votes are *about* that hash).
struct block_script {
    uint32_t stage = 0;
    digest32 value{};
    std::vector<vote_record> votes;
};

struct block_meta {
    settlement_kind kind = settlement_kind::none;
    digest32 task_id{};
    std::vector<ranking_entry> ranking; // mrList of the settled task
    digest32 next_seed{};
    block_script script;
};

struct block {
    digest32 prev_hash{};
    uint64_t timestamp_ms = 0;
    digest32 merkle_root{};
    block_meta meta;
    std::vector<tx_variant> body;
};

// Hash covers header and metadata except the vote script.
digest32 block_hash(const block &b);
byte_vec serialize_block(const block &b); // full record, script included
block deserialize_block(std::span<const uint8_t> data);

// Leaf = sha256(tx bytes), parents pair left||right, odd levels duplicate
// the last node. Empty body hashes the empty string; a single leaf is
// hashed once more.
digest32 merkle_root(const std::vector<tx_variant> &txs);
digest32 merkle_root_of_leaves(const std::vector<digest32> &leaves);

struct protocol_params {
    uint64_t min_train_period = 20;
    uint64_t test_duration = 10;   // Delta_i
    uint64_t lookback_k = 10;      // sortition eligibility window
    uint32_t proposer_target = 5;  // expected proposer-committee size
    uint32_t vote_target = 60;     // expected voting-committee size
    int64_t credit_validator = 2;  // chi_1
    int64_t credit_winner = 4;     // chi_2
    int64_t credit_qualified = 1;  // chi_3
    int64_t default_hosting_fee = 10;       // xi_1 suggested by the system
    int64_t default_participation_fee = 5;  // xi_2 suggested by the system
};

// Byzantine tolerance implied by the expected committee size; vote counting
// is one credentialed member = one vote.
inline int nominal_f(uint32_t committee_target) {
    return committee_target == 0 ? 0 : int((committee_target - 1) / 3);
}
inline int cert_threshold(uint32_t committee_target) {
    return 2 * nominal_f(committee_target) + 1;
}

struct task_state {
    task_publication_tx tx;
    uint64_t published_height = 0;
    bool funded = false;
    bool test_released = false;
    bool settled = false;
    bool forfeited = false;
    std::vector<fl_model_tx> submissions;

    bool open(uint64_t) const { return funded && !settled && !forfeited; }
    bool in_training(uint64_t height) const { return open(height) && height <= tx.release_height; }
    bool in_testing(uint64_t height) const {
        return open(height) && height >= tx.release_height;
    }
    bool window_expired(uint64_t height, uint64_t delta) const {
        return height > tx.release_height + delta;
    }
};

struct genesis_account {
    crypto::public_key pk;
    currency balance = 0;
    int64_t credit = 0;
};

struct genesis_config {
    std::vector<genesis_account> accounts;
    protocol_params params;
    digest32 seed{};
    uint64_t timestamp_ms = 0;
};

// Replay-protection set over transaction ids; a sorted flat vector so state
// snapshots copy with one allocation.
class tx_id_set {
public:
    bool contains(const digest32 &id) const {
        auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
        return it != ids_.end() && *it == id;
    }
    void insert(const digest32 &id) {
        auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
        if (it == ids_.end() || *it != id)
            ids_.insert(it, id);
    }
    size_t size() const { return ids_.size(); }

private:
    std::vector<digest32> ids_;
};

// The replicated state: balances, escrow, credits, open tasks and the chain
// head. Only the head block is carried (full chains live with whoever
// archives them), so snapshots stay cheap to copy.
struct ledger_state {
    protocol_params params;
    std::map<digest32, currency> balances;
    currency escrow = 0;
    std::map<digest32, int64_t> credits;          // by wallet
    std::map<digest32, crypto::public_key> keys;  // wallet -> pk of known nodes
    std::map<digest32, currency> deposits;        // funding per referenced tx id
    std::map<digest32, task_state> tasks;
    tx_id_set seen_txs;
    block head_block;
    uint64_t block_height = 0;

    uint64_t height() const { return block_height; }
    const block &head() const { return head_block; }
    digest32 head_hash() const { return block_hash(head_block); }
    const digest32 &seed() const { return head_block.meta.next_seed; }

    currency balance_of(const digest32 &wallet) const;
    int64_t credit_of(const digest32 &wallet) const;
    int64_t total_credit() const;
    currency total_currency() const; // balances + escrow
};

digest32 genesis_commitment(const genesis_config &cfg);
ledger_state make_genesis(const genesis_config &cfg);

struct verdict {
    bool ok = false;
    std::string reason;

    explicit operator bool() const { return ok; }
};

// Mempool-time admission checks (signature, funds, training window).
verdict validate_task_tx(const ledger_state &state, const task_publication_tx &tx,
                         uint64_t current_height);

// Contract-side model transaction check: multisig, deposit, issue height.
verdict validate_model_tx(const ledger_state &state, const fl_model_tx &tx,
                          const task_state &task);

// Tasks in their training phase ordered by descending reward * remaining
// height, publication timestamp breaking ties.
std::vector<digest32> order_task_queue(const ledger_state &state, uint64_t current_height);

// Vote verdicts keyed by signature-plus-key bytes; the signature binds the
// full vote message, so one check covers every holder of the same vote.
using vote_verdict_cache = std::unordered_map<std::string, std::optional<digest32>>;

struct apply_options {
    bool check_script = true;
    bool check_settlement_plan = true;
    vote_verdict_cache *vote_cache = nullptr; // optional cross-replica memo
};

struct apply_result {
    std::optional<ledger_state> next;
    std::string reason;

    explicit operator bool() const { return next.has_value(); }
};

// Deterministic state transition. On any violation the original state is
// untouched and the reason names the failing rule.
apply_result apply_block(const ledger_state &state, const block &b,
                         const apply_options &opts = {});

// Applies one transaction in place under the same rules apply_block uses for
// the block body; block proposers sweep their mempool through this.
verdict apply_single_tx(ledger_state &st, const tx_variant &tx, uint64_t height,
                        settlement_kind block_kind, const digest32 &settle_task);

// Certificate check used both inside apply_block and by chain revalidation.
verdict check_script(const ledger_state &state, const block &b,
                     vote_verdict_cache *cache = nullptr);

// One vote of a script checked against the ledger's credit view; returns the
// voter wallet when the credential and signature hold.
std::optional<digest32> check_script_vote(const ledger_state &state, const vote_record &v,
                                          const digest32 &value, uint64_t height, uint32_t stage,
                                          const digest32 &seed, uint32_t committee_target,
                                          vote_verdict_cache *cache);

// Seed published in block at `height` for the next round, a pure function of
// the chain so far.
digest32 next_seed_for(const digest32 &prev_seed, uint64_t height);

// Vote value certifying an empty block at a height (no candidate agreed).
digest32 empty_block_sentinel(uint64_t height, const digest32 &prev_hash);

// Bytes a committee member signs when voting `value` at (height, stage).
byte_vec make_vote_signing_bytes(const vote_record &v, const digest32 &value, uint64_t height,
                                 uint32_t stage, const digest32 &seed);

std::string dump_chain(const std::vector<block> &blocks); // one hex block per line
std::vector<block> parse_chain_dump(std::string_view text);

} // namespace pofl::chain
