#pragma once

#include "pofl/chain.hpp"

#include <functional>
#include <unordered_map>

namespace pofl::contracts {

// Content-addressed off-chain store. Keys are the plain sha256 of the
// stored bytes, mirroring how dID and mID are published on chain.
class content_store {
public:
    digest32 put(byte_vec bytes);
    std::optional<byte_vec> get(const digest32 &key) const;
    bool contains(const digest32 &key) const;
    size_t size() const { return items_.size(); }

private:
    std::unordered_map<digest32, byte_vec, digest_hasher> items_;
};

// Scores a model blob against a test-set blob under the task metric. The
// simulator and the FL engine supply different evaluators behind this hook.
using evaluator_fn =
    std::function<double(const byte_vec &model, const byte_vec &test_set, chain::metric_kind)>;

struct ranking_result {
    std::vector<chain::ranking_entry> entries;
    bool requester_default = false; // test set never materialized in the window
};

// Deterministic model ranking: validates each model transaction, fetches the
// model and test set from the store inside the testing window, scores what it
// can and appends unreachable models as "unevaluated". Duplicate mIDs keep
// only the earliest transaction. After the window closes nothing is scored.
ranking_result model_ranking(const chain::ledger_state &state, const chain::task_state &task,
                             const std::vector<chain::fl_model_tx> &model_txs,
                             const content_store &store, uint64_t current_height,
                             const evaluator_fn &evaluate);

struct transfer {
    digest32 to_wallet{};
    chain::currency amount = 0;
    chain::payment_purpose purpose = chain::payment_purpose::reward;
    digest32 ref_tx{};
};

struct credit_delta {
    digest32 wallet{};
    int64_t delta = 0;
};

struct settlement_plan {
    std::vector<transfer> transfers; // all escrow-sourced
    std::vector<credit_delta> credit_deltas;
    digest32 winner_pool{}; // zero when no winner
    bool has_winner = false;
    std::vector<digest32> qualified_pools; // W_tau, by pool wallet
};

// Qualification rule: evaluated pools scoring strictly above the first
// quartile of evaluated scores (direction per metric); three or fewer
// evaluated pools all qualify.
std::vector<size_t> qualified_entries(const std::vector<chain::ranking_entry> &entries,
                                      chain::metric_kind metric);

// Settlement per the rewarding rules: task reward to the best pool, hosting
// fee plus forfeited participation fees split over honest validators,
// deposits refunded to qualified pools, credits bumped for validators,
// winning-pool members and other qualified pools. On requester default the
// whole escrowed amount for the task is split over the validators.
settlement_plan block_rewarding(const chain::ledger_state &state, const chain::task_state &task,
                                const std::vector<chain::ranking_entry> &ranking,
                                bool requester_default,
                                const std::vector<digest32> &honest_validator_wallets);

struct release_outcome {
    bool accepted = false;
    std::string reason;
    digest32 stored{};
};

// Requesters hand over the test set once the training phase ends; the bytes
// must hash to the published dID.
release_outcome release_test_set(const chain::task_state &task, const byte_vec &bytes,
                                 uint64_t height, content_store &store);

} // namespace pofl::contracts
