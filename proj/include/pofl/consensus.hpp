#pragma once

#include "pofl/contracts.hpp"

namespace pofl::consensus {

// Value-grade outcome of the graded-consensus phase.
struct gc_outcome {
    std::optional<digest32> value;
    int grade = 0;              // 2, 1 or 0
    bool overload_fault = false; // two values both reached f+1 distinct voters
};

// Counts are distinct credentialed voters per value.
gc_outcome gc_evaluate(const std::map<digest32, int> &counts, int f);

struct signed_vote {
    digest32 value{};
    uint64_t height = 0;
    uint32_t stage = 0;
    digest32 seed{};
    chain::vote_record record;
};

signed_vote make_vote(const crypto::key_pair &kp, const crypto::sortition_credential &cred,
                      const digest32 &value, uint64_t height, uint32_t stage,
                      const digest32 &seed, uint64_t timestamp_ms);

// Full check: sortition credential against the ledger's credit view plus the
// vote signature. Returns the voter wallet when valid.
std::optional<digest32> check_vote(const chain::ledger_state &state, const signed_vote &v,
                                   uint32_t committee_target);

struct committee_member {
    size_t index = 0; // position in the key list handed in
    crypto::sortition_credential credential;
};

struct committee {
    std::vector<committee_member> members;
    uint32_t effective_target = 0; // after any retry expansion
    int retries = 0;
};

// Self-selection sweep over the given keys/credits. An empty draw retries
// with a doubled target (the degenerate weights fallback), which is
// surfaced through `retries`.
committee select_committee(const std::vector<crypto::key_pair> &keys,
                           const std::vector<int64_t> &credits, uint64_t height, uint32_t stage,
                           const digest32 &seed, uint32_t target);

// Deterministic choice of the task a new block settles: most submissions,
// then shortest remaining test window, then lowest id. The store decides
// between a ranked settlement and a forfeiture.
struct settlement_choice {
    digest32 task_id{};
    chain::settlement_kind kind = chain::settlement_kind::none;
};

settlement_choice choose_settlement_task(const chain::ledger_state &state,
                                         const contracts::content_store &store,
                                         uint64_t height);

struct proposal_inputs {
    const chain::ledger_state &state;
    const std::vector<chain::tx_variant> &mempool;
    const contracts::content_store &store;
    contracts::evaluator_fn evaluator;
    uint64_t now_ms = 0;
    size_t block_size_cap = 1 << 20;
};

// Candidate block construction: validates and orders mempool transactions,
// runs the ranking contract on the chosen task and appends the settlement
// payments. Pure in its inputs, so equal views build byte-identical blocks.
chain::block propose_candidate(const proposal_inputs &in);

// Wallets rewarded as "honest validators": the distinct voters certified in
// the parent block's script.
std::vector<digest32> parent_validator_wallets(const chain::ledger_state &state);

int64_t eligible_total_credit(const chain::ledger_state &state);

// Synchronous harness for the binary agreement loop: per-stage committees
// are drawn by sortition, honest members vote their current bit, byzantine
// members equivocate per recipient. Used by tests; the simulator drives the
// same rules through its event loop.
struct bba_validator {
    crypto::key_pair kp;
    int64_t credit = 1;
    bool byzantine = false;
    int input_bit = 0;
};

struct bba_result {
    int bit = 1;
    uint32_t stages_used = 0;
    bool liveness_failure = false;
    bool safety_fault = false; // conflicting certificates in one stage
    chain::block_script script;
};

struct bba_config {
    uint64_t height = 1;
    digest32 seed{};
    uint32_t vote_target = 0; // 0 = validator count
    digest32 value_for_zero{};
    digest32 value_for_one{};
    uint32_t stage_cap = 13;
    uint32_t first_stage = 3;
    uint64_t rng_seed = 1;
};

bba_result run_bba(const std::vector<bba_validator> &validators, const bba_config &cfg);

// Common coin for stages with no supermajority.
int common_coin(const digest32 &seed, uint64_t height, uint32_t stage);

} // namespace pofl::consensus
