#pragma once

#include "pofl/consensus.hpp"
#include "pofl/game.hpp"
#include "pofl/rng.hpp"

#include <string>

namespace pofl::sim {

struct task_spec {
    uint64_t publish_height = 1;
    uint64_t train_window = 0; // 0 = protocol minimum
    chain::currency reward = 100;
    chain::currency hosting_fee = 10;
};

struct scenario_config {
    uint64_t seed = 1;

    int num_nodes = 20;
    int num_requesters = 2;
    double byz_credit_fraction = 0.0;
    int64_t initial_credit = 1;

    uint32_t proposer_target = 5;
    uint32_t vote_target = 0; // 0 = 60% of the nodes
    chain::protocol_params params;

    // network model: per-node mean one-way latency plus exponential jitter,
    // capped so the stage barriers always cover delivery
    double latency_lo_s = 0.02;
    double latency_hi_s = 0.12;
    double jitter_mean_s = 0.01;
    double jitter_cap_s = 0.05;
    double bandwidth_bytes_per_s = 2.0e6;

    size_t block_size_cap = 512 * 1024;
    uint64_t max_heights = 40;

    // task stream; explicit specs win over the generated schedule
    std::vector<task_spec> tasks;
    int num_tasks = 4;
    uint64_t task_interval = 6;
    uint64_t train_window = 0;
    chain::currency task_reward = 100;
    chain::currency hosting_fee = 10;
    chain::currency participation_fee = 5;
    uint64_t task_window_slack = 3; // publication margin over the minimum window

    game::game_params game;
    double d_threshold_percentile = 0.75; // curator latency gate
    int background_payments_per_height = 0;

    // surrogate model quality for consensus-scale runs
    double quality_base = 0.92;
    double quality_noise = 0.02;

    bool pow_fallback = false;
    int pow_difficulty_bits = 8;

    std::string adversary; // "", "spoof_late_model", "sybil_duplicate_model",
                           // "sybil_vote_flood", "withhold_test_set"
};

struct height_row {
    uint64_t height = 0;
    size_t tx_count = 0;
    double latency_s = 0.0;
    double tps = 0.0;
    uint32_t stages = 0;
    size_t committee = 0;
};

struct task_row {
    std::string task_id;
    std::string winner_pool; // empty when none
    double best_score = 0.0;
    int64_t rounds = 0;
    bool forfeited = false;
    uint64_t settle_height = 0;
};

struct game_row {
    int iteration = 0;
    int pools = 0;
    int switches = 0;
    double welfare = 0.0;
};

struct accuracy_row {
    int round = 0;
    int pool = 0;
    double accuracy = 0.0;
};

struct metrics_log {
    std::vector<height_row> heights;
    std::vector<task_row> tasks;
    std::vector<game_row> game;
    std::vector<accuracy_row> accuracy;
    uint64_t gc_overload_faults = 0;
    uint64_t empty_blocks = 0;
};

// Outcome assertions for the adversary plug-ins; populated every run and
// checked by the attack suite.
struct attack_report {
    bool spoof_tx_in_any_ranking = false;
    bool spoof_pool_won = false;
    bool spoof_pool_qualified = false;
    int sybil_max_entries_per_model = 0;
    chain::currency sybil_forfeited = 0;
    bool withhold_forfeit_seen = false;
    uint64_t withhold_forfeit_height = 0;
};

struct run_result {
    metrics_log metrics;
    chain::ledger_state final_state; // reference node's ledger
    chain::genesis_config genesis;
    std::string chain_dump;
    bool fork_detected = false;
    uint64_t committed_heights = 0;
    attack_report attacks;
};

class sim_invariant_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

run_result run_scenario(const scenario_config &cfg);

// Uniform draw over pool members under the latency threshold; all members
// when nobody qualifies.
int curator_select(const std::vector<int> &pool, const std::vector<double> &latencies,
                   double threshold, rng &gen);

// CSV (default) or json-lines; returns the written file paths.
std::vector<std::string> emit_metrics(const metrics_log &log, const std::string &out_dir,
                                      const std::string &format);

scenario_config scenario_from_json(const std::string &text);
std::string scenario_to_json(const scenario_config &cfg);

std::string genesis_to_json(const chain::genesis_config &cfg);
chain::genesis_config genesis_from_json(const std::string &text);

struct verify_report {
    bool ok = false;
    std::string reason;
    uint64_t heights = 0;
    chain::currency total_currency = 0;
};

// Full revalidation of a chain dump against its genesis: linkage, scripts,
// settlement plans, conservation at every height, no testing-phase model
// transactions, credits never negative.
verify_report verify_chain(const chain::genesis_config &genesis,
                           const std::vector<chain::block> &blocks);

} // namespace pofl::sim
