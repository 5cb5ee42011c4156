#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pofl::game {

struct miner_profile {
    int id = 0;
    double samples = 0.0;      // s_m
    double emd = 0.0;          // Xi_m
    double latency = 0.0;      // mean network latency, seconds
    double local_epochs = 1.0; // solo-mining round cap
};

// Relative accuracy-loss curve over the pool-average EMD; must satisfy
// E(0) = 1 and be nondecreasing. The default grows slowly below ~1.2 and
// steeply after.
using loss_curve = std::function<double(double)>;

double default_loss_curve(double avg_emd);

struct game_params {
    double gamma_s = 23.0;  // satisfaction scale
    double gamma_d = 30.0;  // satisfaction decay
    double lambda_c = 0.01; // per-member communication cost
    double beta = 1.0;      // waiting-time factor
    double train_time = 100.0;
    loss_curve curve = default_loss_curve;
};

// Disjoint pools covering 0..N-1 (indices into the profile list).
struct partition {
    std::vector<std::vector<int>> pools;

    static partition singletons(int n);
    void canonicalize(); // members sorted, pools ordered by first member
    bool valid(int universe) const;
    int pool_of(int miner) const;
};

struct round_budget {
    double max_wait = 0.0;        // D_max
    std::vector<bool> admitted;   // alpha per pool member
    double admitted_samples = 0.0; // S_j
    int64_t rounds = 1;           // Psi, floored at 1
};

round_budget compute_round_budget(const std::vector<int> &pool,
                                  const std::vector<miner_profile> &profiles,
                                  const game_params &params);

// Expected accuracy loss; +inf when no member clears the waiting time.
double expected_loss(const std::vector<int> &pool, const std::vector<miner_profile> &profiles,
                     const game_params &params);

double pool_utility(const std::vector<int> &pool, const std::vector<miner_profile> &profiles,
                    const game_params &params);

double social_welfare(const partition &p, const std::vector<miner_profile> &profiles,
                      const game_params &params);

// Welfare delta of relocating `miner` into pool `target` (index into
// p.pools, or -1 for a fresh singleton). Zero when target is the current
// pool.
double switch_gain(const partition &p, const std::vector<miner_profile> &profiles,
                   const game_params &params, int miner, int target);

bool is_nash_stable(const partition &p, const std::vector<miner_profile> &profiles,
                    const game_params &params);

struct formation_trace_row {
    int iteration = 0;
    int num_pools = 0;
    int num_switches = 0;
    double welfare = 0.0;
};

struct formation_result {
    partition final;
    std::vector<formation_trace_row> trace; // row 0 is the initial structure
    int iterations = 0;
};

// Two-sided switch/admission iteration: every miner proposes its best
// positive-gain relocation, every pool (and the fresh-singleton slot) admits
// only its best proposer, admitted moves execute one at a time with the gain
// re-checked against the evolving structure. Stops when no positive-gain
// proposal survives.
formation_result form_pools(const std::vector<miner_profile> &profiles,
                            const partition &initial, const game_params &params);

// Welfare-maximal partition by enumeration of all set partitions. Refuses
// N > 12. Ties resolve to the lexicographically first restricted-growth
// encoding.
partition exhaustive_optimal(const std::vector<miner_profile> &profiles,
                             const game_params &params);

uint64_t bell_number(int n);

// Number of set partitions visited by the exhaustive search; equals
// bell_number(n) and is counted independently (used as its oracle).
uint64_t count_set_partitions(int n);

} // namespace pofl::game
