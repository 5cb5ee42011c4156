#include "pofl/game.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace pofl::game {

double default_loss_curve(double avg_emd) {
    double x = std::max(0.0, avg_emd);
    return 1.0 + 0.12 * x + 0.25 * x * x * x * x;
}

partition partition::singletons(int n) {
    partition p;
    p.pools.reserve(size_t(n));
    for (int i = 0; i < n; ++i)
        p.pools.push_back({i});
    return p;
}

void partition::canonicalize() {
    for (auto &pool : pools)
        std::sort(pool.begin(), pool.end());
    std::erase_if(pools, [](const std::vector<int> &p) { return p.empty(); });
    std::sort(pools.begin(), pools.end(),
              [](const std::vector<int> &a, const std::vector<int> &b) { return a[0] < b[0]; });
}

bool partition::valid(int universe) const {
    std::vector<bool> seen(size_t(universe), false);
    size_t covered = 0;
    for (const auto &pool : pools) {
        if (pool.empty())
            return false;
        for (int m : pool) {
            if (m < 0 || m >= universe || seen[size_t(m)])
                return false;
            seen[size_t(m)] = true;
            ++covered;
        }
    }
    return covered == size_t(universe);
}

int partition::pool_of(int miner) const {
    for (size_t j = 0; j < pools.size(); ++j)
        for (int m : pools[j])
            if (m == miner)
                return int(j);
    return -1;
}

round_budget compute_round_budget(const std::vector<int> &pool,
                                  const std::vector<miner_profile> &profiles,
                                  const game_params &params) {
    if (pool.empty())
        throw std::invalid_argument("empty pool");
    round_budget rb;
    double mean_latency = 0.0;
    for (int m : pool)
        mean_latency += profiles[size_t(m)].latency;
    mean_latency /= double(pool.size());
    rb.max_wait = params.beta * mean_latency;
    rb.admitted.reserve(pool.size());
    for (int m : pool) {
        bool in = profiles[size_t(m)].latency <= rb.max_wait;
        rb.admitted.push_back(in);
        if (in)
            rb.admitted_samples += profiles[size_t(m)].samples;
    }
    rb.rounds = std::max<int64_t>(1, int64_t(std::floor(params.train_time / rb.max_wait)));
    return rb;
}

double expected_loss(const std::vector<int> &pool, const std::vector<miner_profile> &profiles,
                     const game_params &params) {
    if (pool.empty())
        throw std::invalid_argument("empty pool");
    if (pool.size() == 1) {
        const miner_profile &p = profiles[size_t(pool[0])];
        double psi = std::max(1.0, p.local_epochs);
        return params.curve(p.emd) * (1.0 / std::sqrt(p.samples * psi) + 1.0 / psi);
    }
    round_budget rb = compute_round_budget(pool, profiles, params);
    if (rb.admitted_samples <= 0.0)
        return std::numeric_limits<double>::infinity();
    double total_admitted = 0.0, weighted = 0.0;
    for (size_t i = 0; i < pool.size(); ++i) {
        if (!rb.admitted[i])
            continue;
        const miner_profile &p = profiles[size_t(pool[i])];
        total_admitted += p.samples;
        weighted += p.samples * p.emd;
    }
    double avg_emd = total_admitted > 0.0 ? weighted / total_admitted : 0.0;
    double psi = double(rb.rounds);
    return params.curve(avg_emd) * (1.0 / std::sqrt(rb.admitted_samples * psi) + 1.0 / psi);
}

double pool_utility(const std::vector<int> &pool, const std::vector<miner_profile> &profiles,
                    const game_params &params) {
    if (pool.empty())
        return 0.0;
    double pi = expected_loss(pool, profiles, params);
    double satisfaction = std::isinf(pi) ? 0.0 : params.gamma_s * std::exp(-params.gamma_d * pi);
    double cost = pool.size() > 1 ? params.lambda_c * double(pool.size()) : 0.0;
    return satisfaction - cost;
}

double social_welfare(const partition &p, const std::vector<miner_profile> &profiles,
                      const game_params &params) {
    double w = 0.0;
    for (const auto &pool : p.pools)
        w += pool_utility(pool, profiles, params);
    return w;
}

namespace {

std::vector<int> without(const std::vector<int> &pool, int miner) {
    std::vector<int> out;
    out.reserve(pool.size());
    for (int m : pool)
        if (m != miner)
            out.push_back(m);
    return out;
}

std::vector<int> with(const std::vector<int> &pool, int miner) {
    std::vector<int> out = pool;
    out.push_back(miner);
    return out;
}

} // namespace

double switch_gain(const partition &p, const std::vector<miner_profile> &profiles,
                   const game_params &params, int miner, int target) {
    int from = p.pool_of(miner);
    if (from < 0)
        throw std::invalid_argument("miner not in partition");
    if (target == from)
        return 0.0;
    const std::vector<int> &from_pool = p.pools[size_t(from)];
    double leave_cost = pool_utility(from_pool, profiles, params) -
                        pool_utility(without(from_pool, miner), profiles, params);
    double join_gain;
    if (target < 0) {
        join_gain = pool_utility({miner}, profiles, params);
    } else {
        const std::vector<int> &to_pool = p.pools[size_t(target)];
        join_gain = pool_utility(with(to_pool, miner), profiles, params) -
                    pool_utility(to_pool, profiles, params);
    }
    return join_gain - leave_cost;
}

bool is_nash_stable(const partition &p, const std::vector<miner_profile> &profiles,
                    const game_params &params) {
    for (size_t j = 0; j < p.pools.size(); ++j) {
        for (int m : p.pools[j]) {
            for (size_t k = 0; k < p.pools.size(); ++k) {
                if (k == j)
                    continue;
                if (switch_gain(p, profiles, params, m, int(k)) > 0.0)
                    return false;
            }
            if (p.pools[j].size() > 1 && switch_gain(p, profiles, params, m, -1) > 0.0)
                return false;
        }
    }
    return true;
}

formation_result form_pools(const std::vector<miner_profile> &profiles,
                            const partition &initial, const game_params &params) {
    int n = int(profiles.size());
    if (!initial.valid(n))
        throw std::invalid_argument("initial partition invalid");
    partition cur = initial;
    cur.canonicalize();

    uint64_t guard = n <= 12 ? 10 * bell_number(n) : 10000;

    formation_result out;
    double welfare = social_welfare(cur, profiles, params);
    out.trace.push_back({0, int(cur.pools.size()), 0, welfare});

    struct proposal {
        int miner;
        int from;
        int target; // -1 = fresh singleton
        double gain;
    };

    for (uint64_t h = 1;; ++h) {
        if (h > guard)
            throw std::runtime_error("pool formation failed to converge");

        std::vector<proposal> proposals;
        for (int m = 0; m < n; ++m) {
            int from = cur.pool_of(m);
            double best_gain = 0.0;
            int best_target = from;
            for (size_t k = 0; k < cur.pools.size(); ++k) {
                if (int(k) == from)
                    continue;
                double g = switch_gain(cur, profiles, params, m, int(k));
                if (g > best_gain) {
                    best_gain = g;
                    best_target = int(k);
                }
            }
            if (cur.pools[size_t(from)].size() > 1) {
                double g = switch_gain(cur, profiles, params, m, -1);
                if (g > best_gain) {
                    best_gain = g;
                    best_target = -1;
                }
            }
            if (best_gain > 0.0)
                proposals.push_back({m, from, best_target, best_gain});
        }
        if (proposals.empty())
            break;

        // Admission: each target pool, and the fresh-singleton slot, keeps
        // only its strongest proposer.
        std::map<int, proposal> admitted; // by target (-1 = singleton slot)
        for (const proposal &pr : proposals) {
            auto it = admitted.find(pr.target);
            if (it == admitted.end() || pr.gain > it->second.gain ||
                (pr.gain == it->second.gain && pr.miner < it->second.miner))
                admitted.insert_or_assign(pr.target, pr);
        }
        std::vector<proposal> order;
        order.reserve(admitted.size());
        for (const auto &[_, pr] : admitted)
            order.push_back(pr);
        std::sort(order.begin(), order.end(), [](const proposal &a, const proposal &b) {
            if (a.gain != b.gain)
                return a.gain > b.gain;
            if (a.target != b.target)
                return a.target < b.target;
            return a.miner < b.miner;
        });

        // Execute one switch at a time, re-checking the gain against the
        // structure as it changes; empty shells are pruned afterwards so
        // target indices stay stable during the sweep.
        int executed = 0;
        for (const proposal &pr : order) {
            int from = cur.pool_of(pr.miner);
            int target = pr.target;
            if (target >= int(cur.pools.size()))
                continue;
            double g = (target >= 0 && cur.pools[size_t(target)].empty())
                           ? switch_gain(cur, profiles, params, pr.miner, -1)
                           : switch_gain(cur, profiles, params, pr.miner, target);
            if (g <= 0.0)
                continue;
            auto &src = cur.pools[size_t(from)];
            src.erase(std::find(src.begin(), src.end(), pr.miner));
            if (target < 0)
                cur.pools.push_back({pr.miner});
            else
                cur.pools[size_t(target)].push_back(pr.miner);
            welfare += g;
            ++executed;
        }
        std::erase_if(cur.pools, [](const std::vector<int> &p) { return p.empty(); });

        out.trace.push_back({int(h), int(cur.pools.size()), executed, welfare});
        if (executed == 0)
            break;
    }

    cur.canonicalize();
    out.final = std::move(cur);
    out.iterations = int(out.trace.size()) - 1;
    return out;
}

uint64_t bell_number(int n) {
    if (n < 0)
        throw std::invalid_argument("bell_number of negative n");
    if (n > 25)
        throw std::out_of_range("bell_number overflows 64 bits past n = 25");
    // b_n = sum_{k=0}^{n-1} C(n-1, k) b_k
    std::vector<uint64_t> bell(size_t(n) + 1, 0);
    bell[0] = 1;
    for (int i = 1; i <= n; ++i) {
        uint64_t sum = 0;
        uint64_t binom = 1; // C(i-1, 0)
        for (int k = 0; k <= i - 1; ++k) {
            sum += binom * bell[size_t(k)];
            binom = binom * uint64_t(i - 1 - k) / uint64_t(k + 1);
        }
        bell[size_t(i)] = sum;
    }
    return bell[size_t(n)];
}

namespace {

// Iterate restricted growth strings: a[0] = 0, a[i] <= max(a[0..i-1]) + 1.
template <typename Fn>
void for_each_partition(int n, Fn &&fn) {
    std::vector<int> a(size_t(n), 0);
    std::vector<int> mx(size_t(n), 0); // mx[i] = max(a[0..i-1])
    while (true) {
        fn(a);
        int i = n - 1;
        while (i > 0 && a[size_t(i)] == mx[size_t(i)] + 1)
            --i;
        if (i == 0)
            return;
        ++a[size_t(i)];
        for (int j = i + 1; j < n; ++j) {
            mx[size_t(j)] = std::max(mx[size_t(j - 1)], a[size_t(j - 1)]);
            a[size_t(j)] = 0;
        }
    }
}

partition from_growth_string(const std::vector<int> &a) {
    partition p;
    for (size_t i = 0; i < a.size(); ++i) {
        size_t pool = size_t(a[i]);
        if (pool >= p.pools.size())
            p.pools.resize(pool + 1);
        p.pools[pool].push_back(int(i));
    }
    return p;
}

} // namespace

partition exhaustive_optimal(const std::vector<miner_profile> &profiles,
                             const game_params &params) {
    int n = int(profiles.size());
    if (n <= 0)
        throw std::invalid_argument("no miners");
    if (n > 12)
        throw std::invalid_argument("exhaustive search refused past 12 miners");
    double best_welfare = -std::numeric_limits<double>::infinity();
    partition best;
    for_each_partition(n, [&](const std::vector<int> &a) {
        partition p = from_growth_string(a);
        double w = social_welfare(p, profiles, params);
        if (w > best_welfare) { // first lexicographic encoding wins ties
            best_welfare = w;
            best = std::move(p);
        }
    });
    best.canonicalize();
    return best;
}

uint64_t count_set_partitions(int n) {
    if (n < 0)
        throw std::invalid_argument("negative n");
    if (n == 0)
        return 1;
    uint64_t count = 0;
    for_each_partition(n, [&](const std::vector<int> &) { ++count; });
    return count;
}

} // namespace pofl::game
