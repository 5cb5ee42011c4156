#include "pofl/sim.hpp"

#include "pofl/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_map>

namespace pofl::sim {

using nlohmann::json;

int curator_select(const std::vector<int> &pool, const std::vector<double> &latencies,
                   double threshold, rng &gen) {
    if (pool.empty())
        throw std::invalid_argument("curator from an empty pool");
    std::vector<int> qualified;
    for (int m : pool)
        if (latencies[size_t(m)] < threshold)
            qualified.push_back(m);
    const std::vector<int> &from = qualified.empty() ? pool : qualified;
    return from[size_t(gen.uniform_index(from.size()))];
}

namespace {

uint64_t to_ms(double t_s) { return uint64_t(std::llround(t_s * 1000.0)); }

double percentile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    if (values.empty())
        return 0.0;
    size_t idx = size_t(std::floor(p * double(values.size() - 1)));
    return values[idx];
}

struct proposer_msg {
    chain::block candidate;
    crypto::public_key proposer_pk;
    byte_vec credential;
};

using message = std::variant<chain::tx_variant, proposer_msg, consensus::signed_vote>;

enum class event_kind : uint8_t { deliver_msg = 1, node_tick = 2, task_deadline = 3, phase_change = 4 };

struct event {
    double time = 0.0;
    uint64_t seq = 0;
    event_kind kind = event_kind::deliver_msg;
    int node = -1;      // deliver_msg / node_tick target
    uint32_t stage = 0; // node_tick / phase_change
    uint64_t height = 0;
    std::shared_ptr<message> payload;
    std::function<void()> action; // task_deadline body

    bool operator>(const event &o) const {
        if (time != o.time)
            return time > o.time;
        return seq > o.seq;
    }
};

struct sim_task {
    task_spec spec;
    chain::task_publication_tx tx;
    byte_vec test_bytes;
    uint64_t release_height = 0;
    bool published = false;
    bool models_submitted = false;
    bool released_or_withheld = false;
    bool settled_seen = false;
    std::vector<digest32> pool_wallets;
};

struct node_state {
    int id = 0;
    crypto::key_pair kp;
    bool byzantine = false;
    double latency_s = 0.0;
    chain::ledger_state ledger;
    std::map<digest32, chain::tx_variant> mempool;

    // per-height scratch
    std::optional<chain::block> own_candidate;
    digest32 own_candidate_hash{};
    std::vector<std::shared_ptr<const message>> received_candidates;
    std::map<uint32_t, std::vector<std::shared_ptr<const message>>> votes_by_stage;
    consensus::gc_outcome gc;
    digest32 gc_value{};
    int bit = 1;
    bool committed = false;

    void reset_round() {
        own_candidate.reset();
        received_candidates.clear();
        votes_by_stage.clear();
        gc = {};
        gc_value = digest32{};
        bit = 1;
        committed = false;
    }
};

class simulation {
public:
    explicit simulation(const scenario_config &cfg) : cfg_(cfg), net_rng_(derive_seed(cfg.seed, "net")),
                                                      app_rng_(derive_seed(cfg.seed, "app")) {
        if (cfg_.num_nodes < 4)
            throw std::invalid_argument("need at least four nodes");
        if (cfg_.byz_credit_fraction >= 1.0 / 3.0 && cfg_.byz_credit_fraction != 0.0)
            throw std::invalid_argument("byzantine credit fraction must stay below one third");
        vote_target_ = cfg_.vote_target != 0 ? cfg_.vote_target
                                             : uint32_t(std::max(4, (cfg_.num_nodes * 3) / 5));
        setup_nodes();
        setup_tasks();
    }

    run_result run();

private:
    void setup_nodes();
    void setup_tasks();
    void schedule(event ev) {
        ev.seq = next_seq_++;
        queue_.push(std::move(ev));
    }
    void broadcast(int from, const message &msg, double at, double size_bytes);
    void handle_delivery(int node, const std::shared_ptr<const message> &msg);
    void node_stage_action(int node, uint64_t height, uint32_t stage);
    void byz_flood(int node, uint64_t height, uint32_t stage, double at);
    bool tally_and_step(node_state &n, uint64_t height, uint32_t stage);
    void commit_value(node_state &n, uint64_t height, const digest32 &value, uint32_t stage);
    chain::block canonical_empty(const chain::ledger_state &st, uint64_t height) const;
    void grind_pow(chain::block &b) const;
    void finalize_height(uint64_t height, double t_commit, uint32_t stages_used);
    void inject_app_txs(uint64_t upcoming_height, double now);
    void submit_pool_models(sim_task &task, double now);
    void release_and_upload(sim_task &task, double now);
    void run_pool_formation(uint64_t at_height);
    contracts::evaluator_fn surrogate_evaluator() const;

    double stage_duration(uint32_t stage) const {
        double base = 2.0 * cfg_.latency_hi_s + cfg_.jitter_cap_s + 0.01;
        if (stage == 1)
            base += double(cfg_.block_size_cap) / cfg_.bandwidth_bytes_per_s;
        return base;
    }
    double mempool_window() const { return 2.0 * cfg_.latency_hi_s + cfg_.jitter_cap_s + 0.01; }

    std::optional<digest32> cached_check_vote(const chain::ledger_state &st,
                                              const consensus::signed_vote &v);

    scenario_config cfg_;
    uint32_t vote_target_ = 0;
    rng net_rng_;
    rng app_rng_;
    std::vector<node_state> nodes_;
    std::vector<game::miner_profile> miner_profiles_; // one per non-requester node
    std::vector<sim_task> tasks_;
    contracts::content_store store_;
    chain::genesis_config genesis_;
    chain::currency genesis_total_ = 0;
    std::priority_queue<event, std::vector<event>, std::greater<event>> queue_;
    uint64_t next_seq_ = 0;
    double now_ = 0.0;
    uint64_t round_start_ms_ = 0;
    double round_start_s_ = 0.0;
    metrics_log metrics_;
    attack_report attacks_;
    bool fork_detected_ = false;
    game::partition last_partition_;
    bool have_partition_ = false;
    std::map<digest32, double> surrogate_scores_; // model digest -> quality
    std::map<digest32, std::vector<byte_vec>> staged_models_; // revealed at release
    digest32 spoof_model_digest_{};
    digest32 spoof_pool_wallet_{};
    digest32 sybil_model_digest_{};
    digest32 sybil_pool_wallet_{};
    chain::currency sybil_deposit_total_ = 0;
    chain::currency sybil_refunded_ = 0;
    int attacker_node_ = -1;
    std::vector<chain::block> committed_chain_;
    chain::vote_verdict_cache vote_cache_;
    uint64_t store_version_ = 0;
    std::map<digest32, std::pair<chain::block, digest32>> candidate_memo_; // per height
    std::map<const void *, digest32> candidate_hash_memo_;                 // per height
    // first honest commit this height; replicas with the same parent adopt
    // the identical post-state instead of re-validating the same bytes
    std::optional<std::pair<chain::block, chain::ledger_state>> commit_template_;
};

void simulation::setup_nodes() {
    int n = cfg_.num_nodes;
    int byz_count = int(std::floor(cfg_.byz_credit_fraction * double(n)));
    rng key_rng(derive_seed(cfg_.seed, "keys"));
    rng lat_rng(derive_seed(cfg_.seed, "latency"));
    genesis_.params = cfg_.params;
    genesis_.params.vote_target = vote_target_;
    genesis_.params.proposer_target = cfg_.proposer_target;
    genesis_.params.default_hosting_fee = cfg_.hosting_fee;
    genesis_.params.default_participation_fee = cfg_.participation_fee;
    genesis_.seed = sha256(to_bytes("scenario-seed-" + std::to_string(cfg_.seed)));
    genesis_.timestamp_ms = 0;
    for (int i = 0; i < n; ++i) {
        node_state node;
        node.id = i;
        std::array<uint8_t, 32> seed{};
        uint64_t k = derive_seed(cfg_.seed, "node-key", uint64_t(i));
        for (int b = 0; b < 8; ++b)
            seed[size_t(24 + b)] = uint8_t(k >> (8 * (7 - b)));
        (void)key_rng;
        node.kp = crypto::keygen(seed);
        node.latency_s = lat_rng.uniform(cfg_.latency_lo_s, cfg_.latency_hi_s);
        // byzantine credit concentrated in the tail nodes
        node.byzantine = i >= n - byz_count;
        chain::currency balance = i < cfg_.num_requesters ? 10'000'000 : 10'000;
        genesis_.accounts.push_back({node.kp.pub, balance, cfg_.initial_credit});
        nodes_.push_back(std::move(node));
    }
    chain::ledger_state st = chain::make_genesis(genesis_);
    genesis_total_ = st.total_currency();
    for (auto &node : nodes_)
        node.ledger = st;
    if (!cfg_.adversary.empty())
        attacker_node_ = cfg_.num_requesters; // first miner misbehaves

    // static per-run miner characteristics for the federation game
    rng prof_rng(derive_seed(cfg_.seed, "profiles"));
    for (const auto &node : nodes_) {
        if (node.id < cfg_.num_requesters)
            continue;
        game::miner_profile p;
        p.id = int(miner_profiles_.size());
        p.samples = 100.0 + double(prof_rng.uniform_index(900));
        p.emd = prof_rng.uniform(0.0, 1.8);
        p.latency = node.latency_s;
        p.local_epochs = 1000.0;
        miner_profiles_.push_back(p);
    }
}

void simulation::setup_tasks() {
    std::vector<task_spec> specs = cfg_.tasks;
    if (specs.empty()) {
        for (int i = 0; i < cfg_.num_tasks; ++i) {
            task_spec s;
            s.publish_height = 1 + uint64_t(i) * cfg_.task_interval;
            s.train_window = cfg_.train_window;
            s.reward = cfg_.task_reward;
            s.hosting_fee = cfg_.hosting_fee;
            specs.push_back(s);
        }
    }
    uint64_t idx = 0;
    for (const auto &spec : specs) {
        sim_task t;
        t.spec = spec;
        uint64_t window = spec.train_window == 0 ? cfg_.params.min_train_period : spec.train_window;
        window = std::max(window, cfg_.params.min_train_period);
        // margin so a slipped publication still clears the minimum window
        t.release_height = spec.publish_height + window + cfg_.task_window_slack;
        t.test_bytes = to_bytes("test-set-" + std::to_string(cfg_.seed) + "-" + std::to_string(idx));
        ++idx;
        tasks_.push_back(std::move(t));
    }
}

void simulation::broadcast(int from, const message &msg, double at, double size_bytes) {
    auto shared = std::make_shared<message>(msg);
    double transfer = size_bytes / cfg_.bandwidth_bytes_per_s;
    for (auto &node : nodes_) {
        if (node.id == from) {
            handle_delivery(from, shared);
            continue;
        }
        double mean = 0.5 * (nodes_[size_t(from)].latency_s + node.latency_s);
        double jitter = std::min(net_rng_.exponential(cfg_.jitter_mean_s), cfg_.jitter_cap_s);
        event ev;
        ev.time = at + mean + jitter + transfer;
        ev.kind = event_kind::deliver_msg;
        ev.node = node.id;
        ev.payload = shared;
        schedule(std::move(ev));
    }
}

void simulation::handle_delivery(int node, const std::shared_ptr<const message> &msg) {
    node_state &n = nodes_[size_t(node)];
    if (const auto *tx = std::get_if<chain::tx_variant>(msg.get())) {
        n.mempool.emplace(chain::tx_id(*tx), *tx);
    } else if (std::holds_alternative<proposer_msg>(*msg)) {
        n.received_candidates.push_back(msg);
    } else {
        const auto &vote = std::get<consensus::signed_vote>(*msg);
        n.votes_by_stage[vote.stage].push_back(msg);
    }
}

std::optional<digest32> simulation::cached_check_vote(const chain::ledger_state &st,
                                                      const consensus::signed_vote &v) {
    std::string key(v.record.signature.begin(), v.record.signature.end());
    key.append(v.record.voter_pk.begin(), v.record.voter_pk.end());
    auto it = vote_cache_.find(key);
    if (it != vote_cache_.end())
        return it->second;
    auto res = consensus::check_vote(st, v, vote_target_);
    vote_cache_.emplace(std::move(key), res);
    return res;
}

contracts::evaluator_fn simulation::surrogate_evaluator() const {
    return [this](const byte_vec &model, const byte_vec &, chain::metric_kind) {
        auto it = surrogate_scores_.find(sha256(model));
        return it == surrogate_scores_.end() ? 0.0 : it->second;
    };
}

chain::block simulation::canonical_empty(const chain::ledger_state &st, uint64_t height) const {
    chain::block b;
    b.prev_hash = st.head_hash();
    b.timestamp_ms = round_start_ms_;
    b.merkle_root = chain::merkle_root({});
    b.meta.next_seed = chain::next_seed_for(st.seed(), height);
    if (cfg_.pow_fallback)
        grind_pow(b);
    return b;
}

void simulation::grind_pow(chain::block &b) const {
    int zero_bits = cfg_.pow_difficulty_bits;
    auto hard_enough = [&](const digest32 &h) {
        int bits = 0;
        for (uint8_t byte : h) {
            if (byte == 0) {
                bits += 8;
                continue;
            }
            for (int i = 7; i >= 0; --i) {
                if (byte & (1u << i))
                    return bits >= zero_bits;
                ++bits;
            }
        }
        return true;
    };
    while (!hard_enough(chain::block_hash(b)))
        ++b.timestamp_ms;
}

void simulation::byz_flood(int node, uint64_t height, uint32_t stage, double at) {
    node_state &n = nodes_[size_t(node)];
    crypto::sortition_params sp;
    sp.height = height;
    sp.stage = stage;
    sp.seed = n.ledger.seed();
    sp.credit = n.ledger.credit_of(n.kp.wallet);
    sp.total_credit = n.ledger.total_credit();
    sp.committee_size = vote_target_;
    sp.active_keys = uint32_t(n.ledger.keys.size());
    auto cred = crypto::sortition(n.kp, sp);
    if (!cred)
        return; // not on this committee, nothing to flood with
    rng flood_rng(derive_seed(cfg_.seed, "flood", uint64_t(node), height * 100 + stage));
    for (int i = 0; i < 3; ++i) {
        digest32 junk;
        for (auto &b : junk)
            b = uint8_t(flood_rng.next_u64());
        auto v = consensus::make_vote(n.kp, *cred, junk, height, stage, sp.seed,
                                      round_start_ms_ + uint64_t(i));
        broadcast(node, v, at, 256.0);
        if (i == 0)
            broadcast(node, v, at, 256.0); // duplicate of the first junk vote
    }
}

void simulation::node_stage_action(int node, uint64_t height, uint32_t stage) {
    node_state &n = nodes_[size_t(node)];
    if (stage == 1) {
        if (node == 0) {
            candidate_memo_.clear();
            candidate_hash_memo_.clear();
            commit_template_.reset();
        }
        n.reset_round();
    }
    if (n.committed)
        return;
    const digest32 seed = n.ledger.seed();
    const digest32 sentinel = chain::empty_block_sentinel(height, n.ledger.head_hash());

    auto committee_credential = [&](uint32_t s, uint32_t target)
        -> std::optional<crypto::sortition_credential> {
        crypto::sortition_params sp;
        sp.height = height;
        sp.stage = s;
        sp.seed = seed;
        sp.credit = n.ledger.credit_of(n.kp.wallet);
        sp.total_credit = n.ledger.total_credit();
        sp.committee_size = target;
        sp.active_keys = uint32_t(n.ledger.keys.size());
        return crypto::sortition(n.kp, sp);
    };

    auto build_own_candidate = [&]() {
        if (n.own_candidate)
            return;
        // nodes with byte-identical views deterministically build the same
        // candidate; the memo avoids recomputing it per committee member
        ser::writer fp;
        fp.put_digest(n.ledger.head_hash());
        fp.put_u64(store_version_);
        fp.put_u64(round_start_ms_);
        fp.put_u32(uint32_t(n.mempool.size()));
        for (const auto &[id, _] : n.mempool)
            fp.put_digest(id);
        digest32 key = sha256(fp.bytes());
        auto memo = candidate_memo_.find(key);
        if (memo != candidate_memo_.end()) {
            n.own_candidate = memo->second.first;
            n.own_candidate_hash = memo->second.second;
            return;
        }
        std::vector<chain::tx_variant> pool;
        pool.reserve(n.mempool.size());
        for (const auto &[_, tx] : n.mempool)
            pool.push_back(tx);
        consensus::proposal_inputs in{n.ledger, pool, store_, surrogate_evaluator(),
                                      round_start_ms_, cfg_.block_size_cap};
        n.own_candidate = consensus::propose_candidate(in);
        if (cfg_.pow_fallback && n.own_candidate->body.empty() &&
            n.own_candidate->meta.kind == chain::settlement_kind::none) {
            // heartbeat block: grind the timestamp until the hash clears the
            // difficulty target
            grind_pow(*n.own_candidate);
        }
        n.own_candidate_hash = chain::block_hash(*n.own_candidate);
        candidate_memo_.emplace(key, std::make_pair(*n.own_candidate, n.own_candidate_hash));
    };

    if (stage == 1) {
        auto cred = committee_credential(1, cfg_.proposer_target);
        if (cred && !n.byzantine) {
            build_own_candidate();
            proposer_msg pm{*n.own_candidate, n.kp.pub, cred->proof};
            broadcast(node, pm, now_, double(chain::serialize_block(pm.candidate).size()));
        }
        return;
    }

    if (stage == 2) {
        if (n.byzantine) {
            byz_flood(node, height, 2, now_);
            return;
        }
        auto cred = committee_credential(2, vote_target_);
        if (!cred)
            return;
        build_own_candidate();
        digest32 value = sentinel;
        for (const auto &pm : n.received_candidates) {
            const auto &cand = std::get<proposer_msg>(*pm).candidate;
            auto hit = candidate_hash_memo_.find(&cand);
            digest32 h = hit != candidate_hash_memo_.end()
                             ? hit->second
                             : candidate_hash_memo_.emplace(&cand, chain::block_hash(cand))
                                   .first->second;
            if (h == n.own_candidate_hash) {
                value = n.own_candidate_hash;
                break;
            }
        }
        if (std::getenv("POFLSIM_DEBUG") && value == sentinel && n.id <= 2)
            std::fprintf(stderr, "h%llu n%d SENTINEL own=%s cands=%zu body=%zu mempool=%zu\n",
                         (unsigned long long)height, n.id,
                         hex_encode(n.own_candidate_hash).substr(0, 8).c_str(),
                         n.received_candidates.size(), n.own_candidate->body.size(),
                         n.mempool.size());
        auto v = consensus::make_vote(n.kp, *cred, value, height, 2, seed, round_start_ms_);
        broadcast(node, v, now_, 256.0);
        return;
    }

    if (stage == 3) {
        if (n.byzantine) {
            byz_flood(node, height, 3, now_);
            return;
        }
        // graded consensus over the stage-2 votes
        std::map<digest32, std::set<digest32>> voters_by_value;
        for (const auto &vm : n.votes_by_stage[2]) {
            const auto &v = std::get<consensus::signed_vote>(*vm);
            if (v.height != height)
                continue;
            if (auto wallet = cached_check_vote(n.ledger, v))
                voters_by_value[v.value].insert(*wallet);
        }
        std::map<digest32, int> counts;
        for (const auto &[value, voters] : voters_by_value)
            counts[value] = int(voters.size());
        if (std::getenv("POFLSIM_DEBUG") && n.id == 0) {
            std::fprintf(stderr, "h%llu gc tally: raw=%zu", (unsigned long long)height,
                         n.votes_by_stage[2].size());
            for (const auto &[v, c] : counts)
                std::fprintf(stderr, " %s=%d", hex_encode(v).substr(0, 8).c_str(), c);
            std::fprintf(stderr, "\n");
        }
        n.gc = consensus::gc_evaluate(counts, chain::nominal_f(vote_target_));
        if (n.gc.overload_fault && node == 0)
            ++metrics_.gc_overload_faults;
        n.bit = n.gc.grade == 2 ? 0 : 1;
        n.gc_value = n.gc.value.value_or(sentinel);
        auto cred = committee_credential(3, vote_target_);
        if (cred) {
            digest32 value = n.bit == 0 ? n.gc_value : sentinel;
            auto v = consensus::make_vote(n.kp, *cred, value, height, 3, seed, round_start_ms_);
            broadcast(node, v, now_, 256.0);
        }
        return;
    }

    // stage >= 4: tally the previous stage, then commit or vote onwards
    if (n.byzantine) {
        byz_flood(node, height, stage, now_);
        return;
    }
    if (tally_and_step(n, height, stage - 1))
        return;
    int coin = consensus::common_coin(seed, height, stage - 1);
    n.bit = coin;
    auto cred = committee_credential(stage, vote_target_);
    if (cred) {
        const digest32 sentinel2 = chain::empty_block_sentinel(height, n.ledger.head_hash());
        digest32 value = n.bit == 0 ? n.gc_value : sentinel2;
        auto v = consensus::make_vote(n.kp, *cred, value, height, stage, seed, round_start_ms_);
        broadcast(node, v, now_, 256.0);
    }
}

bool simulation::tally_and_step(node_state &n, uint64_t height, uint32_t voted_stage) {
    std::map<digest32, std::set<digest32>> voters_by_value;
    for (const auto &vm : n.votes_by_stage[voted_stage]) {
        const auto &v = std::get<consensus::signed_vote>(*vm);
        if (v.height != height || v.stage != voted_stage)
            continue;
        if (auto wallet = cached_check_vote(n.ledger, v))
            voters_by_value[v.value].insert(*wallet);
    }
    if (std::getenv("POFLSIM_DEBUG") && n.id == 0) {
        std::fprintf(stderr, "h%llu bba tally s%u: raw=%zu", (unsigned long long)height,
                     voted_stage, n.votes_by_stage[voted_stage].size());
        for (const auto &[v, s] : voters_by_value)
            std::fprintf(stderr, " %s=%zu", hex_encode(v).substr(0, 8).c_str(), s.size());
        std::fprintf(stderr, "\n");
    }
    int threshold = chain::cert_threshold(vote_target_);
    for (const auto &[value, voters] : voters_by_value) {
        if (int(voters.size()) >= threshold) {
            commit_value(n, height, value, voted_stage);
            return true;
        }
    }
    return false;
}

void simulation::commit_value(node_state &n, uint64_t height, const digest32 &value,
                              uint32_t stage) {
    const digest32 sentinel = chain::empty_block_sentinel(height, n.ledger.head_hash());
    chain::block final_block;
    if (value == sentinel) {
        final_block = canonical_empty(n.ledger, height);
    } else if (n.own_candidate && value == n.own_candidate_hash) {
        final_block = *n.own_candidate;
    } else {
        bool found = false;
        for (const auto &pm : n.received_candidates) {
            const auto &cand = std::get<proposer_msg>(*pm).candidate;
            auto hit = candidate_hash_memo_.find(&cand);
            digest32 h = hit != candidate_hash_memo_.end() ? hit->second
                                                           : chain::block_hash(cand);
            if (h == value) {
                final_block = cand;
                found = true;
                break;
            }
        }
        if (!found)
            throw sim_invariant_error("certified value without block data at node " +
                                      std::to_string(n.id));
    }
    // assemble the certificate from the matching votes, one per wallet
    std::map<digest32, chain::vote_record> votes;
    for (const auto &vm : n.votes_by_stage[stage]) {
        const auto &v = std::get<consensus::signed_vote>(*vm);
        if (v.height != height || v.value != value)
            continue;
        if (auto wallet = cached_check_vote(n.ledger, v))
            votes.emplace(*wallet, v.record);
    }
    final_block.meta.script.stage = stage;
    final_block.meta.script.value = value;
    final_block.meta.script.votes.clear();
    for (const auto &[wallet, rec] : votes)
        final_block.meta.script.votes.push_back(rec);

    if (commit_template_.has_value() &&
        chain::block_hash(commit_template_->first) == chain::block_hash(final_block) &&
        commit_template_->first.prev_hash == n.ledger.head_hash()) {
        // identical bytes over an identical parent: adopt the validated
        // transition (scripts included, keeping replicas byte-equal)
        n.ledger = commit_template_->second;
        for (const auto &tx : commit_template_->first.body)
            n.mempool.erase(chain::tx_id(tx));
        n.committed = true;
        return;
    }

    chain::apply_options opts;
    opts.vote_cache = &vote_cache_;
    auto applied = chain::apply_block(n.ledger, final_block, opts);
    if (!applied)
        throw sim_invariant_error("commit rejected at node " + std::to_string(n.id) + ": " +
                                  applied.reason);
    n.ledger = std::move(*applied.next);
    for (const auto &tx : final_block.body)
        n.mempool.erase(chain::tx_id(tx));
    n.committed = true;
    if (!commit_template_.has_value())
        commit_template_.emplace(final_block, n.ledger);
}

void simulation::run_pool_formation(uint64_t at_height) {
    // initial structure per the protocol: the previous task's stable outcome
    game::partition initial = have_partition_
                                  ? last_partition_
                                  : game::partition::singletons(int(miner_profiles_.size()));
    auto res = game::form_pools(miner_profiles_, initial, cfg_.game);
    if (!have_partition_ || res.iterations > 0) {
        for (const auto &row : res.trace)
            metrics_.game.push_back({row.iteration, row.num_pools, row.num_switches, row.welfare});
    }
    last_partition_ = res.final;
    have_partition_ = true;
    (void)at_height;
}

void simulation::submit_pool_models(sim_task &task, double now) {
    // pools hold profile indices; node id = index + requester prefix
    const std::vector<game::miner_profile> &profiles = miner_profiles_;
    std::vector<double> miner_lat;
    for (const auto &p : profiles)
        miner_lat.push_back(p.latency);
    double d_th = percentile(miner_lat, cfg_.d_threshold_percentile);

    rng task_rng(derive_seed(cfg_.seed, "task-quality", task.spec.publish_height));
    int pool_index = 0;
    for (const auto &pool : last_partition_.pools) {
        // curator draw per pool over the latency threshold
        std::vector<double> pool_lat;
        std::vector<int> local_ids;
        for (int m : pool) {
            pool_lat.push_back(profiles[size_t(m)].latency);
            local_ids.push_back(m);
        }
        rng cur_rng(derive_seed(cfg_.seed, "curator", task.spec.publish_height,
                                uint64_t(pool_index)));
        std::vector<double> all_lat(profiles.size());
        for (size_t i = 0; i < profiles.size(); ++i)
            all_lat[i] = profiles[i].latency;
        int curator_local = curator_select(local_ids, all_lat, d_th, cur_rng);
        int curator_node = curator_local + cfg_.num_requesters;

        double pi = game::expected_loss(pool, profiles, cfg_.game);
        double quality = std::isinf(pi) ? 0.0
                                        : std::clamp(cfg_.quality_base - 0.5 * std::min(1.0, pi) +
                                                         task_rng.normal(0.0, cfg_.quality_noise),
                                                     0.01, 0.999);
        int64_t rounds = game::compute_round_budget(pool, profiles, cfg_.game).rounds;

        // member keys: everyone in the pool co-signs
        std::vector<crypto::public_key> pks;
        std::vector<crypto::key_pair> kps;
        for (int m : pool) {
            kps.push_back(nodes_[size_t(m + cfg_.num_requesters)].kp);
            pks.push_back(kps.back().pub);
        }
        byte_vec model_blob = to_bytes("model:" + hex_encode(task.tx.id) + ":pool" +
                                       std::to_string(pool_index) + ":q" +
                                       std::to_string(quality));
        digest32 mid = sha256(model_blob);
        surrogate_scores_[mid] = quality;
        staged_models_[task.tx.id].push_back(model_blob);

        bool sybil = cfg_.adversary == "sybil_duplicate_model" &&
                     std::find(pool.begin(), pool.end(),
                               attacker_node_ - cfg_.num_requesters) != pool.end();
        int copies = sybil ? 5 : 1;
        if (sybil)
            sybil_model_digest_ = mid;

        for (int c = 0; c < copies; ++c) {
            chain::fl_model_tx m;
            m.task_tx = task.tx.id;
            m.model_digest = mid;
            m.reference_score = quality;
            m.participation_fee = cfg_.participation_fee;
            m.timestamp_ms = to_ms(now) + 1 + uint64_t(c) * 2;
            m.issue_height = task.release_height - 1;
            m.pool_key = crypto::aggregate_pubkeys(pks);
            m.id = m.compute_id();
            byte_vec msg(m.id.begin(), m.id.end());
            std::vector<crypto::signature> sigs;
            for (const auto &kp : kps)
                sigs.push_back(crypto::sign(kp.secret, msg));
            m.multisig = crypto::aggregate_sigs(sigs, pks);

            chain::payment_tx dep;
            dep.ref_tx = m.id;
            dep.amount = cfg_.participation_fee;
            dep.purpose = chain::payment_purpose::escrow_deposit;
            dep.timestamp_ms = m.timestamp_ms - 1;
            const auto &curator_kp = nodes_[size_t(curator_node)].kp;
            dep.payer_pk = curator_kp.pub;
            dep.id = dep.compute_id();
            dep.signature =
                crypto::sign(curator_kp.secret, byte_vec(dep.id.begin(), dep.id.end())).bytes;

            broadcast(curator_node, chain::tx_variant{dep}, now, 300.0);
            broadcast(curator_node, chain::tx_variant{m}, now, 600.0);
            if (sybil)
                sybil_deposit_total_ += cfg_.participation_fee;
        }
        digest32 pool_wallet = h2(crypto::aggregate_pubkeys(pks).bytes);
        if (sybil)
            sybil_pool_wallet_ = pool_wallet;
        task.pool_wallets.push_back(pool_wallet);
        metrics_.accuracy.push_back({int(rounds), pool_index, quality});
        ++pool_index;
    }
    task.models_submitted = true;
}

void simulation::release_and_upload(sim_task &task, double now) {
    bool withhold = cfg_.adversary == "withhold_test_set";
    if (!withhold) {
        store_.put(task.test_bytes);
        ++store_version_;
    }
    // pools reveal their models only once the test set is public
    for (auto &blob : staged_models_[task.tx.id]) {
        store_.put(blob);
        ++store_version_;
    }
    staged_models_.erase(task.tx.id);

    if (cfg_.adversary == "spoof_late_model" && !withhold) {
        // attacker trains on the released test data and submits late
        byte_vec blob = to_bytes("spoofed:" + hex_encode(task.tx.id));
        digest32 mid = sha256(blob);
        surrogate_scores_[mid] = 1.0;
        spoof_model_digest_ = mid;
        store_.put(blob);
        ++store_version_;
        const auto &kp = nodes_[size_t(attacker_node_)].kp;
        chain::fl_model_tx m;
        m.task_tx = task.tx.id;
        m.model_digest = mid;
        m.reference_score = 1.0;
        m.participation_fee = cfg_.participation_fee;
        m.timestamp_ms = to_ms(now) + 3;
        m.issue_height = task.release_height + 1; // inside the testing phase
        m.pool_key = crypto::aggregate_pubkeys({kp.pub});
        spoof_pool_wallet_ = h2(m.pool_key.bytes);
        m.id = m.compute_id();
        byte_vec msg(m.id.begin(), m.id.end());
        m.multisig = crypto::aggregate_sigs({crypto::sign(kp.secret, msg)}, {kp.pub});

        chain::payment_tx dep;
        dep.ref_tx = m.id;
        dep.amount = cfg_.participation_fee;
        dep.purpose = chain::payment_purpose::escrow_deposit;
        dep.timestamp_ms = m.timestamp_ms - 1;
        dep.payer_pk = kp.pub;
        dep.id = dep.compute_id();
        dep.signature = crypto::sign(kp.secret, byte_vec(dep.id.begin(), dep.id.end())).bytes;
        broadcast(attacker_node_, chain::tx_variant{dep}, now, 300.0);
        broadcast(attacker_node_, chain::tx_variant{m}, now, 600.0);
    }
    task.released_or_withheld = true;
}

void simulation::inject_app_txs(uint64_t upcoming_height, double now) {
    for (auto &task : tasks_) {
        if (!task.published && task.spec.publish_height == upcoming_height) {
            uint64_t window = task.release_height; // already absolute
            (void)window;
            int requester = int(task.spec.publish_height % uint64_t(std::max(1, cfg_.num_requesters)));
            const auto &kp = nodes_[size_t(requester)].kp;
            chain::task_publication_tx t;
            t.reward = task.spec.reward;
            t.hosting_fee = task.spec.hosting_fee;
            t.initial_params = {0.0};
            t.metric = chain::metric_kind::accuracy;
            t.release_height = task.release_height;
            t.test_digest = sha256(task.test_bytes);
            t.timestamp_ms = to_ms(now) + 1;
            t.requester_pk = kp.pub;
            t.id = t.compute_id();
            t.signature = crypto::sign(kp.secret, byte_vec(t.id.begin(), t.id.end())).bytes;

            chain::payment_tx fund;
            fund.ref_tx = t.id;
            fund.amount = t.reward + t.hosting_fee;
            fund.purpose = chain::payment_purpose::escrow_deposit;
            fund.timestamp_ms = t.timestamp_ms - 1;
            fund.payer_pk = kp.pub;
            fund.id = fund.compute_id();
            fund.signature =
                crypto::sign(kp.secret, byte_vec(fund.id.begin(), fund.id.end())).bytes;

            task.tx = t;
            task.published = true;
            broadcast(requester, chain::tx_variant{fund}, now, 300.0);
            broadcast(requester, chain::tx_variant{t}, now, 500.0);
            run_pool_formation(upcoming_height);
        }
        if (task.published && !task.models_submitted &&
            upcoming_height == task.release_height - 1)
            submit_pool_models(task, now);
        if (task.published && !task.released_or_withheld &&
            upcoming_height == task.release_height)
            release_and_upload(task, now);
    }

    // background wallet-to-wallet payments keep blocks non-trivial
    for (int i = 0; i < cfg_.background_payments_per_height; ++i) {
        int from = cfg_.num_requesters +
                   int(app_rng_.uniform_index(uint64_t(cfg_.num_nodes - cfg_.num_requesters)));
        int to = cfg_.num_requesters +
                 int(app_rng_.uniform_index(uint64_t(cfg_.num_nodes - cfg_.num_requesters)));
        if (to == from)
            to = cfg_.num_requesters + (to - cfg_.num_requesters + 1) %
                                           (cfg_.num_nodes - cfg_.num_requesters);
        const auto &kp = nodes_[size_t(from)].kp;
        chain::payment_tx p;
        p.ref_tx = digest32{};
        p.to_wallet = nodes_[size_t(to)].kp.wallet;
        p.amount = 1;
        p.purpose = chain::payment_purpose::transfer;
        p.timestamp_ms = to_ms(now) + 1 + uint64_t(i);
        p.payer_pk = kp.pub;
        p.id = p.compute_id();
        p.signature = crypto::sign(kp.secret, byte_vec(p.id.begin(), p.id.end())).bytes;
        broadcast(from, chain::tx_variant{p}, now, 250.0);
    }
}

void simulation::finalize_height(uint64_t height, double t_commit, uint32_t stages_used) {
    // graded-consensus soundness: a grade-2 value excludes any other graded value
    std::optional<digest32> grade2_value;
    for (const auto &n : nodes_) {
        if (n.byzantine || n.gc.grade != 2)
            continue;
        grade2_value = n.gc.value;
        break;
    }
    if (grade2_value.has_value()) {
        for (const auto &n : nodes_) {
            if (n.byzantine || n.gc.grade < 1)
                continue;
            if (n.gc.value != grade2_value)
                throw sim_invariant_error("graded consensus soundness broken at height " +
                                          std::to_string(height));
        }
    }

    // all honest nodes must sit on the same chain
    const node_state *ref = nullptr;
    for (const auto &n : nodes_) {
        if (n.byzantine)
            continue;
        if (ref == nullptr) {
            ref = &n;
            continue;
        }
        if (n.ledger.head_hash() != ref->ledger.head_hash()) {
            fork_detected_ = true;
            throw sim_invariant_error("fork at height " + std::to_string(height));
        }
    }
    const chain::ledger_state &st = ref->ledger;
    if (st.total_currency() != genesis_total_)
        throw sim_invariant_error("conservation broken at height " + std::to_string(height));
    for (const auto &[w, c] : st.credits)
        if (c < 0)
            throw sim_invariant_error("negative credit at height " + std::to_string(height));

    const chain::block &committed = st.head();
    height_row row;
    row.height = height;
    row.tx_count = committed.body.size();
    row.latency_s = t_commit - round_start_s_;
    row.tps = row.latency_s > 0 ? double(row.tx_count) / row.latency_s : 0.0;
    row.stages = stages_used;
    row.committee = committed.meta.script.votes.size();
    metrics_.heights.push_back(row);
    if (committed.body.empty() && committed.meta.kind == chain::settlement_kind::none)
        ++metrics_.empty_blocks;

    if (committed.meta.kind != chain::settlement_kind::none) {
        task_row trow;
        trow.task_id = hex_encode(committed.meta.task_id);
        trow.settle_height = height;
        trow.forfeited = committed.meta.kind == chain::settlement_kind::forfeited;
        if (trow.forfeited && cfg_.adversary == "withhold_test_set" &&
            !attacks_.withhold_forfeit_seen) {
            attacks_.withhold_forfeit_seen = true;
            attacks_.withhold_forfeit_height = height;
        }
        std::map<digest32, int> per_model;
        for (const auto &e : committed.meta.ranking) {
            ++per_model[e.model_id];
            if (spoof_model_digest_ != digest32{} && e.model_id == spoof_model_digest_)
                attacks_.spoof_tx_in_any_ranking = true;
        }
        for (const auto &[mid, cnt] : per_model)
            if (sybil_model_digest_ != digest32{} && mid == sybil_model_digest_)
                attacks_.sybil_max_entries_per_model =
                    std::max(attacks_.sybil_max_entries_per_model, cnt);
        if (!committed.meta.ranking.empty() && committed.meta.ranking[0].evaluated) {
            trow.best_score = committed.meta.ranking[0].score;
            // winner wallet via the settlement reward payment
            for (const auto &tx : committed.body) {
                if (const auto *p = std::get_if<chain::payment_tx>(&tx)) {
                    if (p->from_escrow() && p->purpose == chain::payment_purpose::reward) {
                        trow.winner_pool = hex_encode(p->to_wallet);
                        if (spoof_model_digest_ != digest32{} &&
                            committed.meta.ranking[0].model_id == spoof_model_digest_)
                            attacks_.spoof_pool_won = true;
                    }
                }
            }
        }
        for (const auto &tx : committed.body) {
            if (const auto *p = std::get_if<chain::payment_tx>(&tx)) {
                if (!p->from_escrow())
                    continue;
                if (p->purpose == chain::payment_purpose::refund &&
                    sybil_pool_wallet_ != digest32{} && p->to_wallet == sybil_pool_wallet_)
                    sybil_refunded_ += p->amount;
            }
        }
        if (spoof_model_digest_ != digest32{}) {
            auto qualified = contracts::qualified_entries(committed.meta.ranking,
                                                          chain::metric_kind::accuracy);
            for (size_t idx : qualified)
                if (committed.meta.ranking[idx].model_id == spoof_model_digest_)
                    attacks_.spoof_pool_qualified = true;
        }
        for (auto &task : tasks_)
            if (task.tx.id == committed.meta.task_id)
                task.settled_seen = true;
        metrics_.tasks.push_back(trow);
    }

    // byzantine nodes track the chain to keep their credentials current
    for (auto &n : nodes_) {
        if (!n.byzantine)
            continue;
        n.ledger = ref->ledger;
        for (const auto &tx : committed.body)
            n.mempool.erase(chain::tx_id(tx));
    }
    committed_chain_.push_back(committed);
}

run_result simulation::run() {
    committed_chain_.push_back(nodes_[0].ledger.head());
    double t = 0.0;
    {
        event deadline;
        deadline.time = t;
        deadline.kind = event_kind::task_deadline;
        deadline.height = 1;
        deadline.action = [this, t] { inject_app_txs(1, t); };
        schedule(std::move(deadline));
    }
    double T0 = t + mempool_window();

    for (uint64_t height = 1; height <= cfg_.max_heights; ++height) {
        // activity gate: no tasks, no mempool, no fallback -> stop building
        bool pending_task = false;
        for (const auto &task : tasks_)
            if (!task.settled_seen)
                pending_task = true;
        bool pending_tx = !nodes_[0].mempool.empty();
        if (!pending_task && !pending_tx && !cfg_.pow_fallback)
            break;

        round_start_s_ = T0;
        round_start_ms_ = to_ms(T0);
        double t_stage = T0;
        uint32_t stage = 1;
        bool committed = false;
        while (!committed) {
            // drain deliveries due before this stage barrier
            while (!queue_.empty() && queue_.top().time <= t_stage) {
                event ev = queue_.top();
                queue_.pop();
                if (ev.time < now_)
                    throw sim_invariant_error("event processed out of time order");
                now_ = ev.time;
                if (ev.kind == event_kind::deliver_msg)
                    handle_delivery(ev.node, std::static_pointer_cast<const message>(ev.payload));
                else if (ev.kind == event_kind::task_deadline && ev.action)
                    ev.action();
            }
            now_ = t_stage;
            for (auto &n : nodes_) {
                event tick;
                tick.time = t_stage;
                tick.kind = event_kind::node_tick;
                tick.node = n.id;
                tick.stage = stage;
                tick.height = height;
                schedule(std::move(tick));
            }
            while (!queue_.empty() && queue_.top().time <= t_stage) {
                event ev = queue_.top();
                queue_.pop();
                if (ev.time < now_)
                    throw sim_invariant_error("event processed out of time order");
                now_ = ev.time;
                if (ev.kind == event_kind::node_tick)
                    node_stage_action(ev.node, ev.height, ev.stage);
                else if (ev.kind == event_kind::deliver_msg)
                    handle_delivery(ev.node, std::static_pointer_cast<const message>(ev.payload));
                else if (ev.kind == event_kind::task_deadline && ev.action)
                    ev.action();
            }
            if (stage >= 4) {
                committed = true;
                for (const auto &n : nodes_)
                    if (!n.byzantine && !n.committed)
                        committed = false;
            }
            if (committed)
                break;
            if (stage > 3 + 13)
                throw sim_invariant_error("liveness failure at height " + std::to_string(height));
            t_stage += stage_duration(stage);
            ++stage;
        }
        finalize_height(height, t_stage, stage - 3);
        event deadline;
        deadline.time = t_stage;
        deadline.kind = event_kind::task_deadline;
        deadline.height = height + 1;
        double at = t_stage;
        uint64_t upcoming = height + 1;
        deadline.action = [this, upcoming, at] { inject_app_txs(upcoming, at); };
        schedule(std::move(deadline));
        T0 = t_stage + mempool_window();
    }

    if (sybil_deposit_total_ > 0)
        attacks_.sybil_forfeited = sybil_deposit_total_ - sybil_refunded_;
    run_result out;
    out.metrics = std::move(metrics_);
    out.genesis = genesis_;
    out.final_state = nodes_[0].ledger;
    out.chain_dump = chain::dump_chain(committed_chain_);
    out.fork_detected = fork_detected_;
    out.committed_heights = out.final_state.height();
    out.attacks = attacks_;
    return out;
}

} // namespace

run_result run_scenario(const scenario_config &cfg) {
    simulation s(cfg);
    return s.run();
}

std::vector<std::string> emit_metrics(const metrics_log &log, const std::string &out_dir,
                                      const std::string &format) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    bool jsonl = format == "json-lines";

    auto open_file = [&](const std::string &name) {
        std::string path = (fs::path(out_dir) / name).string();
        written.push_back(path);
        return std::ofstream(path, std::ios::trunc);
    };

    if (jsonl) {
        auto f = open_file("heights.jsonl");
        for (const auto &r : log.heights) {
            json j{{"height", r.height}, {"tx_count", r.tx_count}, {"latency_s", r.latency_s},
                   {"tps", r.tps},       {"stages", r.stages},     {"committee", r.committee}};
            f << j.dump() << "\n";
        }
        auto t = open_file("tasks.jsonl");
        for (const auto &r : log.tasks) {
            json j{{"task", r.task_id},          {"winner", r.winner_pool},
                   {"best_score", r.best_score}, {"rounds", r.rounds},
                   {"forfeited", r.forfeited},   {"settle_height", r.settle_height}};
            t << j.dump() << "\n";
        }
        auto g = open_file("game.jsonl");
        for (const auto &r : log.game) {
            json j{{"h", r.iteration}, {"pools", r.pools}, {"switches", r.switches},
                   {"welfare", r.welfare}};
            g << j.dump() << "\n";
        }
        auto a = open_file("accuracy.jsonl");
        for (const auto &r : log.accuracy) {
            json j{{"round", r.round}, {"pool", r.pool}, {"accuracy", r.accuracy}};
            a << j.dump() << "\n";
        }
        return written;
    }

    {
        auto f = open_file("heights.csv");
        f << "# schema=heights.v1\n";
        f << "height,tx_count,block_latency_s,tps,stages,committee\n";
        char buf[160];
        for (const auto &r : log.heights) {
            std::snprintf(buf, sizeof buf, "%llu,%zu,%.6f,%.6f,%u,%zu\n",
                          (unsigned long long)r.height, r.tx_count, r.latency_s, r.tps, r.stages,
                          r.committee);
            f << buf;
        }
    }
    {
        auto f = open_file("tasks.csv");
        f << "# schema=tasks.v1\n";
        f << "task,winner,best_score,rounds,forfeited,settle_height\n";
        for (const auto &r : log.tasks) {
            char buf[64];
            std::snprintf(buf, sizeof buf, ",%.6f,%lld,%d,%llu\n", r.best_score,
                          (long long)r.rounds, r.forfeited ? 1 : 0,
                          (unsigned long long)r.settle_height);
            f << r.task_id << "," << r.winner_pool << buf;
        }
    }
    {
        auto f = open_file("game.csv");
        f << "# schema=game.v1\n";
        f << "h,num_pools,num_switches,welfare\n";
        for (const auto &r : log.game) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%d,%d,%d,%.9f\n", r.iteration, r.pools, r.switches,
                          r.welfare);
            f << buf;
        }
    }
    {
        auto f = open_file("accuracy.csv");
        f << "# schema=accuracy.v1\n";
        f << "round,pool,accuracy\n";
        for (const auto &r : log.accuracy) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%d,%d,%.6f\n", r.round, r.pool, r.accuracy);
            f << buf;
        }
    }
    return written;
}

namespace {

void maybe(const json &j, const char *key, auto &field) {
    if (j.contains(key))
        field = j.at(key);
}

} // namespace

scenario_config scenario_from_json(const std::string &text) {
    json j = json::parse(text);
    scenario_config cfg;
    maybe(j, "seed", cfg.seed);
    maybe(j, "num_nodes", cfg.num_nodes);
    maybe(j, "num_requesters", cfg.num_requesters);
    maybe(j, "byz_credit_fraction", cfg.byz_credit_fraction);
    maybe(j, "initial_credit", cfg.initial_credit);
    maybe(j, "proposer_target", cfg.proposer_target);
    maybe(j, "vote_target", cfg.vote_target);
    maybe(j, "latency_lo_s", cfg.latency_lo_s);
    maybe(j, "latency_hi_s", cfg.latency_hi_s);
    maybe(j, "jitter_mean_s", cfg.jitter_mean_s);
    maybe(j, "jitter_cap_s", cfg.jitter_cap_s);
    maybe(j, "bandwidth_bytes_per_s", cfg.bandwidth_bytes_per_s);
    maybe(j, "block_size_cap", cfg.block_size_cap);
    maybe(j, "max_heights", cfg.max_heights);
    maybe(j, "num_tasks", cfg.num_tasks);
    maybe(j, "task_interval", cfg.task_interval);
    maybe(j, "train_window", cfg.train_window);
    maybe(j, "task_reward", cfg.task_reward);
    maybe(j, "hosting_fee", cfg.hosting_fee);
    maybe(j, "participation_fee", cfg.participation_fee);
    maybe(j, "background_payments_per_height", cfg.background_payments_per_height);
    maybe(j, "task_window_slack", cfg.task_window_slack);
    maybe(j, "quality_base", cfg.quality_base);
    maybe(j, "quality_noise", cfg.quality_noise);
    maybe(j, "pow_fallback", cfg.pow_fallback);
    maybe(j, "pow_difficulty_bits", cfg.pow_difficulty_bits);
    maybe(j, "adversary", cfg.adversary);
    maybe(j, "d_threshold_percentile", cfg.d_threshold_percentile);
    if (j.contains("params")) {
        const json &p = j.at("params");
        maybe(p, "min_train_period", cfg.params.min_train_period);
        maybe(p, "test_duration", cfg.params.test_duration);
        maybe(p, "lookback_k", cfg.params.lookback_k);
        maybe(p, "credit_validator", cfg.params.credit_validator);
        maybe(p, "credit_winner", cfg.params.credit_winner);
        maybe(p, "credit_qualified", cfg.params.credit_qualified);
    }
    if (j.contains("game")) {
        const json &g = j.at("game");
        maybe(g, "gamma_s", cfg.game.gamma_s);
        maybe(g, "gamma_d", cfg.game.gamma_d);
        maybe(g, "lambda_c", cfg.game.lambda_c);
        maybe(g, "beta", cfg.game.beta);
        maybe(g, "train_time", cfg.game.train_time);
    }
    if (j.contains("tasks")) {
        for (const json &t : j.at("tasks")) {
            task_spec s;
            maybe(t, "publish_height", s.publish_height);
            maybe(t, "train_window", s.train_window);
            maybe(t, "reward", s.reward);
            maybe(t, "hosting_fee", s.hosting_fee);
            cfg.tasks.push_back(s);
        }
    }
    return cfg;
}

std::string scenario_to_json(const scenario_config &cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["num_nodes"] = cfg.num_nodes;
    j["num_requesters"] = cfg.num_requesters;
    j["byz_credit_fraction"] = cfg.byz_credit_fraction;
    j["initial_credit"] = cfg.initial_credit;
    j["proposer_target"] = cfg.proposer_target;
    j["vote_target"] = cfg.vote_target;
    j["latency_lo_s"] = cfg.latency_lo_s;
    j["latency_hi_s"] = cfg.latency_hi_s;
    j["jitter_mean_s"] = cfg.jitter_mean_s;
    j["jitter_cap_s"] = cfg.jitter_cap_s;
    j["bandwidth_bytes_per_s"] = cfg.bandwidth_bytes_per_s;
    j["block_size_cap"] = cfg.block_size_cap;
    j["max_heights"] = cfg.max_heights;
    j["num_tasks"] = cfg.num_tasks;
    j["task_interval"] = cfg.task_interval;
    j["train_window"] = cfg.train_window;
    j["task_reward"] = cfg.task_reward;
    j["hosting_fee"] = cfg.hosting_fee;
    j["participation_fee"] = cfg.participation_fee;
    j["background_payments_per_height"] = cfg.background_payments_per_height;
    j["task_window_slack"] = cfg.task_window_slack;
    j["quality_base"] = cfg.quality_base;
    j["quality_noise"] = cfg.quality_noise;
    j["pow_fallback"] = cfg.pow_fallback;
    j["pow_difficulty_bits"] = cfg.pow_difficulty_bits;
    j["adversary"] = cfg.adversary;
    j["d_threshold_percentile"] = cfg.d_threshold_percentile;
    j["params"] = {{"min_train_period", cfg.params.min_train_period},
                   {"test_duration", cfg.params.test_duration},
                   {"lookback_k", cfg.params.lookback_k},
                   {"credit_validator", cfg.params.credit_validator},
                   {"credit_winner", cfg.params.credit_winner},
                   {"credit_qualified", cfg.params.credit_qualified}};
    j["game"] = {{"gamma_s", cfg.game.gamma_s},
                 {"gamma_d", cfg.game.gamma_d},
                 {"lambda_c", cfg.game.lambda_c},
                 {"beta", cfg.game.beta},
                 {"train_time", cfg.game.train_time}};
    return j.dump(2);
}

std::string genesis_to_json(const chain::genesis_config &cfg) {
    json accounts = json::array();
    for (const auto &acc : cfg.accounts)
        accounts.push_back({{"pk", hex_encode(std::span<const uint8_t>(acc.pk.data(), acc.pk.size()))},
                            {"balance", acc.balance},
                            {"credit", acc.credit}});
    json j;
    j["accounts"] = accounts;
    j["seed"] = hex_encode(cfg.seed);
    j["timestamp_ms"] = cfg.timestamp_ms;
    j["params"] = {{"min_train_period", cfg.params.min_train_period},
                   {"test_duration", cfg.params.test_duration},
                   {"lookback_k", cfg.params.lookback_k},
                   {"proposer_target", cfg.params.proposer_target},
                   {"vote_target", cfg.params.vote_target},
                   {"credit_validator", cfg.params.credit_validator},
                   {"credit_winner", cfg.params.credit_winner},
                   {"credit_qualified", cfg.params.credit_qualified},
                   {"default_hosting_fee", cfg.params.default_hosting_fee},
                   {"default_participation_fee", cfg.params.default_participation_fee}};
    return j.dump(2);
}

chain::genesis_config genesis_from_json(const std::string &text) {
    json j = json::parse(text);
    chain::genesis_config cfg;
    for (const json &a : j.at("accounts")) {
        chain::genesis_account acc;
        acc.pk = hex_decode(a.at("pk").get<std::string>());
        acc.balance = a.at("balance");
        acc.credit = a.at("credit");
        cfg.accounts.push_back(std::move(acc));
    }
    cfg.seed = digest_from_hex(j.at("seed").get<std::string>());
    maybe(j, "timestamp_ms", cfg.timestamp_ms);
    if (j.contains("params")) {
        const json &p = j.at("params");
        maybe(p, "min_train_period", cfg.params.min_train_period);
        maybe(p, "test_duration", cfg.params.test_duration);
        maybe(p, "lookback_k", cfg.params.lookback_k);
        maybe(p, "proposer_target", cfg.params.proposer_target);
        maybe(p, "vote_target", cfg.params.vote_target);
        maybe(p, "credit_validator", cfg.params.credit_validator);
        maybe(p, "credit_winner", cfg.params.credit_winner);
        maybe(p, "credit_qualified", cfg.params.credit_qualified);
        maybe(p, "default_hosting_fee", cfg.params.default_hosting_fee);
        maybe(p, "default_participation_fee", cfg.params.default_participation_fee);
    }
    return cfg;
}

verify_report verify_chain(const chain::genesis_config &genesis,
                           const std::vector<chain::block> &blocks) {
    verify_report report;
    if (blocks.empty()) {
        report.reason = "empty dump";
        return report;
    }
    chain::ledger_state st = chain::make_genesis(genesis);
    if (chain::block_hash(blocks[0]) != st.head_hash()) {
        report.reason = "genesis mismatch";
        return report;
    }
    chain::currency genesis_total = st.total_currency();
    for (size_t i = 1; i < blocks.size(); ++i) {
        // protocol invariant: nothing trained in the testing phase
        for (const auto &tx : blocks[i].body) {
            if (const auto *m = std::get_if<chain::fl_model_tx>(&tx)) {
                auto it = st.tasks.find(m->task_tx);
                if (it != st.tasks.end() && m->issue_height > it->second.tx.release_height) {
                    report.reason = "testing-phase model transaction at height " +
                                    std::to_string(i);
                    return report;
                }
            }
        }
        auto applied = chain::apply_block(st, blocks[i]);
        if (!applied) {
            report.reason = "height " + std::to_string(i) + ": " + applied.reason;
            return report;
        }
        st = std::move(*applied.next);
        if (st.total_currency() != genesis_total) {
            report.reason = "conservation broken at height " + std::to_string(i);
            return report;
        }
        for (const auto &[w, c] : st.credits) {
            if (c < 0) {
                report.reason = "negative credit at height " + std::to_string(i);
                return report;
            }
        }
    }
    report.ok = true;
    report.heights = st.height();
    report.total_currency = st.total_currency();
    return report;
}

} // namespace pofl::sim
