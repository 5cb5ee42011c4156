#include "pofl/consensus.hpp"

#include "pofl/rng.hpp"

#include <algorithm>
#include <set>

namespace pofl::consensus {

gc_outcome gc_evaluate(const std::map<digest32, int> &counts, int f) {
    gc_outcome out;
    int at_least_f1 = 0;
    const digest32 *best = nullptr;
    int best_count = 0;
    for (const auto &[value, count] : counts) {
        if (count >= f + 1)
            ++at_least_f1;
        if (count > best_count) {
            best_count = count;
            best = &value;
        }
    }
    out.overload_fault = at_least_f1 >= 2;
    if (best != nullptr && best_count >= 2 * f + 1) {
        out.value = *best;
        out.grade = 2;
    } else if (best != nullptr && best_count >= f + 1) {
        out.value = *best;
        out.grade = 1;
    }
    return out;
}

signed_vote make_vote(const crypto::key_pair &kp, const crypto::sortition_credential &cred,
                      const digest32 &value, uint64_t height, uint32_t stage,
                      const digest32 &seed, uint64_t timestamp_ms) {
    signed_vote v;
    v.value = value;
    v.height = height;
    v.stage = stage;
    v.seed = seed;
    v.record.voter_pk = kp.pub;
    v.record.credential = cred.proof;
    v.record.timestamp_ms = timestamp_ms;
    byte_vec msg = chain::make_vote_signing_bytes(v.record, value, height, stage, seed);
    v.record.signature = crypto::sign(kp.secret, msg).bytes;
    return v;
}

int64_t eligible_total_credit(const chain::ledger_state &state) {
    return state.total_credit();
}

std::optional<digest32> check_vote(const chain::ledger_state &state, const signed_vote &v,
                                   uint32_t committee_target) {
    digest32 wallet = crypto::wallet_address(v.record.voter_pk);
    auto known = state.keys.find(wallet);
    if (known == state.keys.end() || known->second != v.record.voter_pk)
        return std::nullopt;
    crypto::sortition_params sp;
    sp.height = v.height;
    sp.stage = v.stage;
    sp.seed = v.seed;
    sp.credit = state.credit_of(wallet);
    sp.total_credit = eligible_total_credit(state);
    sp.committee_size = committee_target;
    sp.active_keys = uint32_t(state.keys.size());
    if (sp.total_credit <= 0)
        return std::nullopt;
    crypto::sortition_credential cred;
    cred.proof = v.record.credential;
    cred.height = v.height;
    cred.stage = v.stage;
    cred.seed = v.seed;
    if (!crypto::verify_credential(v.record.voter_pk, cred, sp))
        return std::nullopt;
    byte_vec msg = chain::make_vote_signing_bytes(v.record, v.value, v.height, v.stage, v.seed);
    if (!crypto::verify(v.record.voter_pk, msg, crypto::signature{v.record.signature}))
        return std::nullopt;
    return wallet;
}

committee select_committee(const std::vector<crypto::key_pair> &keys,
                           const std::vector<int64_t> &credits, uint64_t height, uint32_t stage,
                           const digest32 &seed, uint32_t target) {
    if (keys.size() != credits.size())
        throw std::invalid_argument("keys and credits misaligned");
    int64_t total = 0;
    for (int64_t c : credits)
        total += c;
    if (total <= 0)
        throw std::invalid_argument("total credit must be positive");
    committee out;
    uint32_t effective = std::max<uint32_t>(1, target);
    for (int attempt = 0; attempt < 8; ++attempt) {
        out.members.clear();
        crypto::sortition_params sp;
        sp.height = height;
        sp.stage = stage;
        sp.seed = seed;
        sp.total_credit = total;
        sp.committee_size = effective;
        sp.active_keys = uint32_t(keys.size());
        for (size_t i = 0; i < keys.size(); ++i) {
            sp.credit = credits[i];
            if (auto cred = crypto::sortition(keys[i], sp))
                out.members.push_back({i, *cred});
        }
        if (!out.members.empty()) {
            out.effective_target = effective;
            out.retries = attempt;
            return out;
        }
        effective *= 2; // nobody drawn; widen and retry
    }
    out.effective_target = effective;
    out.retries = 8;
    return out;
}

settlement_choice choose_settlement_task(const chain::ledger_state &state,
                                         const contracts::content_store &store,
                                         uint64_t height) {
    struct candidate {
        digest32 id;
        size_t submissions;
        int64_t remaining;
        chain::settlement_kind kind;
    };
    std::vector<candidate> cands;
    for (const auto &[id, task] : state.tasks) {
        if (!task.open(height) || height < task.tx.release_height)
            continue;
        int64_t remaining = int64_t(task.tx.release_height + state.params.test_duration) -
                            int64_t(height);
        bool released = store.contains(task.tx.test_digest);
        if (released) {
            cands.push_back({id, task.submissions.size(), remaining,
                             chain::settlement_kind::ranked});
        } else if (remaining < 0) {
            cands.push_back({id, task.submissions.size(), remaining,
                             chain::settlement_kind::forfeited});
        }
    }
    if (cands.empty())
        return {};
    std::sort(cands.begin(), cands.end(), [](const candidate &a, const candidate &b) {
        if (a.submissions != b.submissions)
            return a.submissions > b.submissions;
        if (a.remaining != b.remaining)
            return a.remaining < b.remaining;
        return a.id < b.id;
    });
    return {cands[0].id, cands[0].kind};
}

std::vector<digest32> parent_validator_wallets(const chain::ledger_state &state) {
    std::vector<digest32> out;
    std::set<digest32> seen;
    for (const auto &v : state.head().meta.script.votes) {
        digest32 w = crypto::wallet_address(v.voter_pk);
        if (seen.insert(w).second)
            out.push_back(w);
    }
    return out;
}

chain::block propose_candidate(const proposal_inputs &in) {
    const chain::ledger_state &state = in.state;
    uint64_t height = state.height() + 1;

    chain::block b;
    b.prev_hash = state.head_hash();
    b.timestamp_ms = in.now_ms;
    b.meta.next_seed = chain::next_seed_for(state.seed(), height);

    settlement_choice choice = choose_settlement_task(state, in.store, height);
    if (choice.kind != chain::settlement_kind::none && parent_validator_wallets(state).empty())
        choice = {}; // nobody to pay fees to yet; settle at the next height
    const chain::task_state *task = nullptr;
    contracts::ranking_result ranking;
    if (choice.kind != chain::settlement_kind::none) {
        task = &state.tasks.at(choice.task_id);
        if (choice.kind == chain::settlement_kind::ranked) {
            ranking = contracts::model_ranking(state, *task, task->submissions, in.store, height,
                                               in.evaluator);
            if (ranking.requester_default) {
                // Test digest matched nothing inside the window after all.
                choice.kind = chain::settlement_kind::forfeited;
                ranking.entries.clear();
            }
        }
        b.meta.kind = choice.kind;
        b.meta.task_id = choice.task_id;
        if (choice.kind == chain::settlement_kind::ranked)
            b.meta.ranking = ranking.entries;
    }

    // Mempool sweep in canonical order against a scratch state, so the body
    // only carries transactions the block itself can apply.
    std::vector<const chain::tx_variant *> pending;
    for (const auto &tx : in.mempool)
        if (chain::tx_timestamp(tx) <= in.now_ms && !state.seen_txs.contains(chain::tx_id(tx)))
            pending.push_back(&tx);
    std::sort(pending.begin(), pending.end(),
              [](const chain::tx_variant *a, const chain::tx_variant *b) {
                  uint64_t ta = chain::tx_timestamp(*a), tb = chain::tx_timestamp(*b);
                  if (ta != tb)
                      return ta < tb;
                  return chain::tx_id(*a) < chain::tx_id(*b);
              });
    chain::ledger_state scratch = state;
    size_t body_bytes = 0;
    for (const auto *tx : pending) {
        size_t size = chain::serialize_tx(*tx).size();
        if (body_bytes + size > in.block_size_cap)
            continue;
        if (chain::apply_single_tx(scratch, *tx, height, b.meta.kind, b.meta.task_id).ok) {
            b.body.push_back(*tx);
            body_bytes += size;
        }
    }

    if (choice.kind != chain::settlement_kind::none) {
        std::vector<digest32> validators = parent_validator_wallets(state);
        contracts::settlement_plan plan = contracts::block_rewarding(
            state, *task, b.meta.ranking, choice.kind == chain::settlement_kind::forfeited,
            validators);
        for (const auto &t : plan.transfers) {
            chain::payment_tx p;
            p.ref_tx = t.ref_tx;
            p.to_wallet = t.to_wallet;
            p.amount = t.amount;
            p.purpose = t.purpose;
            p.timestamp_ms = in.now_ms;
            p.id = p.compute_id();
            b.body.push_back(p);
        }
    }

    std::stable_sort(b.body.begin(), b.body.end(),
                     [](const chain::tx_variant &a, const chain::tx_variant &b2) {
                         uint64_t ta = chain::tx_timestamp(a), tb = chain::tx_timestamp(b2);
                         if (ta != tb)
                             return ta < tb;
                         return chain::tx_id(a) < chain::tx_id(b2);
                     });
    b.merkle_root = chain::merkle_root(b.body);
    return b;
}

int common_coin(const digest32 &seed, uint64_t height, uint32_t stage) {
    ser::writer w;
    w.put_digest(seed);
    w.put_u64(height);
    w.put_u32(stage);
    digest32 d = sha256(w.bytes());
    return d[31] & 1;
}

bba_result run_bba(const std::vector<bba_validator> &validators, const bba_config &cfg) {
    size_t n = validators.size();
    uint32_t target = cfg.vote_target == 0 ? uint32_t(n) : cfg.vote_target;
    int threshold = chain::cert_threshold(target);
    int64_t total_credit = 0;
    for (const auto &v : validators)
        total_credit += v.credit;

    std::vector<int> bits(n);
    for (size_t i = 0; i < n; ++i)
        bits[i] = validators[i].input_bit;

    rng byz_gen(derive_seed(cfg.rng_seed, "bba-byzantine"));
    bba_result out;

    for (uint32_t stage = cfg.first_stage; stage < cfg.first_stage + cfg.stage_cap; ++stage) {
        crypto::sortition_params sp;
        sp.height = cfg.height;
        sp.stage = stage;
        sp.seed = cfg.seed;
        sp.total_credit = total_credit;
        sp.committee_size = target;
        sp.active_keys = uint32_t(n);

        struct cast_vote {
            size_t who;
            crypto::sortition_credential cred;
            int bit; // honest stage vote; byzantine votes resolve per recipient
            bool byzantine;
        };
        std::vector<cast_vote> votes;
        for (size_t i = 0; i < n; ++i) {
            sp.credit = validators[i].credit;
            auto cred = crypto::sortition(validators[i].kp, sp);
            if (!cred)
                continue;
            votes.push_back({i, *cred, bits[i], validators[i].byzantine});
        }

        // Tally at every honest node; byzantine committee members equivocate
        // with a per-recipient random bit.
        int decided_zero = 0, decided_one = 0;
        int coin = common_coin(cfg.seed, cfg.height, stage);
        std::vector<int> stage_decision(n, -1);
        for (size_t me = 0; me < n; ++me) {
            if (validators[me].byzantine)
                continue;
            int cnt0 = 0, cnt1 = 0;
            for (const auto &cv : votes) {
                int bit = cv.bit;
                if (cv.byzantine)
                    bit = int(byz_gen.next_u64() & 1);
                (bit == 0 ? cnt0 : cnt1)++;
            }
            if (cnt0 >= threshold) {
                stage_decision[me] = 0;
                ++decided_zero;
            } else if (cnt1 >= threshold) {
                stage_decision[me] = 1;
                ++decided_one;
            } else {
                bits[me] = coin;
            }
        }
        out.safety_fault = out.safety_fault || (decided_zero > 0 && decided_one > 0);

        // A certificate formed anywhere settles everyone before the next
        // stage (honest gossip of the matching-vote set).
        if (decided_zero + decided_one > 0) {
            int cert_bit = decided_zero >= decided_one ? 0 : 1;
            const digest32 &value = cert_bit == 0 ? cfg.value_for_zero : cfg.value_for_one;
            out.bit = cert_bit;
            out.stages_used = stage - cfg.first_stage + 1;
            out.script.stage = stage;
            out.script.value = value;
            for (const auto &cv : votes) {
                if (cv.byzantine || cv.bit != cert_bit)
                    continue;
                signed_vote sv = make_vote(validators[cv.who].kp, cv.cred, value, cfg.height,
                                           stage, cfg.seed, 0);
                out.script.votes.push_back(sv.record);
            }
            return out;
        }
    }
    out.liveness_failure = true;
    out.stages_used = cfg.stage_cap;
    return out;
}

} // namespace pofl::consensus
