#include "pofl/contracts.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace pofl::contracts {

digest32 content_store::put(byte_vec bytes) {
    digest32 key = sha256(bytes);
    items_.emplace(key, std::move(bytes));
    return key;
}

std::optional<byte_vec> content_store::get(const digest32 &key) const {
    auto it = items_.find(key);
    if (it == items_.end())
        return std::nullopt;
    return it->second;
}

bool content_store::contains(const digest32 &key) const {
    return items_.count(key) != 0;
}

namespace {

bool higher_is_better(chain::metric_kind m) {
    return m != chain::metric_kind::loss;
}

bool score_before(double a, double b, chain::metric_kind m) {
    return higher_is_better(m) ? a > b : a < b;
}

} // namespace

ranking_result model_ranking(const chain::ledger_state &state, const chain::task_state &task,
                             const std::vector<chain::fl_model_tx> &model_txs,
                             const content_store &store, uint64_t current_height,
                             const evaluator_fn &evaluate) {
    ranking_result out;
    uint64_t release = task.tx.release_height;
    uint64_t window_end = release + state.params.test_duration;
    bool in_window = current_height >= release && current_height <= window_end;

    std::optional<byte_vec> test_set;
    if (in_window)
        test_set = store.get(task.tx.test_digest);
    if (current_height >= release && !test_set.has_value())
        out.requester_default = true;

    // Earliest transaction wins per mID; later duplicates are dropped (their
    // deposits are still forfeited at settlement).
    std::vector<const chain::fl_model_tx *> ordered;
    for (const auto &tx : model_txs)
        ordered.push_back(&tx);
    std::sort(ordered.begin(), ordered.end(),
              [](const chain::fl_model_tx *a, const chain::fl_model_tx *b) {
                  if (a->timestamp_ms != b->timestamp_ms)
                      return a->timestamp_ms < b->timestamp_ms;
                  return a->model_digest < b->model_digest;
              });
    std::set<digest32> seen_models;

    std::vector<chain::ranking_entry> evaluated;
    std::vector<chain::ranking_entry> unevaluated;
    for (const auto *tx : ordered) {
        if (!validate_model_tx(state, *tx, task).ok)
            continue;
        if (!seen_models.insert(tx->model_digest).second)
            continue;
        std::optional<byte_vec> model;
        if (in_window)
            model = store.get(tx->model_digest);
        if (in_window && model.has_value() && test_set.has_value()) {
            double score = evaluate(*model, *test_set, task.tx.metric);
            evaluated.push_back({tx->model_digest, score, true});
        } else {
            unevaluated.push_back({tx->model_digest, 0.0, false});
        }
    }
    std::stable_sort(evaluated.begin(), evaluated.end(),
                     [&](const chain::ranking_entry &a, const chain::ranking_entry &b) {
                         if (a.score != b.score)
                             return score_before(a.score, b.score, task.tx.metric);
                         return false;
                     });
    out.entries = std::move(evaluated);
    out.entries.insert(out.entries.end(), unevaluated.begin(), unevaluated.end());
    return out;
}

std::vector<size_t> qualified_entries(const std::vector<chain::ranking_entry> &entries,
                                      chain::metric_kind metric) {
    std::vector<size_t> evaluated_idx;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].evaluated)
            evaluated_idx.push_back(i);
    if (evaluated_idx.empty())
        return {};
    if (evaluated_idx.size() <= 3)
        return evaluated_idx;
    std::vector<double> scores;
    for (size_t i : evaluated_idx)
        scores.push_back(entries[i].score);
    std::sort(scores.begin(), scores.end());
    size_t n = scores.size();
    // First quartile by rank; for loss metrics "above" means below the 75th.
    double q1 = higher_is_better(metric) ? scores[(n - 1) / 4]
                                         : scores[n - 1 - (n - 1) / 4];
    std::vector<size_t> out;
    for (size_t i : evaluated_idx) {
        double s = entries[i].score;
        if (higher_is_better(metric) ? s > q1 : s < q1)
            out.push_back(i);
    }
    return out;
}

namespace {

// Even split with the remainder handed to the lowest wallets, one unit each,
// so the plan conserves currency exactly.
void split_evenly(std::vector<transfer> &out, chain::currency total,
                  std::vector<digest32> wallets, chain::payment_purpose purpose,
                  const digest32 &ref) {
    if (total <= 0 || wallets.empty())
        return;
    std::sort(wallets.begin(), wallets.end());
    chain::currency base = total / chain::currency(wallets.size());
    chain::currency rem = total % chain::currency(wallets.size());
    for (size_t i = 0; i < wallets.size(); ++i) {
        chain::currency amount = base + (chain::currency(i) < rem ? 1 : 0);
        if (amount > 0)
            out.push_back({wallets[i], amount, purpose, ref});
    }
}

} // namespace

settlement_plan block_rewarding(const chain::ledger_state &state, const chain::task_state &task,
                                const std::vector<chain::ranking_entry> &ranking,
                                bool requester_default,
                                const std::vector<digest32> &honest_validator_wallets) {
    if (honest_validator_wallets.empty())
        throw std::invalid_argument("block_rewarding: no honest validators");
    settlement_plan plan;
    const digest32 &task_ref = task.tx.id;

    // Pool wallet and membership per model digest, earliest tx per mID.
    struct pool_info {
        digest32 wallet;
        std::vector<digest32> member_wallets;
        chain::currency deposit = 0;
        chain::currency fee = 0; // xi_2 declared by the earliest submission
        uint64_t timestamp = 0;
    };
    std::map<digest32, pool_info> pools; // by model digest
    chain::currency total_deposits = 0;
    for (const auto &sub : task.submissions) {
        auto dep = state.deposits.find(sub.id);
        chain::currency amount = dep == state.deposits.end() ? 0 : dep->second;
        total_deposits += amount;
        auto [it, fresh] = pools.try_emplace(sub.model_digest);
        if (fresh || sub.timestamp_ms < it->second.timestamp) {
            it->second.wallet = sub.pool_wallet();
            it->second.timestamp = sub.timestamp_ms;
            it->second.fee = sub.participation_fee;
            it->second.member_wallets.clear();
            for (const auto &pk : sub.pool_key.keys)
                it->second.member_wallets.push_back(crypto::wallet_address(pk));
        }
        it->second.deposit += amount;
    }

    chain::currency escrowed = task.tx.reward + task.tx.hosting_fee + total_deposits;

    if (requester_default) {
        split_evenly(plan.transfers, escrowed, honest_validator_wallets,
                     chain::payment_purpose::forfeiture, task_ref);
        for (const auto &w : honest_validator_wallets)
            plan.credit_deltas.push_back({w, state.params.credit_validator});
        return plan;
    }

    std::vector<size_t> qualified = qualified_entries(ranking, task.tx.metric);
    std::set<size_t> qualified_set(qualified.begin(), qualified.end());

    // Winner: best evaluated entry; the ranking is already sorted.
    const chain::ranking_entry *winner = nullptr;
    for (const auto &e : ranking) {
        if (e.evaluated) {
            winner = &e;
            break;
        }
    }

    chain::currency refunded = 0;
    for (size_t idx : qualified) {
        auto pit = pools.find(ranking[idx].model_id);
        if (pit == pools.end())
            continue;
        // Refund one participation fee per qualified pool; duplicate
        // submissions of the same model forfeit their extra deposits.
        chain::currency refund = std::min(pit->second.deposit, pit->second.fee);
        if (refund > 0) {
            plan.transfers.push_back(
                {pit->second.wallet, refund, chain::payment_purpose::refund, task_ref});
            refunded += refund;
        }
        plan.qualified_pools.push_back(pit->second.wallet);
    }

    if (winner != nullptr) {
        auto pit = pools.find(winner->model_id);
        if (pit != pools.end()) {
            plan.transfers.push_back(
                {pit->second.wallet, task.tx.reward, chain::payment_purpose::reward, task_ref});
            plan.winner_pool = pit->second.wallet;
            plan.has_winner = true;
        }
    }
    if (!plan.has_winner && task.tx.reward > 0) {
        // Test released but nothing could be scored: the reward goes back to
        // the requester, the fees still pay the validators.
        plan.transfers.push_back({crypto::wallet_address(task.tx.requester_pk), task.tx.reward,
                                  chain::payment_purpose::refund, task_ref});
    }

    chain::currency validator_pot = task.tx.hosting_fee + (total_deposits - refunded);
    split_evenly(plan.transfers, validator_pot, honest_validator_wallets,
                 chain::payment_purpose::fee_split, task_ref);

    for (const auto &w : honest_validator_wallets)
        plan.credit_deltas.push_back({w, state.params.credit_validator});
    if (plan.has_winner) {
        auto pit = pools.find(winner->model_id);
        for (const auto &w : pit->second.member_wallets)
            plan.credit_deltas.push_back({w, state.params.credit_winner});
    }
    for (size_t idx : qualified) {
        if (winner != nullptr && ranking[idx].model_id == winner->model_id)
            continue;
        auto pit = pools.find(ranking[idx].model_id);
        if (pit == pools.end())
            continue;
        for (const auto &w : pit->second.member_wallets)
            plan.credit_deltas.push_back({w, state.params.credit_qualified});
    }
    return plan;
}

release_outcome release_test_set(const chain::task_state &task, const byte_vec &bytes,
                                 uint64_t height, content_store &store) {
    if (height < task.tx.release_height)
        return {false, "before release height", {}};
    digest32 key = sha256(bytes);
    if (key != task.tx.test_digest)
        return {false, "digest mismatch", {}};
    store.put(bytes);
    return {true, "", key};
}

} // namespace pofl::contracts
