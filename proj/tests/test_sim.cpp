#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pofl/sim.hpp"

#include <filesystem>
#include <fstream>

using namespace pofl;
using namespace pofl::sim;

namespace {

scenario_config small_scenario(uint64_t seed = 1) {
    scenario_config cfg;
    cfg.seed = seed;
    cfg.num_nodes = 8;
    cfg.num_requesters = 2;
    cfg.vote_target = 8; // full committee keeps tiny runs deterministic
    cfg.proposer_target = 3;
    cfg.params.min_train_period = 4;
    cfg.params.test_duration = 3;
    cfg.num_tasks = 2;
    cfg.task_interval = 5;
    cfg.max_heights = 24;
    cfg.task_reward = 100;
    cfg.hosting_fee = 10;
    cfg.participation_fee = 5;
    cfg.game.train_time = 100.0;
    return cfg;
}

std::string slurp(const std::string &path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("a small scenario publishes, mines, ranks and settles") {
    auto r = run_scenario(small_scenario());
    CHECK(r.committed_heights > 0);
    CHECK_FALSE(r.fork_detected);
    REQUIRE_FALSE(r.metrics.tasks.empty());
    int settled = 0;
    for (const auto &row : r.metrics.tasks) {
        if (!row.forfeited) {
            ++settled;
            CHECK(row.best_score > 0.0);
            CHECK_FALSE(row.winner_pool.empty());
        }
    }
    CHECK(settled == 2);
    CHECK(r.final_state.total_currency() > 0);

    SUBCASE("the chain dump revalidates from genesis") {
        auto blocks = chain::parse_chain_dump(r.chain_dump);
        REQUIRE(blocks.size() == r.committed_heights + 1);
        auto report = verify_chain(r.genesis, blocks);
        CHECK(report.ok);
        CHECK(report.heights == r.committed_heights);
    }
    SUBCASE("per-height rows match the committed height") {
        CHECK(r.metrics.heights.size() == r.committed_heights);
        for (const auto &row : r.metrics.heights)
            CHECK(row.latency_s > 0.0);
    }
}

TEST_CASE("replaying the same seed is byte-identical") {
    auto a = run_scenario(small_scenario(7));
    auto b = run_scenario(small_scenario(7));
    CHECK(a.chain_dump == b.chain_dump);
    CHECK(a.metrics.heights.size() == b.metrics.heights.size());

    namespace fs = std::filesystem;
    std::string da = (fs::temp_directory_path() / "pofl-test-emit-a").string();
    std::string db = (fs::temp_directory_path() / "pofl-test-emit-b").string();
    auto fa = emit_metrics(a.metrics, da, "csv");
    auto fb = emit_metrics(b.metrics, db, "csv");
    REQUIRE(fa.size() == fb.size());
    for (size_t i = 0; i < fa.size(); ++i)
        CHECK(slurp(fa[i]) == slurp(fb[i]));

    SUBCASE("a different seed diverges") {
        auto c = run_scenario(small_scenario(8));
        CHECK(a.chain_dump != c.chain_dump);
    }
    SUBCASE("re-emitting is idempotent") {
        auto fa2 = emit_metrics(a.metrics, da, "csv");
        for (size_t i = 0; i < fa.size(); ++i)
            CHECK(slurp(fa[i]) == slurp(fa2[i]));
    }
}

TEST_CASE("zero tasks and no fallback build no blocks") {
    auto cfg = small_scenario();
    cfg.num_tasks = 0;
    auto r = run_scenario(cfg);
    CHECK(r.committed_heights == 0);
    CHECK(r.metrics.heights.empty());
}

TEST_CASE("the proof-of-work fallback produces heartbeat blocks") {
    auto cfg = small_scenario();
    cfg.num_tasks = 0;
    cfg.pow_fallback = true;
    cfg.pow_difficulty_bits = 6;
    cfg.max_heights = 4;
    auto r = run_scenario(cfg);
    CHECK(r.committed_heights == 4);
    auto blocks = chain::parse_chain_dump(r.chain_dump);
    for (size_t i = 1; i < blocks.size(); ++i) {
        digest32 h = chain::block_hash(blocks[i]);
        CHECK(h[0] < (1 << 2)); // at least six leading zero bits
        CHECK(blocks[i].body.empty());
    }
}

TEST_CASE("curator selection respects the latency threshold") {
    std::vector<double> lat{0.1, 0.5, 0.9};
    rng gen(3);
    SUBCASE("single qualifier always wins") {
        for (int i = 0; i < 50; ++i)
            CHECK(curator_select({0, 1, 2}, lat, 0.3, gen) == 0);
    }
    SUBCASE("no qualifier falls back to the whole pool") {
        std::map<int, int> seen;
        for (int i = 0; i < 3000; ++i)
            ++seen[curator_select({0, 1, 2}, lat, 0.05, gen)];
        CHECK(seen.size() == 3);
        for (const auto &[id, count] : seen)
            CHECK(count > 800);
    }
    SUBCASE("uniform over the qualifying set") {
        std::map<int, int> seen;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i)
            ++seen[curator_select({0, 1, 2}, lat, 0.6, gen)];
        CHECK(seen.size() == 2);
        // expect about half each, four sigma tolerance
        double se = std::sqrt(0.25 * draws);
        CHECK(std::abs(seen[0] - draws / 2) < 4 * se);
        CHECK(seen[1] > 0);
        CHECK(seen.count(2) == 0);
    }
}

TEST_CASE("metrics emission writes versioned headers even when empty") {
    metrics_log empty;
    namespace fs = std::filesystem;
    std::string dir = (fs::temp_directory_path() / "pofl-test-empty-emit").string();
    auto files = emit_metrics(empty, dir, "csv");
    REQUIRE(files.size() == 4);
    for (const auto &f : files) {
        std::string text = slurp(f);
        CHECK(text.find("# schema=") == 0);
        CHECK(std::count(text.begin(), text.end(), '\n') == 2); // header + columns
    }
    auto jl = emit_metrics(empty, dir, "json-lines");
    REQUIRE(jl.size() == 4);
}

TEST_CASE("byzantine vote flooding cannot fork the small network") {
    auto cfg = small_scenario(11);
    cfg.num_nodes = 12;
    cfg.vote_target = 12;
    cfg.byz_credit_fraction = 0.25; // three of twelve
    cfg.adversary = "sybil_vote_flood";
    auto r = run_scenario(cfg);
    CHECK_FALSE(r.fork_detected);
    CHECK(r.committed_heights > 0);
    int settled = 0;
    for (const auto &row : r.metrics.tasks)
        if (!row.forfeited)
            ++settled;
    CHECK(settled == 2);
}

TEST_CASE("spoofed late model never enters a ranking") {
    auto cfg = small_scenario(13);
    cfg.adversary = "spoof_late_model";
    auto r = run_scenario(cfg);
    CHECK_FALSE(r.attacks.spoof_tx_in_any_ranking);
    CHECK_FALSE(r.attacks.spoof_pool_won);
    CHECK_FALSE(r.attacks.spoof_pool_qualified);
    int settled = 0;
    for (const auto &row : r.metrics.tasks)
        if (!row.forfeited)
            ++settled;
    CHECK(settled == 2); // honest settlement still happens
}

TEST_CASE("sybil duplicate submissions are deduplicated and fees forfeited") {
    auto cfg = small_scenario(17);
    cfg.adversary = "sybil_duplicate_model";
    auto r = run_scenario(cfg);
    CHECK(r.attacks.sybil_max_entries_per_model <= 1);
    CHECK(r.attacks.sybil_forfeited >= 4 * cfg.participation_fee);
}

TEST_CASE("withheld test set forfeits the requester escrow at the window end") {
    auto cfg = small_scenario(19);
    cfg.num_tasks = 1;
    cfg.adversary = "withhold_test_set";
    auto r = run_scenario(cfg);
    REQUIRE(r.attacks.withhold_forfeit_seen);
    // release at 1 + 4 + slack 3; testing window of 3; forfeiture right after
    CHECK(r.attacks.withhold_forfeit_height == 1 + 4 + 3 + 3 + 1);
    REQUIRE_FALSE(r.metrics.tasks.empty());
    CHECK(r.metrics.tasks[0].forfeited);
}

TEST_CASE("verify_chain flags tampered dumps") {
    auto r = run_scenario(small_scenario(23));
    auto blocks = chain::parse_chain_dump(r.chain_dump);
    REQUIRE(blocks.size() > 3);

    SUBCASE("balance tampering breaks the plan or linkage") {
        auto bad = blocks;
        // strip a transaction out of a non-empty block
        for (auto &b : bad) {
            if (!b.body.empty()) {
                b.body.pop_back();
                break;
            }
        }
        auto report = verify_chain(r.genesis, bad);
        CHECK_FALSE(report.ok);
    }
    SUBCASE("script removal is caught") {
        auto bad = blocks;
        bad[2].meta.script.votes.clear();
        auto report = verify_chain(r.genesis, bad);
        CHECK_FALSE(report.ok);
    }
    SUBCASE("wrong genesis is caught") {
        auto genesis = r.genesis;
        genesis.accounts[0].balance += 1;
        auto report = verify_chain(genesis, blocks);
        CHECK_FALSE(report.ok);
    }
}

TEST_CASE("scenario config round-trips through json") {
    auto cfg = small_scenario(29);
    cfg.adversary = "spoof_late_model";
    cfg.background_payments_per_height = 3;
    auto text = scenario_to_json(cfg);
    auto back = scenario_from_json(text);
    CHECK(back.seed == cfg.seed);
    CHECK(back.num_nodes == cfg.num_nodes);
    CHECK(back.adversary == cfg.adversary);
    CHECK(back.vote_target == cfg.vote_target);
    CHECK(back.params.min_train_period == cfg.params.min_train_period);
    CHECK(back.background_payments_per_height == cfg.background_payments_per_height);

    auto g = run_scenario(cfg).genesis;
    auto gtext = genesis_to_json(g);
    auto gback = genesis_from_json(gtext);
    CHECK(gback.seed == g.seed);
    CHECK(gback.accounts.size() == g.accounts.size());
    CHECK(gback.accounts[0].pk == g.accounts[0].pk);
    CHECK(gback.params.vote_target == g.params.vote_target);
}
