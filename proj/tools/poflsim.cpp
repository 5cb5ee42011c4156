#include "pofl/fl.hpp"
#include "pofl/sim.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace pofl;
using nlohmann::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_invariant = 2;
constexpr int exit_config = 3;

std::string read_file(const std::string &path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string &path, const std::string &text) {
    std::ofstream f(path, std::ios::trunc);
    f << text;
}

struct game_instance {
    std::vector<game::miner_profile> miners;
    game::game_params params;
};

game_instance load_instance(const std::string &path) {
    json j = json::parse(read_file(path));
    game_instance inst;
    for (const json &m : j.at("miners")) {
        game::miner_profile p;
        p.id = m.at("id");
        p.samples = m.at("samples");
        p.emd = m.at("emd");
        p.latency = m.at("latency");
        p.local_epochs = m.value("local_epochs", 1000.0);
        inst.miners.push_back(p);
    }
    if (j.contains("params")) {
        const json &p = j.at("params");
        inst.params.gamma_s = p.value("gamma_s", inst.params.gamma_s);
        inst.params.gamma_d = p.value("gamma_d", inst.params.gamma_d);
        inst.params.lambda_c = p.value("lambda_c", inst.params.lambda_c);
        inst.params.beta = p.value("beta", inst.params.beta);
        inst.params.train_time = p.value("train_time", inst.params.train_time);
    }
    return inst;
}

void print_partition(const game::partition &p) {
    for (size_t i = 0; i < p.pools.size(); ++i) {
        std::cout << "pool " << i << ":";
        for (int m : p.pools[i])
            std::cout << " " << m;
        std::cout << "\n";
    }
}

int cmd_run(const std::string &config_path, uint64_t seed_override, bool seed_set,
            const std::string &out_dir, const std::string &format) {
    sim::scenario_config cfg;
    try {
        if (!config_path.empty())
            cfg = sim::scenario_from_json(read_file(config_path));
        if (seed_set)
            cfg.seed = seed_override;
        if (const char *env = std::getenv("POFLSIM_SEED"))
            cfg.seed = std::strtoull(env, nullptr, 10);
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    }
    try {
        sim::run_result r = sim::run_scenario(cfg);
        std::filesystem::create_directories(out_dir);
        auto files = sim::emit_metrics(r.metrics, out_dir, format);
        write_file(out_dir + "/chain.dump", r.chain_dump);
        write_file(out_dir + "/genesis.json", sim::genesis_to_json(r.genesis));
        std::cout << "committed " << r.committed_heights << " blocks, "
                  << r.metrics.tasks.size() << " settlements, "
                  << r.metrics.empty_blocks << " empty blocks\n";
        for (const auto &f : files)
            std::cout << "wrote " << f << "\n";
        std::cout << "wrote " << out_dir << "/chain.dump\n";
        std::cout << "wrote " << out_dir << "/genesis.json\n";
        return exit_ok;
    } catch (const sim::sim_invariant_error &e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return exit_invariant;
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    }
}

int cmd_game(const std::string &instance_path, const std::string &out_dir) {
    game_instance inst;
    try {
        inst = load_instance(instance_path);
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    }
    auto res = game::form_pools(inst.miners, game::partition::singletons(int(inst.miners.size())),
                                inst.params);
    print_partition(res.final);
    std::cout << "welfare " << game::social_welfare(res.final, inst.miners, inst.params) << "\n";
    std::cout << "iterations " << res.iterations << "\n";
    std::cout << "nash_stable " << (game::is_nash_stable(res.final, inst.miners, inst.params) ? 1 : 0)
              << "\n";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream f(out_dir + "/game.csv", std::ios::trunc);
        f << "# schema=game.v1\n";
        f << "h,num_pools,num_switches,welfare\n";
        for (const auto &row : res.trace)
            f << row.iteration << "," << row.num_pools << "," << row.num_switches << ","
              << row.welfare << "\n";
        std::cout << "wrote " << out_dir << "/game.csv\n";
    }
    return exit_ok;
}

int cmd_privacy(double eps, double delta, double lambda, int rounds) {
    try {
        auto r = fl::min_sigma(eps, delta, lambda, rounds);
        std::cout << "sigma_min " << r.sigma_min << "\n";
        std::cout << "epsilon_in_range " << (r.epsilon_in_range ? 1 : 0) << "\n";
        return exit_ok;
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    }
}

int cmd_oracle(const std::string &instance_path) {
    game_instance inst;
    try {
        inst = load_instance(instance_path);
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    }
    try {
        auto best = game::exhaustive_optimal(inst.miners, inst.params);
        print_partition(best);
        std::cout << "welfare " << game::social_welfare(best, inst.miners, inst.params) << "\n";
        return exit_ok;
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    }
}

int cmd_verify(const std::string &genesis_path, const std::string &chain_path) {
    chain::genesis_config genesis;
    std::vector<chain::block> blocks;
    try {
        genesis = sim::genesis_from_json(read_file(genesis_path));
        blocks = chain::parse_chain_dump(read_file(chain_path));
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    }
    auto report = sim::verify_chain(genesis, blocks);
    if (!report.ok) {
        std::cerr << "verification failed: " << report.reason << "\n";
        return exit_invariant;
    }
    std::cout << "ok: " << report.heights << " blocks, total currency "
              << report.total_currency << "\n";
    return exit_ok;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"proof-of-federated-learning consensus simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", format = "csv";
    uint64_t seed = 0;
    bool seed_set = false;

    auto *run = app.add_subcommand("run", "run a scenario and emit metrics");
    run->add_option("--config", config_path, "scenario json");
    auto *seed_opt = run->add_option("--seed", seed, "seed override");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--format", format, "csv or json-lines")
        ->check(CLI::IsMember({"csv", "json-lines"}));

    std::string instance_path, game_out;
    auto *gamec = app.add_subcommand("game", "form pools for a miner instance file");
    gamec->add_option("--instance", instance_path, "instance json")->required();
    gamec->add_option("--out", game_out, "trace output directory");

    double eps = 1.0, delta = 1e-6, lambda = 0.35;
    int rounds = 200;
    auto *privacy = app.add_subcommand("privacy", "minimum noise multiplier for a privacy target");
    privacy->add_option("--eps", eps, "epsilon")->required();
    privacy->add_option("--delta", delta, "delta")->required();
    privacy->add_option("--lambda", lambda, "per-round sample ratio")->required();
    privacy->add_option("--rounds", rounds, "communication rounds")->required();

    std::string oracle_instance;
    auto *oracle = app.add_subcommand("oracle", "exhaustive optimal partition (N <= 12)");
    oracle->add_option("--instance", oracle_instance, "instance json")->required();

    std::string genesis_path, chain_path;
    auto *verify = app.add_subcommand("verify", "revalidate a chain dump from genesis");
    verify->add_option("--genesis", genesis_path, "genesis json")->required();
    verify->add_option("--chain", chain_path, "chain dump")->required();

    CLI11_PARSE(app, argc, argv);
    seed_set = seed_opt->count() > 0;

    if (run->parsed())
        return cmd_run(config_path, seed, seed_set, out_dir, format);
    if (gamec->parsed())
        return cmd_game(instance_path, game_out);
    if (privacy->parsed())
        return cmd_privacy(eps, delta, lambda, rounds);
    if (oracle->parsed())
        return cmd_oracle(oracle_instance);
    if (verify->parsed())
        return cmd_verify(genesis_path, chain_path);
    return exit_config;
}
