#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pofl/fl.hpp"

#include <cmath>
#include <numeric>

using namespace pofl;
using namespace pofl::fl;

namespace {

miner_dataset tiny_dataset(int classes, int feature_dim, int samples, uint64_t seed) {
    rng gen(seed);
    return make_test_set(classes, samples, feature_dim, 3.0, gen);
}

std::vector<double> fd_gradient(const model_params &m, const miner_dataset &data, double step) {
    std::vector<double> g(m.values.size());
    model_params probe = m;
    for (size_t i = 0; i < m.values.size(); ++i) {
        probe.values[i] = m.values[i] + step;
        double up = loss(probe, data);
        probe.values[i] = m.values[i] - step;
        double down = loss(probe, data);
        probe.values[i] = m.values[i];
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

double rel_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, ref = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        ref += a[i] * a[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

local_update update_with_norm(double norm, size_t dim = 4) {
    local_update u;
    u.delta.assign(dim, 0.0);
    u.delta[0] = norm;
    return u;
}

} // namespace

TEST_CASE("partition covers the drawn classes and is deterministic") {
    rng a(5), b(5);
    auto pa = make_partition(8, 10, 1, 10, 600, 6, 3.0, a);
    auto pb = make_partition(8, 10, 1, 10, 600, 6, 3.0, b);
    REQUIRE(pa.size() == 8);
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].features == pb[i].features);
        CHECK(pa[i].labels == pb[i].labels);
        CHECK(pa[i].size() == 600);
        auto h = pa[i].class_histogram();
        double sum = std::accumulate(h.begin(), h.end(), 0.0);
        CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("IID limit: full-class miners have zero average EMD") {
    rng gen(7);
    auto pool = make_partition(12, 10, 10, 10, 600, 6, 3.0, gen);
    CHECK(avg_emd(pool) < 1e-12);
}

TEST_CASE("one-class miners against a uniform reference hit 2(Y-1)/Y") {
    rng gen(9);
    auto pool = make_partition(6, 10, 1, 1, 600, 6, 3.0, gen);
    std::vector<double> uniform(10, 0.1);
    for (const auto &d : pool) {
        auto h = d.class_histogram();
        CHECK(emd(h, uniform) == doctest::Approx(1.8).epsilon(1e-12));
    }
}

TEST_CASE("partition rejects impossible class coverage") {
    rng gen(1);
    CHECK_THROWS_AS(make_partition(3, 10, 10, 10, 9, 6, 3.0, gen), std::invalid_argument);
    CHECK_THROWS_AS(make_partition(3, 1, 1, 1, 10, 6, 3.0, gen), std::invalid_argument);
}

TEST_CASE("frozen optimizer produces a zero update") {
    auto data = tiny_dataset(4, 5, 40, 11);
    model_geometry geom{model_kind::linear_softmax, 5, 4, 0};
    rng gen(3);
    auto u = compute_local_update(zero_model(geom), data, 0.0, 10, 3, gen);
    for (double v : u.delta)
        CHECK(v == 0.0);
}

TEST_CASE("one full-batch step equals minus eta times the analytic gradient") {
    auto data = tiny_dataset(3, 4, 3, 13);
    model_geometry geom{model_kind::linear_softmax, 4, 3, 0};
    model_params start = zero_model(geom);
    rng init(17);
    for (auto &v : start.values)
        v = init.normal(0.0, 0.1);
    double eta = 0.2;
    rng gen(3);
    auto u = compute_local_update(start, data, eta, int(data.size()), 1, gen);
    auto g = gradient(start, data);
    REQUIRE(u.delta.size() == g.size());
    for (size_t i = 0; i < g.size(); ++i)
        CHECK(u.delta[i] == doctest::Approx(-eta * g[i]).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
    auto data = tiny_dataset(5, 6, 30, 19);
    for (model_kind kind : {model_kind::linear_softmax, model_kind::mlp_1hidden}) {
        model_geometry geom{kind, 6, 5, kind == model_kind::mlp_1hidden ? 8 : 0};
        rng gen(23);
        for (int trial = 0; trial < 10; ++trial) {
            model_params m = zero_model(geom);
            for (auto &v : m.values)
                v = gen.normal(0.0, 0.5);
            auto ga = gradient(m, data);
            auto gf = fd_gradient(m, data, 1e-5);
            CHECK(rel_error(ga, gf) < 1e-4);
        }
    }
}

TEST_CASE("empty dataset and oversized batch are rejected") {
    model_geometry geom{model_kind::linear_softmax, 4, 3, 0};
    miner_dataset empty;
    empty.feature_dim = 4;
    empty.classes = 3;
    rng gen(1);
    CHECK_THROWS_AS(compute_local_update(zero_model(geom), empty, 0.1, 1, 1, gen),
                    std::invalid_argument);
    auto data = tiny_dataset(3, 4, 5, 29);
    CHECK_THROWS_AS(compute_local_update(zero_model(geom), data, 0.1, 6, 1, gen),
                    std::invalid_argument);
}

TEST_CASE("median clip norm") {
    CHECK(median_clip_norm({update_with_norm(1), update_with_norm(2), update_with_norm(3)}) ==
          doctest::Approx(2.0));
    CHECK(median_clip_norm({update_with_norm(1), update_with_norm(3)}) == doctest::Approx(2.0));
    CHECK(median_clip_norm({update_with_norm(0), update_with_norm(0)}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(median_clip_norm({}), std::invalid_argument);
}

TEST_CASE("clip_update scales into the norm ball") {
    std::vector<double> small{0.3, 0.4};
    auto c1 = clip_update(small, 1.0);
    CHECK(c1 == small);

    std::vector<double> big{6.0, 8.0}; // norm 10
    auto c2 = clip_update(big, 5.0);
    CHECK(l2_norm(c2) == doctest::Approx(5.0));
    CHECK(c2[0] / c2[1] == doctest::Approx(big[0] / big[1]));

    auto c3 = clip_update(big, 0.0);
    for (double v : c3)
        CHECK(v == 0.0);

    SUBCASE("clipping property on random vectors") {
        rng gen(31);
        for (int i = 0; i < 2000; ++i) {
            std::vector<double> v(8);
            for (auto &x : v)
                x = gen.normal(0.0, 3.0);
            double a = gen.uniform(0.0, 4.0);
            CHECK(l2_norm(clip_update(v, a)) <= a + 1e-12);
        }
    }
}

TEST_CASE("aggregate_global noiseless behaviour") {
    model_geometry geom{model_kind::linear_softmax, 2, 2, 0};
    model_params prev = zero_model(geom);
    for (size_t i = 0; i < prev.values.size(); ++i)
        prev.values[i] = double(i);
    rng gen(1);
    std::vector<double> u{1.0, -1.0, 0.5, 0.25, 0.0, 2.0};
    auto one = aggregate_global(prev, {u}, 0.0, 1.0, gen);
    for (size_t i = 0; i < u.size(); ++i)
        CHECK(one.values[i] == doctest::Approx(prev.values[i] + u[i]));

    std::vector<double> nu(u.size());
    for (size_t i = 0; i < u.size(); ++i)
        nu[i] = -u[i];
    auto cancel = aggregate_global(prev, {u, nu}, 0.0, 1.0, gen);
    for (size_t i = 0; i < u.size(); ++i)
        CHECK(cancel.values[i] == doctest::Approx(prev.values[i]));

    std::vector<double> short_u{1.0};
    CHECK_THROWS_AS(aggregate_global(prev, {short_u}, 0.0, 1.0, gen), std::invalid_argument);
}

TEST_CASE("aggregate_global noise calibration by Monte Carlo") {
    const int dim = 1000;
    const int repeats = 100;
    const int count = 4;
    model_geometry geom{model_kind::linear_softmax, 99, 10, 0}; // param_count = 1000
    REQUIRE(geom.param_count() == dim);
    model_params prev = zero_model(geom);
    std::vector<std::vector<double>> zeros(count, std::vector<double>(dim, 0.0));
    rng gen(41);
    double sum = 0.0, sumsq = 0.0;
    size_t n = 0;
    for (int r = 0; r < repeats; ++r) {
        auto out = aggregate_global(prev, zeros, 1.0, 1.0, gen);
        for (double v : out.values) {
            sum += v;
            sumsq += v * v;
            ++n;
        }
    }
    double mean = sum / double(n);
    double stddev = std::sqrt(sumsq / double(n) - mean * mean);
    // per-coordinate noise std should be sigma*A/count = 1/4
    CHECK(stddev >= 0.99 / count);
    CHECK(stddev <= 1.01 / count);
}

TEST_CASE("sensitivity probe stays under the theorem bound") {
    std::vector<std::vector<double>> zeros(3, std::vector<double>(4, 0.0));
    std::vector<double> zero(4, 0.0);
    auto r0 = sensitivity_probe(zeros, zero, 1.0);
    CHECK(r0.observed == doctest::Approx(0.0));
    CHECK(r0.observed <= r0.bound);

    // pool = {0}, extra of norm A: gap = A/2, bound = 2A
    std::vector<std::vector<double>> single{std::vector<double>(4, 0.0)};
    std::vector<double> extra{1.0, 0.0, 0.0, 0.0};
    auto r1 = sensitivity_probe(single, extra, 1.0);
    CHECK(r1.observed == doctest::Approx(0.5));
    CHECK(r1.bound == doctest::Approx(2.0));
    CHECK(r1.observed <= r1.bound);

    SUBCASE("randomized sweep never exceeds 2A over pool size") {
        rng gen(43);
        const double A = 1.5;
        for (int trial = 0; trial < 2000; ++trial) {
            size_t size = 2 + gen.uniform_index(19);
            std::vector<std::vector<double>> pool;
            for (size_t i = 0; i < size; ++i) {
                std::vector<double> v(6);
                for (auto &x : v)
                    x = gen.normal();
                pool.push_back(clip_update(v, gen.uniform(0.0, A)));
            }
            std::vector<double> extra2(6);
            for (auto &x : extra2)
                x = gen.normal();
            extra2 = clip_update(extra2, A);
            auto r = sensitivity_probe(pool, extra2, A);
            CHECK(r.observed <= r.bound + 1e-12);
        }
    }
}

TEST_CASE("min_sigma closed form and validity predicate") {
    auto r = min_sigma(1.0, 1e-5, 0.5, 100);
    CHECK(r.sigma_min == doctest::Approx(33.93).epsilon(1e-3));

    // threshold 2*0.35^2*ln(1/0.35)*200 = 51.44...
    double thr = 2.0 * 0.35 * 0.35 * std::log(1.0 / 0.35) * 200.0;
    CHECK(thr == doctest::Approx(51.44).epsilon(1e-3));
    CHECK(min_sigma(thr - 0.01, 1e-6, 0.35, 200).epsilon_in_range);
    CHECK_FALSE(min_sigma(thr + 0.01, 1e-6, 0.35, 200).epsilon_in_range);

    SUBCASE("smaller delta strictly raises the bound") {
        CHECK(min_sigma(1.0, 1e-6, 0.5, 100).sigma_min > min_sigma(1.0, 1e-3, 0.5, 100).sigma_min);
    }
    SUBCASE("monotone in eps, rounds and lambda") {
        CHECK(min_sigma(2.0, 1e-5, 0.5, 100).sigma_min < min_sigma(1.0, 1e-5, 0.5, 100).sigma_min);
        CHECK(min_sigma(1.0, 1e-5, 0.5, 200).sigma_min > min_sigma(1.0, 1e-5, 0.5, 100).sigma_min);
        CHECK(min_sigma(1.0, 1e-5, 0.7, 100).sigma_min > min_sigma(1.0, 1e-5, 0.5, 100).sigma_min);
    }
    SUBCASE("out-of-range parameters throw") {
        CHECK_THROWS_AS(min_sigma(0.0, 1e-5, 0.5, 100), std::invalid_argument);
        CHECK_THROWS_AS(min_sigma(1.0, 1.5, 0.5, 100), std::invalid_argument);
        CHECK_THROWS_AS(min_sigma(1.0, 1e-5, 0.0, 100), std::invalid_argument);
        CHECK_THROWS_AS(min_sigma(1.0, 1e-5, 0.5, 0), std::invalid_argument);
    }
}

TEST_CASE("emd values") {
    std::vector<double> uniform(10, 0.1);
    CHECK(emd(uniform, uniform) == doctest::Approx(0.0));
    std::vector<double> onehot(10, 0.0);
    onehot[0] = 1.0;
    CHECK(emd(onehot, uniform) == doctest::Approx(1.8));
    std::vector<double> bad(10, 0.2);
    CHECK_THROWS_AS(emd(bad, uniform), std::invalid_argument);

    SUBCASE("pool average weights by data size") {
        // two equal-size miners with EMD 0 and 1.8 against their joint
        // distribution is exercised through avg_emd on a crafted pool
        miner_dataset a, b;
        a.feature_dim = b.feature_dim = 1;
        a.classes = b.classes = 2;
        // miner a: 5 of each class; miner b: 10 of class 0
        for (int i = 0; i < 5; ++i) {
            a.features.push_back(0.0);
            a.labels.push_back(0);
            a.features.push_back(0.0);
            a.labels.push_back(1);
        }
        for (int i = 0; i < 10; ++i) {
            b.features.push_back(0.0);
            b.labels.push_back(0);
        }
        // global = {0.75, 0.25}; Xi_a = 0.5, Xi_b = 0.5; weights equal
        CHECK(avg_emd({a, b}) == doctest::Approx(0.5));
    }
}

TEST_CASE("evaluate: chance level, perfect fit and error paths") {
    auto test = tiny_dataset(10, 6, 500, 47);
    model_geometry geom{model_kind::linear_softmax, 6, 10, 0};
    model_params constant = zero_model(geom);
    CHECK(evaluate(constant, test, chain::metric_kind::accuracy) == doctest::Approx(0.1));

    SUBCASE("overfit on a separable fixture reaches accuracy 1") {
        rng gen(51);
        auto small = make_test_set(4, 40, 5, 6.0, gen);
        model_geometry g2{model_kind::linear_softmax, 5, 4, 0};
        model_params m = zero_model(g2);
        for (int it = 0; it < 300; ++it) {
            auto grad = gradient(m, small);
            for (size_t i = 0; i < m.values.size(); ++i)
                m.values[i] -= 0.5 * grad[i];
        }
        CHECK(evaluate(m, small, chain::metric_kind::accuracy) == doctest::Approx(1.0));
        CHECK(evaluate(m, small, chain::metric_kind::f1) == doctest::Approx(1.0));
    }
    SUBCASE("empty test set throws") {
        miner_dataset empty;
        empty.feature_dim = 6;
        empty.classes = 10;
        CHECK_THROWS_AS(evaluate(constant, empty, chain::metric_kind::accuracy),
                        std::invalid_argument);
    }
    SUBCASE("dimension mismatch throws") {
        auto other = tiny_dataset(10, 5, 20, 53);
        CHECK_THROWS_AS(evaluate(constant, other, chain::metric_kind::accuracy),
                        std::invalid_argument);
    }
}

TEST_CASE("training loop learns the synthetic task") {
    rng gen(61);
    auto miners = make_partition(10, 5, 2, 5, 120, 6, 3.0, gen);
    auto test = make_test_set(5, 400, 6, 3.0, gen);
    model_geometry geom{model_kind::linear_softmax, 6, 5, 0};
    train_config cfg;
    cfg.rounds = 40;
    cfg.eta = 0.1;
    cfg.batch_size = 30;
    cfg.sample_ratio = 0.5;
    cfg.sigma = 0.0;
    cfg.seed = 7;
    auto result = train_pool(geom, miners, test, cfg);
    CHECK(result.final_accuracy > 0.7);

    SUBCASE("same seed replays identically") {
        auto again = train_pool(geom, miners, test, cfg);
        CHECK(again.model.values == result.model.values);
    }
}

TEST_CASE("model dump round trip") {
    model_geometry geom{model_kind::mlp_1hidden, 6, 5, 8};
    model_params m = zero_model(geom);
    rng gen(71);
    for (auto &v : m.values)
        v = gen.normal();
    byte_vec raw = serialize_model(m);
    auto back = deserialize_model(std::span<const uint8_t>(raw.data(), raw.size()));
    CHECK(back.values == m.values);
    CHECK(back.geom.kind == m.geom.kind);
    CHECK_THROWS_AS(deserialize_model(std::span<const uint8_t>(raw.data(), raw.size() - 3)),
                    ser::decode_error);
}

TEST_CASE("dataset dump round trip") {
    auto d = tiny_dataset(4, 5, 30, 81);
    byte_vec raw = serialize_dataset(d);
    auto back = deserialize_dataset(std::span<const uint8_t>(raw.data(), raw.size()));
    CHECK(back.features == d.features);
    CHECK(back.labels == d.labels);
    CHECK(back.feature_dim == d.feature_dim);
    CHECK_THROWS_AS(deserialize_dataset(std::span<const uint8_t>(raw.data(), raw.size() - 2)),
                    ser::decode_error);
}
