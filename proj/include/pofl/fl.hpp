#pragma once

#include "pofl/chain.hpp"
#include "pofl/rng.hpp"

namespace pofl::fl {

enum class model_kind : uint8_t { linear_softmax = 1, mlp_1hidden = 2 };

struct model_geometry {
    model_kind kind = model_kind::linear_softmax;
    int features = 0;
    int classes = 0;
    int hidden = 0; // mlp only

    int param_count() const {
        if (kind == model_kind::linear_softmax)
            return (features + 1) * classes;
        return (features + 1) * hidden + (hidden + 1) * classes;
    }
};

struct model_params {
    model_geometry geom;
    std::vector<double> values;
};

model_params zero_model(const model_geometry &geom);

struct local_update {
    std::vector<double> delta;
    int miner_id = 0;
    int round = 0;
};

struct miner_dataset {
    std::vector<double> features; // row-major, size * feature_dim
    std::vector<int> labels;      // values in [0, classes)
    int feature_dim = 0;
    int classes = 0;

    size_t size() const { return labels.size(); }
    std::vector<double> class_histogram() const;
};

// Synthetic non-IID partition: every miner draws z classes uniformly from
// [z_lo, z_hi] and samples Gaussian clusters for exactly those classes.
std::vector<miner_dataset> make_partition(int num_miners, int classes, int z_lo, int z_hi,
                                          int samples_per_miner, int feature_dim,
                                          double cluster_radius, rng &gen);

miner_dataset make_test_set(int classes, int samples, int feature_dim, double cluster_radius,
                            rng &gen);

double loss(const model_params &m, const miner_dataset &data, std::span<const size_t> index);
double loss(const model_params &m, const miner_dataset &data);

// Mean cross-entropy gradient over the indexed samples.
std::vector<double> gradient(const model_params &m, const miner_dataset &data,
                             std::span<const size_t> index);
std::vector<double> gradient(const model_params &m, const miner_dataset &data);

// Mini-batch SGD against the shared model; the delta is trained-minus-global.
local_update compute_local_update(const model_params &global, const miner_dataset &data,
                                  double eta, int batch_size, int epochs, rng &gen,
                                  int miner_id = 0, int round = 0);

double l2_norm(std::span<const double> v);

// Median of update norms, mean of the middle pair for even counts.
double median_clip_norm(const std::vector<local_update> &updates);

// delta / max(1, |delta|/A); A = 0 collapses to the zero vector.
std::vector<double> clip_update(std::span<const double> delta, double clip_norm);

// prev + (sum of updates + gaussian(0, sigma*A per coordinate)) / count.
model_params aggregate_global(const model_params &prev,
                              const std::vector<std::vector<double>> &clipped_updates,
                              double sigma, double clip_norm, rng &gen);

struct sensitivity_result {
    double observed = 0.0;
    double bound = 0.0; // 2A / |pool|
};

sensitivity_result sensitivity_probe(const std::vector<std::vector<double>> &pool_updates,
                                     std::span<const double> extra_update, double clip_norm);

struct sigma_bound {
    double sigma_min = 0.0;
    bool epsilon_in_range = false; // eps < 2*lambda^2*ln(1/lambda)*rounds
};

// Gaussian-noise calibration for (eps, delta)-user-level privacy over
// `rounds` aggregations at sample ratio lambda. Natural logarithms.
sigma_bound min_sigma(double eps, double delta, double lambda, int rounds);

double emd(std::span<const double> miner_hist, std::span<const double> global_hist);
double avg_emd(const std::vector<miner_dataset> &pool);

double evaluate(const model_params &m, const miner_dataset &test, chain::metric_kind metric);

struct train_config {
    int rounds = 100;
    double eta = 0.05;
    int batch_size = 50;
    int local_epochs = 1;
    double sample_ratio = 1.0; // lambda_s, fraction sampled per round
    double sigma = 0.0;
    uint64_t seed = 1;
    int eval_every = 0; // 0 = final evaluation only
};

struct train_result {
    model_params model;
    std::vector<std::pair<int, double>> accuracy_curve; // (round, accuracy)
    double final_accuracy = 0.0;
};

// The federated mining loop of one pool: per-round miner sampling, local
// SGD, median-norm clipping and noised aggregation.
train_result train_pool(const model_geometry &geom, const std::vector<miner_dataset> &miners,
                        const miner_dataset &test, const train_config &cfg);

// Flat binary dumps: magic, dimensions, little-endian doubles.
byte_vec serialize_model(const model_params &m);
model_params deserialize_model(std::span<const uint8_t> data);

byte_vec serialize_dataset(const miner_dataset &d);
miner_dataset deserialize_dataset(std::span<const uint8_t> data);

} // namespace pofl::fl
