#include "pofl/fl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace pofl::fl {

namespace {

void check_geometry(const model_params &m, const miner_dataset &data) {
    if (m.geom.features != data.feature_dim || m.geom.classes != data.classes)
        throw std::invalid_argument("model and dataset dimensions differ");
    if (int(m.values.size()) != m.geom.param_count())
        throw std::invalid_argument("parameter vector has wrong length");
}

// Numerically stable softmax of logits in place; returns log-sum-exp.
double softmax_inplace(std::span<double> z) {
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double &v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double &v : z)
        v /= sum;
    return mx + std::log(sum);
}

struct mlp_view {
    // layout: W1 (hidden x features), b1 (hidden), W2 (classes x hidden), b2 (classes)
    const double *w1;
    const double *b1;
    const double *w2;
    const double *b2;

    mlp_view(const model_params &m) {
        int f = m.geom.features, h = m.geom.hidden, c = m.geom.classes;
        w1 = m.values.data();
        b1 = w1 + size_t(h) * f;
        w2 = b1 + h;
        b2 = w2 + size_t(c) * h;
        (void)c;
    }
};

void forward_logits(const model_params &m, const double *x, std::vector<double> &hidden_act,
                    std::vector<double> &logits) {
    int f = m.geom.features, c = m.geom.classes;
    logits.assign(size_t(c), 0.0);
    if (m.geom.kind == model_kind::linear_softmax) {
        const double *w = m.values.data();
        const double *b = w + size_t(c) * f;
        for (int k = 0; k < c; ++k) {
            double z = b[k];
            const double *wk = w + size_t(k) * f;
            for (int i = 0; i < f; ++i)
                z += wk[i] * x[i];
            logits[size_t(k)] = z;
        }
    } else {
        int h = m.geom.hidden;
        mlp_view v(m);
        hidden_act.assign(size_t(h), 0.0);
        for (int j = 0; j < h; ++j) {
            double z = v.b1[j];
            const double *wj = v.w1 + size_t(j) * f;
            for (int i = 0; i < f; ++i)
                z += wj[i] * x[i];
            hidden_act[size_t(j)] = std::tanh(z);
        }
        for (int k = 0; k < c; ++k) {
            double z = v.b2[k];
            const double *wk = v.w2 + size_t(k) * h;
            for (int j = 0; j < h; ++j)
                z += wk[j] * hidden_act[size_t(j)];
            logits[size_t(k)] = z;
        }
    }
}

} // namespace

model_params zero_model(const model_geometry &geom) {
    model_params m;
    m.geom = geom;
    m.values.assign(size_t(geom.param_count()), 0.0);
    return m;
}

std::vector<double> miner_dataset::class_histogram() const {
    std::vector<double> h(size_t(classes), 0.0);
    for (int y : labels)
        h[size_t(y)] += 1.0;
    for (double &v : h)
        v /= double(labels.size());
    return h;
}

namespace {

// Deterministic, well-separated class centers on a sphere of the given radius.
std::vector<double> class_center(int cls, int feature_dim, double radius) {
    rng gen(derive_seed(0x9e3779b97f4a7c15ULL, "class-center", uint64_t(cls)));
    std::vector<double> c(static_cast<size_t>(feature_dim));
    double norm = 0.0;
    for (double &v : c) {
        v = gen.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double &v : c)
        v = v / norm * radius;
    return c;
}

void sample_class(std::vector<double> &features, std::vector<int> &labels, int cls, int count,
                  int feature_dim, double radius, rng &gen) {
    std::vector<double> center = class_center(cls, feature_dim, radius);
    for (int s = 0; s < count; ++s) {
        for (int i = 0; i < feature_dim; ++i)
            features.push_back(center[size_t(i)] + gen.normal());
        labels.push_back(cls);
    }
}

} // namespace

std::vector<miner_dataset> make_partition(int num_miners, int classes, int z_lo, int z_hi,
                                          int samples_per_miner, int feature_dim,
                                          double cluster_radius, rng &gen) {
    if (classes < 2)
        throw std::invalid_argument("need at least two classes");
    if (z_lo < 1 || z_hi > classes || z_lo > z_hi)
        throw std::invalid_argument("class-count range out of bounds");
    if (samples_per_miner < z_hi)
        throw std::invalid_argument("too few samples to cover the drawn classes");
    std::vector<miner_dataset> out;
    out.reserve(size_t(num_miners));
    for (int m = 0; m < num_miners; ++m) {
        int z = int(gen.uniform_int(z_lo, z_hi));
        std::vector<int> order(static_cast<size_t>(classes));
        std::iota(order.begin(), order.end(), 0);
        gen.shuffle(order);
        miner_dataset d;
        d.feature_dim = feature_dim;
        d.classes = classes;
        int base = samples_per_miner / z;
        int rem = samples_per_miner % z;
        for (int i = 0; i < z; ++i) {
            int count = base + (i < rem ? 1 : 0);
            sample_class(d.features, d.labels, order[size_t(i)], count, feature_dim,
                         cluster_radius, gen);
        }
        out.push_back(std::move(d));
    }
    return out;
}

miner_dataset make_test_set(int classes, int samples, int feature_dim, double cluster_radius,
                            rng &gen) {
    miner_dataset d;
    d.feature_dim = feature_dim;
    d.classes = classes;
    int base = samples / classes;
    int rem = samples % classes;
    for (int cls = 0; cls < classes; ++cls)
        sample_class(d.features, d.labels, cls, base + (cls < rem ? 1 : 0), feature_dim,
                     cluster_radius, gen);
    return d;
}

double loss(const model_params &m, const miner_dataset &data, std::span<const size_t> index) {
    check_geometry(m, data);
    if (index.empty())
        throw std::invalid_argument("loss over empty sample set");
    std::vector<double> hidden, logits;
    double total = 0.0;
    for (size_t s : index) {
        const double *x = data.features.data() + s * size_t(data.feature_dim);
        forward_logits(m, x, hidden, logits);
        double lse = softmax_inplace(logits);
        (void)lse;
        total += -std::log(std::max(logits[size_t(data.labels[s])], 1e-300));
    }
    return total / double(index.size());
}

double loss(const model_params &m, const miner_dataset &data) {
    std::vector<size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), size_t(0));
    return loss(m, data, idx);
}

std::vector<double> gradient(const model_params &m, const miner_dataset &data,
                             std::span<const size_t> index) {
    check_geometry(m, data);
    if (index.empty())
        throw std::invalid_argument("gradient over empty sample set");
    int f = m.geom.features, c = m.geom.classes;
    std::vector<double> g(m.values.size(), 0.0);
    std::vector<double> hidden, logits;
    for (size_t s : index) {
        const double *x = data.features.data() + s * size_t(f);
        forward_logits(m, x, hidden, logits);
        softmax_inplace(logits);
        int y = data.labels[s];
        if (m.geom.kind == model_kind::linear_softmax) {
            double *gw = g.data();
            double *gb = gw + size_t(c) * f;
            for (int k = 0; k < c; ++k) {
                double e = logits[size_t(k)] - (k == y ? 1.0 : 0.0);
                double *gwk = gw + size_t(k) * f;
                for (int i = 0; i < f; ++i)
                    gwk[i] += e * x[i];
                gb[k] += e;
            }
        } else {
            int h = m.geom.hidden;
            mlp_view v(m);
            double *gw1 = g.data();
            double *gb1 = gw1 + size_t(h) * f;
            double *gw2 = gb1 + h;
            double *gb2 = gw2 + size_t(c) * h;
            std::vector<double> dhid(size_t(h), 0.0);
            for (int k = 0; k < c; ++k) {
                double e = logits[size_t(k)] - (k == y ? 1.0 : 0.0);
                double *gw2k = gw2 + size_t(k) * h;
                for (int j = 0; j < h; ++j) {
                    gw2k[j] += e * hidden[size_t(j)];
                    dhid[size_t(j)] += e * v.w2[size_t(k) * h + j];
                }
                gb2[k] += e;
            }
            for (int j = 0; j < h; ++j) {
                double a = hidden[size_t(j)];
                double dz = dhid[size_t(j)] * (1.0 - a * a);
                double *gw1j = gw1 + size_t(j) * f;
                for (int i = 0; i < f; ++i)
                    gw1j[i] += dz * x[i];
                gb1[j] += dz;
            }
        }
    }
    double inv = 1.0 / double(index.size());
    for (double &v : g)
        v *= inv;
    return g;
}

std::vector<double> gradient(const model_params &m, const miner_dataset &data) {
    std::vector<size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), size_t(0));
    return gradient(m, data, idx);
}

local_update compute_local_update(const model_params &global, const miner_dataset &data,
                                  double eta, int batch_size, int epochs, rng &gen,
                                  int miner_id, int round) {
    check_geometry(global, data);
    if (data.size() == 0)
        throw std::invalid_argument("empty local dataset");
    if (batch_size <= 0 || size_t(batch_size) > data.size())
        throw std::invalid_argument("batch size exceeds local dataset");
    model_params local = global;
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t(0));
    for (int e = 0; e < epochs; ++e) {
        gen.shuffle(order);
        for (size_t start = 0; start < order.size(); start += size_t(batch_size)) {
            size_t end = std::min(order.size(), start + size_t(batch_size));
            std::span<const size_t> batch(order.data() + start, end - start);
            std::vector<double> g = gradient(local, data, batch);
            for (size_t i = 0; i < g.size(); ++i)
                local.values[i] -= eta * g[i];
        }
    }
    local_update u;
    u.miner_id = miner_id;
    u.round = round;
    u.delta.resize(local.values.size());
    for (size_t i = 0; i < u.delta.size(); ++i)
        u.delta[i] = local.values[i] - global.values[i];
    return u;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v)
        s += x * x;
    return std::sqrt(s);
}

double median_clip_norm(const std::vector<local_update> &updates) {
    if (updates.empty())
        throw std::invalid_argument("median over no updates");
    std::vector<double> norms;
    norms.reserve(updates.size());
    for (const auto &u : updates)
        norms.push_back(l2_norm(u.delta));
    std::sort(norms.begin(), norms.end());
    size_t n = norms.size();
    if (n % 2 == 1)
        return norms[n / 2];
    return 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
}

std::vector<double> clip_update(std::span<const double> delta, double clip_norm) {
    if (clip_norm < 0.0)
        throw std::invalid_argument("negative clip norm");
    if (clip_norm == 0.0)
        return std::vector<double>(delta.size(), 0.0);
    double norm = l2_norm(delta);
    double scale = 1.0 / std::max(1.0, norm / clip_norm);
    std::vector<double> out(delta.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = delta[i] * scale;
    return out;
}

model_params aggregate_global(const model_params &prev,
                              const std::vector<std::vector<double>> &clipped_updates,
                              double sigma, double clip_norm, rng &gen) {
    if (clipped_updates.empty())
        throw std::invalid_argument("aggregate over no updates");
    size_t dim = prev.values.size();
    for (const auto &u : clipped_updates)
        if (u.size() != dim)
            throw std::invalid_argument("update dimension mismatch");
    std::vector<double> sum(dim, 0.0);
    for (const auto &u : clipped_updates)
        for (size_t i = 0; i < dim; ++i)
            sum[i] += u[i];
    double noise_std = sigma * clip_norm;
    if (noise_std > 0.0)
        for (size_t i = 0; i < dim; ++i)
            sum[i] += gen.normal(0.0, noise_std);
    model_params next = prev;
    double inv = 1.0 / double(clipped_updates.size());
    for (size_t i = 0; i < dim; ++i)
        next.values[i] += sum[i] * inv;
    return next;
}

sensitivity_result sensitivity_probe(const std::vector<std::vector<double>> &pool_updates,
                                     std::span<const double> extra_update, double clip_norm) {
    if (pool_updates.empty())
        throw std::invalid_argument("sensitivity probe needs a nonempty pool");
    size_t dim = pool_updates[0].size();
    std::vector<double> mean_pool(dim, 0.0), mean_ext(dim, 0.0);
    for (const auto &u : pool_updates)
        for (size_t i = 0; i < dim; ++i)
            mean_pool[i] += u[i];
    for (size_t i = 0; i < dim; ++i) {
        mean_ext[i] = (mean_pool[i] + extra_update[i]) / double(pool_updates.size() + 1);
        mean_pool[i] /= double(pool_updates.size());
    }
    double gap = 0.0;
    for (size_t i = 0; i < dim; ++i) {
        double d = mean_ext[i] - mean_pool[i];
        gap += d * d;
    }
    return {std::sqrt(gap), 2.0 * clip_norm / double(pool_updates.size())};
}

sigma_bound min_sigma(double eps, double delta, double lambda, int rounds) {
    if (eps <= 0.0 || delta <= 0.0 || delta >= 1.0 || lambda <= 0.0 || lambda > 1.0 || rounds < 1)
        throw std::invalid_argument("privacy parameters out of range");
    sigma_bound out;
    out.sigma_min = 2.0 * lambda * std::sqrt(double(rounds) * std::log(1.0 / delta)) / eps;
    out.epsilon_in_range = eps < 2.0 * lambda * lambda * std::log(1.0 / lambda) * double(rounds);
    return out;
}

double emd(std::span<const double> miner_hist, std::span<const double> global_hist) {
    if (miner_hist.size() != global_hist.size() || miner_hist.empty())
        throw std::invalid_argument("histogram length mismatch");
    auto check_normalized = [](std::span<const double> h) {
        double s = 0.0;
        for (double v : h)
            s += v;
        if (std::fabs(s - 1.0) > 1e-9)
            throw std::invalid_argument("histogram not normalized");
    };
    check_normalized(miner_hist);
    check_normalized(global_hist);
    double d = 0.0;
    for (size_t i = 0; i < miner_hist.size(); ++i)
        d += std::fabs(miner_hist[i] - global_hist[i]);
    return d;
}

double avg_emd(const std::vector<miner_dataset> &pool) {
    if (pool.empty())
        throw std::invalid_argument("empty pool");
    int classes = pool[0].classes;
    std::vector<double> global(size_t(classes), 0.0);
    double total = 0.0;
    for (const auto &d : pool) {
        for (int y : d.labels)
            global[size_t(y)] += 1.0;
        total += double(d.size());
    }
    for (double &v : global)
        v /= total;
    double acc = 0.0;
    for (const auto &d : pool) {
        std::vector<double> h = d.class_histogram();
        acc += (double(d.size()) / total) * emd(h, global);
    }
    return acc;
}

double evaluate(const model_params &m, const miner_dataset &test, chain::metric_kind metric) {
    check_geometry(m, test);
    if (test.size() == 0)
        throw std::invalid_argument("empty test set");
    if (metric == chain::metric_kind::loss)
        return loss(m, test);
    int c = m.geom.classes;
    std::vector<double> hidden, logits;
    std::vector<int> tp(size_t(c), 0), fp(size_t(c), 0), fn(size_t(c), 0);
    size_t correct = 0;
    for (size_t s = 0; s < test.size(); ++s) {
        const double *x = test.features.data() + s * size_t(test.feature_dim);
        forward_logits(m, x, hidden, logits);
        int pred = int(std::max_element(logits.begin(), logits.end()) - logits.begin());
        int y = test.labels[s];
        if (pred == y) {
            ++correct;
            ++tp[size_t(y)];
        } else {
            ++fp[size_t(pred)];
            ++fn[size_t(y)];
        }
    }
    if (metric == chain::metric_kind::accuracy)
        return double(correct) / double(test.size());
    double f1_sum = 0.0;
    for (int k = 0; k < c; ++k) {
        double denom = 2.0 * tp[size_t(k)] + fp[size_t(k)] + fn[size_t(k)];
        f1_sum += denom == 0.0 ? 0.0 : 2.0 * tp[size_t(k)] / denom;
    }
    return f1_sum / double(c);
}

train_result train_pool(const model_geometry &geom, const std::vector<miner_dataset> &miners,
                        const miner_dataset &test, const train_config &cfg) {
    if (miners.empty())
        throw std::invalid_argument("pool has no miners");
    model_params global = zero_model(geom);
    int sampled_count = std::max(1, int(std::ceil(cfg.sample_ratio * double(miners.size()))));
    sampled_count = std::min<int>(sampled_count, int(miners.size()));
    rng sampler(derive_seed(cfg.seed, "round-sampling"));
    train_result out;
    for (int round = 1; round <= cfg.rounds; ++round) {
        std::vector<int> ids(miners.size());
        std::iota(ids.begin(), ids.end(), 0);
        sampler.shuffle(ids);
        ids.resize(size_t(sampled_count));
        std::sort(ids.begin(), ids.end()); // merge in ascending miner order
        std::vector<local_update> updates;
        updates.reserve(ids.size());
        for (int id : ids) {
            rng local_gen(derive_seed(cfg.seed, "local-sgd", uint64_t(id), uint64_t(round)));
            updates.push_back(compute_local_update(global, miners[size_t(id)], cfg.eta,
                                                   cfg.batch_size, cfg.local_epochs, local_gen,
                                                   id, round));
        }
        double clip = median_clip_norm(updates);
        std::vector<std::vector<double>> clipped;
        clipped.reserve(updates.size());
        for (const auto &u : updates)
            clipped.push_back(clip_update(u.delta, clip));
        rng noise_gen(derive_seed(cfg.seed, "dp-noise", uint64_t(round)));
        global = aggregate_global(global, clipped, cfg.sigma, clip, noise_gen);
        if (cfg.eval_every > 0 && round % cfg.eval_every == 0)
            out.accuracy_curve.emplace_back(round,
                                            evaluate(global, test, chain::metric_kind::accuracy));
    }
    out.final_accuracy = evaluate(global, test, chain::metric_kind::accuracy);
    out.accuracy_curve.emplace_back(cfg.rounds, out.final_accuracy);
    out.model = std::move(global);
    return out;
}

namespace {
constexpr uint32_t model_magic = 0x50464c4d;   // "PFLM"
constexpr uint32_t dataset_magic = 0x50464c44; // "PFLD"

void put_u32le(byte_vec &out, uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(uint8_t(v >> (8 * i)));
}

void put_f64le(byte_vec &out, double v) {
    uint64_t bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        out.push_back(uint8_t(bits >> (8 * i)));
}

struct le_reader {
    std::span<const uint8_t> data;
    size_t pos = 0;

    uint32_t u32() {
        if (data.size() - pos < 4)
            throw ser::decode_error("binary dump truncated");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= uint32_t(data[pos + size_t(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        if (data.size() - pos < 8)
            throw ser::decode_error("binary dump truncated");
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= uint64_t(data[pos + size_t(i)]) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(bits);
    }
};
}

byte_vec serialize_model(const model_params &m) {
    byte_vec out;
    put_u32le(out, model_magic);
    put_u32le(out, uint32_t(m.geom.kind));
    put_u32le(out, uint32_t(m.geom.features));
    put_u32le(out, uint32_t(m.geom.classes));
    put_u32le(out, uint32_t(m.geom.hidden));
    put_u32le(out, uint32_t(m.values.size()));
    for (double v : m.values)
        put_f64le(out, v);
    return out;
}

model_params deserialize_model(std::span<const uint8_t> data) {
    le_reader r{data};
    if (r.u32() != model_magic)
        throw ser::decode_error("bad model magic");
    model_params m;
    m.geom.kind = model_kind(r.u32());
    m.geom.features = int(r.u32());
    m.geom.classes = int(r.u32());
    m.geom.hidden = int(r.u32());
    uint32_t n = r.u32();
    m.values.reserve(n);
    for (uint32_t i = 0; i < n; ++i)
        m.values.push_back(r.f64());
    if (int(m.values.size()) != m.geom.param_count())
        throw ser::decode_error("model parameter count mismatch");
    return m;
}

byte_vec serialize_dataset(const miner_dataset &d) {
    byte_vec out;
    put_u32le(out, dataset_magic);
    put_u32le(out, uint32_t(d.feature_dim));
    put_u32le(out, uint32_t(d.classes));
    put_u32le(out, uint32_t(d.size()));
    for (double v : d.features)
        put_f64le(out, v);
    for (int y : d.labels)
        put_u32le(out, uint32_t(y));
    return out;
}

miner_dataset deserialize_dataset(std::span<const uint8_t> data) {
    le_reader r{data};
    if (r.u32() != dataset_magic)
        throw ser::decode_error("bad dataset magic");
    miner_dataset d;
    d.feature_dim = int(r.u32());
    d.classes = int(r.u32());
    uint32_t n = r.u32();
    d.features.reserve(size_t(n) * size_t(d.feature_dim));
    for (uint32_t i = 0; i < n * uint32_t(d.feature_dim); ++i)
        d.features.push_back(r.f64());
    d.labels.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t y = r.u32();
        if (int(y) >= d.classes)
            throw ser::decode_error("label out of range");
        d.labels.push_back(int(y));
    }
    return d;
}

} // namespace pofl::fl
