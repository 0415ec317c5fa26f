#include "advknn/surrogate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>

#include "advknn/container.hpp"
#include "advknn/errors.hpp"
#include "advknn/graph.hpp"
#include "advknn/parallel.hpp"
#include "advknn/rng.hpp"

namespace advknn {

namespace {

void check_distribution(std::span<const double> p, const char* name) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ContractError(std::string(name) + " is not a distribution (negative or "
                                                    "non-finite entry)");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ContractError(std::string(name) + " sums to " + std::to_string(sum) +
                            ", expected 1");
}

} // namespace

std::vector<double> SurrogateHead::distribution(const float* f) const {
    const std::size_t d = dim(), C = class_count();
    std::vector<double> z(C);
    for (std::size_t c = 0; c < C; ++c) z[c] = bias[c];
    for (std::size_t j = 0; j < d; ++j) {
        const float fj = f[j];
        if (fj == 0.0f) continue;
        const float* wrow = weight.data() + j * C;
        for (std::size_t c = 0; c < C; ++c) z[c] += double(fj) * double(wrow[c]);
    }
    double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

int SurrogateHead::predict(const float* f) const {
    auto q = distribution(f);
    return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

LossHead SurrogateHead::loss_head() const {
    LossHead h;
    h.kind = LossHead::Kind::SurrogateCrossEntropy;
    h.capture_point = layer;
    h.weight = weight.values();
    h.bias = bias.values();
    return h;
}

double loss_cls(std::span<const double> q, int t) {
    check_distribution(q, "q");
    if (t < 0 || static_cast<std::size_t>(t) >= q.size())
        throw ContractError("label " + std::to_string(t) + " outside [0," +
                            std::to_string(q.size()) + ")");
    return -std::log(std::max(q[static_cast<std::size_t>(t)], kLogFloor));
}

double loss_cl(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw ContractError("loss_cl: length mismatch " + std::to_string(p.size()) + " vs " +
                            std::to_string(q.size()));
    check_distribution(p, "p");
    check_distribution(q, "q");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        acc += p[i] * (std::log(std::max(p[i], kLogFloor)) - std::log(std::max(q[i], kLogFloor)));
    }
    return acc;
}

double total_loss(std::span<const double> p, std::span<const double> q, int t, double lambda) {
    if (lambda < 0.0) throw ContractError("lambda must be nonnegative");
    return lambda * loss_cls(q, t) + loss_cl(p, q);
}

std::vector<NeighborDistribution> surrogate_targets(const FeatureDatabase& db, int k,
                                                    std::size_t max_samples) {
    db.validate();
    std::size_t n = db.rows();
    if (max_samples > 0) n = std::min(n, max_samples);
    TensorF queries({n, db.dim()});
    std::memcpy(queries.data(), db.features.data(), n * db.dim() * sizeof(float));
    // Leave-one-out: row i is excluded from its own neighbor set.
    return vote_batch(db, queries, k, 0);
}

SurrogateHead train_surrogate(const FeatureDatabase& db, int k, const SurrogateTrainConfig& cfg,
                              const std::vector<NeighborDistribution>* targets) {
    db.validate();
    if (cfg.lambda < 0.0) throw ContractError("lambda must be nonnegative");

    std::vector<NeighborDistribution> local;
    if (!targets) {
        local = surrogate_targets(db, k, cfg.max_samples);
        targets = &local;
    }
    std::size_t n = targets->size();
    if (cfg.max_samples > 0) n = std::min(n, cfg.max_samples);
    if (n == 0) throw ContractError("no training samples for the surrogate head");

    const std::size_t d = db.dim();
    const std::size_t C = static_cast<std::size_t>(db.class_count);

    SurrogateHead head;
    head.layer = db.layer;
    head.db_fingerprint = db.network_fingerprint;
    head.trained_with_cl = cfg.use_cl;
    {
        auto rng = seeded_rng(cfg.seed, "surrogate-init");
        double bound = std::sqrt(6.0 / double(d));
        std::uniform_real_distribution<double> dist(-bound, bound);
        head.weight = TensorF({d, C});
        for (std::size_t i = 0; i < head.weight.size(); ++i)
            head.weight[i] = static_cast<float>(dist(rng));
        head.bias = TensorF({C}, 0.0f);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = seeded_rng(cfg.seed, "surrogate-shuffle");

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t at = 0; at < n; at += cfg.batch_size) {
            const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n - at);
            TensorF fb({bs, d});
            TensorF pb({bs, C});
            TensorF onehot({bs, C}, 0.0f);
            for (std::size_t i = 0; i < bs; ++i) {
                const std::size_t src = order[at + i];
                std::memcpy(fb.data() + i * d, db.row(src), d * sizeof(float));
                const NeighborDistribution& nd = (*targets)[src];
                for (std::size_t c = 0; c < C; ++c)
                    pb[i * C + c] = static_cast<float>(nd.prob(c));
                onehot[i * C + nd.argmax()] = 1.0f; // t is the kNN label
            }

            Graph<float> g;
            auto fi = g.leaf(std::move(fb), false);
            auto wi = g.leaf(head.weight, true);
            auto bi = g.leaf(head.bias, true);
            auto q = g.softmax(g.affine(fi, wi, bi));
            auto cls = g.cross_entropy(q, g.leaf(std::move(onehot), false));
            auto lam = g.leaf(TensorF::scalar(static_cast<float>(cfg.lambda)), false);
            auto loss = g.mul(lam, cls);
            if (cfg.use_cl) loss = g.add(loss, g.kl_div(g.leaf(std::move(pb), false), q));

            if (!std::isfinite(g.value(loss)[0]))
                throw TrainingError("surrogate loss diverged at epoch " + std::to_string(epoch));

            std::array<Graph<float>::Id, 2> want{wi, bi};
            auto grads = g.backward(loss, want);
            const float lr = static_cast<float>(cfg.learning_rate);
            const TensorF& dw = grads.at(wi);
            const TensorF& dbias = grads.at(bi);
            for (std::size_t i = 0; i < head.weight.size(); ++i) head.weight[i] -= lr * dw[i];
            for (std::size_t i = 0; i < head.bias.size(); ++i) head.bias[i] -= lr * dbias[i];
        }
    }
    return head;
}

SurrogateHead train_surrogate(const NetworkF& net, const FeatureDatabase& db, int k,
                              const SurrogateTrainConfig& cfg,
                              const std::vector<NeighborDistribution>* targets) {
    if (db.network_fingerprint != net.fingerprint())
        throw FingerprintError("feature database was not built from this network");
    return train_surrogate(db, k, cfg, targets);
}

std::vector<int> surrogate_predict_batch(const SurrogateHead& head, const TensorF& features) {
    if (features.rank() != 2 || features.dim(1) != head.dim())
        throw ShapeError("feature matrix " + features.shape_str() +
                         " does not match surrogate dim " + std::to_string(head.dim()));
    std::vector<int> out(features.dim(0));
    parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            out[i] = head.predict(features.data() + i * head.dim());
    });
    return out;
}

void save_surrogate(const SurrogateHead& head, const std::string& path) {
    Container c;
    c.kind = "surrogate-head";
    c.meta["layer"] = std::to_string(head.layer);
    c.meta["db_fingerprint"] = std::to_string(head.db_fingerprint);
    c.meta["trained_with_cl"] = head.trained_with_cl ? "1" : "0";
    c.add_f32("weight", head.weight.shape(), head.weight.values());
    c.add_f32("bias", head.bias.shape(), head.bias.values());
    c.save(path);
}

SurrogateHead load_surrogate(const std::string& path, std::uint64_t expect_db_fingerprint) {
    Container c = Container::load(path);
    if (c.kind != "surrogate-head")
        throw FormatError("'" + path + "' is a " + c.kind + ", not a surrogate head");
    SurrogateHead head;
    head.layer = static_cast<int>(c.meta_u64("layer"));
    head.db_fingerprint = c.meta_u64("db_fingerprint");
    head.trained_with_cl = c.meta_at("trained_with_cl") == "1";
    head.weight = TensorF(c.shape("weight"), c.f32("weight"));
    head.bias = TensorF(c.shape("bias"), c.f32("bias"));
    if (expect_db_fingerprint != 0 && head.db_fingerprint != expect_db_fingerprint)
        throw FingerprintError("surrogate head '" + path +
                               "' was trained against a different feature database");
    return head;
}

void save_targets(const std::vector<NeighborDistribution>& targets, int k,
                  std::uint64_t db_fingerprint, const std::string& path) {
    Container c;
    c.kind = "surrogate-targets";
    c.meta["k"] = std::to_string(k);
    c.meta["db_fingerprint"] = std::to_string(db_fingerprint);
    const std::size_t C = targets.empty() ? 0 : targets[0].counts.size();
    std::vector<std::int32_t> counts;
    counts.reserve(targets.size() * C);
    for (const auto& t : targets)
        for (int v : t.counts) counts.push_back(v);
    c.add_i32("counts", {targets.size(), C}, counts);
    c.save(path);
}

std::vector<NeighborDistribution> load_targets(const std::string& path, int expect_k,
                                               std::uint64_t expect_db_fingerprint) {
    Container c = Container::load(path);
    if (c.kind != "surrogate-targets")
        throw FormatError("'" + path + "' is a " + c.kind + ", not a target cache");
    if (static_cast<int>(c.meta_u64("k")) != expect_k)
        throw FormatError("target cache '" + path + "' was computed for k=" + c.meta_at("k"));
    if (expect_db_fingerprint != 0 && c.meta_u64("db_fingerprint") != expect_db_fingerprint)
        throw FingerprintError("target cache '" + path +
                               "' was computed against a different feature database");
    const auto& counts = c.i32("counts");
    const auto& shape = c.shape("counts");
    std::vector<NeighborDistribution> out(shape[0]);
    for (std::size_t i = 0; i < shape[0]; ++i) {
        out[i].k = expect_k;
        out[i].counts.assign(counts.begin() + i * shape[1], counts.begin() + (i + 1) * shape[1]);
    }
    return out;
}

} // namespace advknn
