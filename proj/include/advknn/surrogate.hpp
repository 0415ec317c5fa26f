#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advknn/dataio.hpp"
#include "advknn/neighbors.hpp"
#include "advknn/network.hpp"

namespace advknn {

/// One affine map + softmax approximating a layer's kNN vote distribution.
struct SurrogateHead {
    TensorF weight; // [d, C]
    TensorF bias;   // [C]
    int layer = 0;
    std::uint64_t db_fingerprint = 0;
    bool trained_with_cl = true;

    std::size_t dim() const { return weight.dim(0); }
    std::size_t class_count() const { return weight.dim(1); }

    /// softmax(W^T f + b); sums to 1 within 1e-6.
    std::vector<double> distribution(const float* f) const;
    int predict(const float* f) const;
    LossHead loss_head() const;
};

struct SurrogateTrainConfig {
    double lambda = 0.3;
    int epochs = 5;
    int batch_size = 128;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;
    bool use_cl = true;        // false: the lambda-weighted label loss alone
    std::size_t max_samples = 0; // 0 = all database rows
};

/// -log q_t with q_t floored at 1e-12.
double loss_cls(std::span<const double> q, int t);

/// sum_i p_i (log p_i - log q_i), 0*log 0 := 0, q floored at 1e-12.
double loss_cl(std::span<const double> p, std::span<const double> q);

/// lambda * loss_cls + loss_cl.
double total_loss(std::span<const double> p, std::span<const double> q, int t, double lambda);

/// Leave-one-out kNN vote distributions for every database row (the
/// training targets). Cached by the CLI because the pass is the expensive
/// part of surrogate training.
std::vector<NeighborDistribution> surrogate_targets(const FeatureDatabase& db, int k,
                                                    std::size_t max_samples = 0);

/// Fits the head on the database's own rows against `targets` (computed if
/// null). The base network is not involved: its features are already frozen
/// inside the database.
SurrogateHead train_surrogate(const FeatureDatabase& db, int k, const SurrogateTrainConfig& cfg,
                              const std::vector<NeighborDistribution>* targets = nullptr);

/// Same, but first checks that the database really came from `net`.
SurrogateHead train_surrogate(const NetworkF& net, const FeatureDatabase& db, int k,
                              const SurrogateTrainConfig& cfg,
                              const std::vector<NeighborDistribution>* targets = nullptr);

/// argmax-q predictions over a [n, d] feature matrix.
std::vector<int> surrogate_predict_batch(const SurrogateHead& head, const TensorF& features);

void save_surrogate(const SurrogateHead& head, const std::string& path);
SurrogateHead load_surrogate(const std::string& path, std::uint64_t expect_db_fingerprint = 0);

void save_targets(const std::vector<NeighborDistribution>& targets, int k,
                  std::uint64_t db_fingerprint, const std::string& path);
std::vector<NeighborDistribution> load_targets(const std::string& path, int expect_k,
                                               std::uint64_t expect_db_fingerprint);

} // namespace advknn
