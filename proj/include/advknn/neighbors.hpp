#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advknn/dataio.hpp"
#include "advknn/network.hpp"
#include "advknn/tensor.hpp"

namespace advknn {

enum class Metric : std::uint8_t { SquaredEuclidean, Cosine };

/// The kNN reference set: one row of layer-l activations per training
/// sample. Immutable after build; queries are read-only and parallel.
struct FeatureDatabase {
    TensorF features; // [M, d]
    std::vector<std::int32_t> labels;
    int layer = 0;
    int class_count = 10;
    std::uint64_t network_fingerprint = 0;
    Metric metric = Metric::SquaredEuclidean;

    std::size_t rows() const { return labels.size(); }
    std::size_t dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
    const float* row(std::size_t i) const { return features.data() + i * dim(); }
    void validate() const;
};

struct NeighborHit {
    std::size_t index;
    double distance;
};

/// Class-vote histogram of the k nearest neighbors. Counts are the source
/// of truth; probabilities are exact multiples of 1/k derived on demand.
struct NeighborDistribution {
    std::vector<int> counts; // length C, sums to k
    int k = 0;
    std::vector<std::size_t> neighbors; // ascending by (distance, index)

    double prob(std::size_t c) const { return static_cast<double>(counts[c]) / k; }
    std::vector<double> probs() const;
    int argmax() const; // ties -> lowest class index
};

/// Extracts layer-l activations for every sample of `data`.
/// Row i is exactly forward_with_activations(sample i) at that layer.
FeatureDatabase build_database(const NetworkF& net, const Dataset& data, int layer,
                               Metric metric = Metric::SquaredEuclidean,
                               std::size_t batch_size = 256);

/// Feature matrix [n, d] of `data` at capture point `layer` (no labels).
TensorF extract_features(const NetworkF& net, const Dataset& data, int layer,
                         std::size_t batch_size = 256);

/// Exact k smallest distances, ascending, ties broken by ascending database
/// index. `exclude` names a database row to skip (-1 for none).
std::vector<NeighborHit> knn_query(const FeatureDatabase& db, const float* q, int k,
                                   std::ptrdiff_t exclude = -1);

NeighborDistribution vote_distribution(const FeatureDatabase& db, const float* q, int k,
                                       std::ptrdiff_t exclude = -1);

int knn_predict(const FeatureDatabase& db, const float* q, int k, std::ptrdiff_t exclude = -1);

/// Batch form of vote_distribution over a [n, d] query matrix. When
/// `exclude_base` >= 0, query i skips database row exclude_base + i
/// (leave-one-out over the training set). Deterministic for any worker
/// count: each query's result is written to its own slot.
std::vector<NeighborDistribution> vote_batch(const FeatureDatabase& db, const TensorF& queries,
                                             int k, std::ptrdiff_t exclude_base = -1);

void save_database(const FeatureDatabase& db, const std::string& path);
FeatureDatabase load_database(const std::string& path);

} // namespace advknn
