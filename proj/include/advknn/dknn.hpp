#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "advknn/dataio.hpp"
#include "advknn/neighbors.hpp"
#include "advknn/network.hpp"

namespace advknn {

/// Ensemble of per-layer kNN classifiers over every capture point.
/// All databases must carry the owning network's fingerprint. `knn_layer`
/// names the capture point the plain kNN baseline classifier runs on (the
/// last convolution layer by default). Databases are shared immutably so
/// model variants (different k) can alias the same multi-hundred-MB sets.
struct DknnModel {
    NetworkF net;
    std::vector<std::shared_ptr<const FeatureDatabase>> layer_dbs; // capture-point order
    int k = 75;
    int knn_layer = 3;

    int layer_count() const { return static_cast<int>(layer_dbs.size()); }
    int class_count() const { return net.config().class_count; }
    const FeatureDatabase& db(std::size_t i) const { return *layer_dbs[i]; }
    /// Position of knn_layer inside layer_dbs.
    int knn_db_index() const;
    void validate() const;
};

/// Per-sample ensemble outcome. `total_counts[c]` sums the neighbor label
/// counts over all layers, so the summed score of the per-layer vote
/// probabilities is total_counts[c] / k and the per-sample total over all
/// classes is exactly L.
struct DknnScores {
    std::vector<int> total_counts;
    std::vector<std::vector<int>> layer_counts; // one histogram per layer
    int k = 0;
    int label = 0; // argmax of total_counts, ties -> lowest class

    double score(std::size_t c) const { return static_cast<double>(total_counts[c]) / k; }
    double predicted_score() const { return score(label); }
    /// Single-layer kNN verdict from the stored per-layer histogram.
    int layer_label(std::size_t db_index) const;
};

/// True-class summed scores of the calibration samples, sorted ascending.
struct CalibrationTable {
    std::vector<double> scores;
    std::size_t size() const { return scores.size(); }
};

DknnScores dknn_score(const DknnModel& model, const TensorF& image);
int dknn_predict(const DknnModel& model, const TensorF& image);

/// Scores for every sample of a dataset (single forward per layer plus one
/// neighbor pass per layer, parallel across samples).
std::vector<DknnScores> dknn_scores_batch(const DknnModel& model, const Dataset& data);
std::vector<DknnScores> dknn_scores_batch(const DknnModel& model, const TensorF& images);

CalibrationTable build_calibration(const DknnModel& model, const Dataset& calibration);

/// Fraction of calibration samples whose true-class summed score is
/// strictly below `predicted_class_score`.
double credibility_from_score(const CalibrationTable& table, double predicted_class_score);

double credibility(const DknnModel& model, const CalibrationTable& table, const TensorF& image);

void save_calibration(const CalibrationTable& table, std::uint64_t model_fingerprint,
                      const std::string& path);
CalibrationTable load_calibration(const std::string& path, std::uint64_t expect_fingerprint);

} // namespace advknn
