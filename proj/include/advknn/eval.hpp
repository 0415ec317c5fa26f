#pragma once

#include <span>
#include <string>
#include <vector>

#include "advknn/attacks.hpp"
#include "advknn/dknn.hpp"

namespace advknn {

/// Aggregate metrics over one attacked record set. Success rates are
/// 1 - accuracy over the same samples, per classifier.
struct MetricsReport {
    // config echo
    std::string attack;
    std::string guidance;
    double epsilon = 0.0;
    double alpha = 0.0;
    int steps = 0;
    int k = 0;
    int layer = 0;
    std::size_t sample_count = 0;

    double dnn_accuracy = 0.0, knn_accuracy = 0.0, dknn_accuracy = 0.0;
    double dnn_success = 0.0, knn_success = 0.0, dknn_success = 0.0;

    /// Mean L2 over samples the DkNN originally classified correctly, and
    /// over the subset where the attack then flipped the DkNN verdict.
    double mean_l2_correct = 0.0;
    double mean_l2_successful = 0.0;
    double mean_credibility = 0.0;
    std::vector<std::size_t> credibility_histogram; // 10 uniform bins over [0,1]

    static std::string csv_header();
    std::string csv_row() const;
};

MetricsReport evaluate_batch(const AdversarialBatch& batch, int k);
/// Concatenated evaluation; every batch must share one attack config.
MetricsReport evaluate_batches(std::span<const AdversarialBatch> batches, int k);

struct TradeoffPoint {
    double threshold = 0.0;
    double detected_adversarial = 0.0; // fraction with credibility < threshold
    double rejected_clean = 0.0;       // same rule applied to clean samples
};

std::vector<TradeoffPoint> detection_tradeoff(std::span<const float> clean_credibility,
                                              std::span<const float> adversarial_credibility,
                                              std::span<const double> thresholds);

enum class SweepAxis { Epsilon, K, Layer };
SweepAxis sweep_axis_from(const std::string& s);
const char* sweep_axis_name(SweepAxis a);

/// Everything a sweep point needs to rebuild its models. Databases are
/// shared with the caller; surrogate heads and calibration tables are
/// retrained per point where the axis invalidates them.
struct SweepContext {
    NetworkF net;
    std::vector<std::shared_ptr<const FeatureDatabase>> layer_dbs;
    int k = 75;
    int knn_layer = 3;
    Dataset calibration;
    Dataset population;
    AttackConfig attack;
    SurrogateTrainConfig surrogate;
};

struct SweepResult {
    SweepAxis axis;
    std::vector<double> grid;
    std::vector<MetricsReport> reports;
};

/// One full attack + evaluation per grid point under the same seed.
SweepResult sweep(SweepAxis axis, const std::vector<double>& grid, const SweepContext& ctx);

/// Re-classifies stored adversarial images with an independently trained
/// target model stack.
MetricsReport transfer_eval(const AdversarialBatch& records, const DknnModel& target,
                            const CalibrationTable& target_table);

/// P5 PGM, maxval 255.
void write_pgm(const TensorF& image_row, std::size_t h, std::size_t w, const std::string& path);

/// Per layer, writes the query image followed by its k_show nearest
/// training images as one PGM strip, plus a CSV of neighbor indices.
/// Returns the written PGM paths.
std::vector<std::string> export_neighbor_panel(const DknnModel& model, const Dataset& train,
                                               const TensorF& image, int k_show,
                                               const std::string& out_prefix);

void write_reports_csv(const std::vector<MetricsReport>& reports, const std::string& path,
                       const std::string& config_echo);
void write_tradeoff_csv(const std::vector<TradeoffPoint>& points, const std::string& path,
                        const std::string& config_echo);

} // namespace advknn
