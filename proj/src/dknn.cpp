#include "advknn/dknn.hpp"

#include <algorithm>

#include "advknn/container.hpp"
#include "advknn/errors.hpp"

namespace advknn {

int DknnModel::knn_db_index() const {
    for (std::size_t i = 0; i < layer_dbs.size(); ++i)
        if (layer_dbs[i]->layer == knn_layer) return static_cast<int>(i);
    throw ConfigError("no layer database for kNN layer " + std::to_string(knn_layer));
}

void DknnModel::validate() const {
    if (layer_dbs.empty()) throw ContractError("DkNN model has no layer databases");
    const std::uint64_t fp = net.fingerprint();
    for (const auto& dbp : layer_dbs) {
        if (!dbp) throw ContractError("DkNN model holds a null layer database");
        if (dbp->network_fingerprint != fp)
            throw FingerprintError("layer " + std::to_string(dbp->layer) +
                                   " database fingerprint does not match the network");
    }
    (void)knn_db_index();
}

int DknnScores::layer_label(std::size_t db_index) const {
    const auto& counts = layer_counts.at(db_index);
    int best = 0;
    for (std::size_t c = 1; c < counts.size(); ++c)
        if (counts[c] > counts[best]) best = static_cast<int>(c);
    return best;
}

std::vector<DknnScores> dknn_scores_batch(const DknnModel& model, const TensorF& images) {
    model.validate();
    const std::size_t n = images.dim(0);
    const int C = model.class_count();

    std::vector<DknnScores> out(n);
    for (auto& s : out) {
        s.k = model.k;
        s.total_counts.assign(C, 0);
        s.layer_counts.assign(model.layer_count(), {});
    }

    // The layer databases are consulted one at a time so only one feature
    // matrix is live at once.
    Dataset probe;
    probe.images = images;
    probe.labels.assign(n, 0);
    probe.class_count = C;

    for (int li = 0; li < model.layer_count(); ++li) {
        const FeatureDatabase& db = model.db(li);
        TensorF feats = extract_features(model.net, probe, db.layer);
        auto votes = vote_batch(db, feats, model.k);
        for (std::size_t i = 0; i < n; ++i) {
            out[i].layer_counts[li] = votes[i].counts;
            for (int c = 0; c < C; ++c) out[i].total_counts[c] += votes[i].counts[c];
        }
    }

    for (auto& s : out) {
        s.label = 0;
        for (int c = 1; c < C; ++c)
            if (s.total_counts[c] > s.total_counts[s.label]) s.label = c;
    }
    return out;
}

std::vector<DknnScores> dknn_scores_batch(const DknnModel& model, const Dataset& data) {
    return dknn_scores_batch(model, data.images);
}

DknnScores dknn_score(const DknnModel& model, const TensorF& image) {
    return dknn_scores_batch(model, image)[0];
}

int dknn_predict(const DknnModel& model, const TensorF& image) {
    return dknn_score(model, image).label;
}

CalibrationTable build_calibration(const DknnModel& model, const Dataset& calibration) {
    if (calibration.size() == 0)
        throw ContractError("calibration set is empty");
    auto scores = dknn_scores_batch(model, calibration);
    CalibrationTable table;
    table.scores.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        table.scores.push_back(scores[i].score(calibration.labels[i]));
    std::sort(table.scores.begin(), table.scores.end());
    return table;
}

double credibility_from_score(const CalibrationTable& table, double predicted_class_score) {
    if (table.scores.empty()) throw ContractError("credibility against an empty table");
    auto below = std::lower_bound(table.scores.begin(), table.scores.end(), predicted_class_score);
    return static_cast<double>(below - table.scores.begin()) /
           static_cast<double>(table.scores.size());
}

double credibility(const DknnModel& model, const CalibrationTable& table, const TensorF& image) {
    return credibility_from_score(table, dknn_score(model, image).predicted_score());
}

void save_calibration(const CalibrationTable& table, std::uint64_t model_fingerprint,
                      const std::string& path) {
    Container c;
    c.kind = "calibration-table";
    c.meta["network_fingerprint"] = std::to_string(model_fingerprint);
    c.add_f64("scores", {table.scores.size()}, table.scores);
    c.save(path);
}

CalibrationTable load_calibration(const std::string& path, std::uint64_t expect_fingerprint) {
    Container c = Container::load(path);
    if (c.kind != "calibration-table")
        throw FormatError("'" + path + "' is a " + c.kind + ", not a calibration table");
    if (expect_fingerprint != 0 && c.meta_u64("network_fingerprint") != expect_fingerprint)
        throw FingerprintError("calibration table '" + path +
                               "' was built against a different network");
    CalibrationTable t;
    t.scores = c.f64("scores");
    if (!std::is_sorted(t.scores.begin(), t.scores.end()))
        std::sort(t.scores.begin(), t.scores.end());
    return t;
}

} // namespace advknn
