#include "advknn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "advknn/errors.hpp"

namespace advknn {

std::string MetricsReport::csv_header() {
    return "attack,guidance,epsilon,alpha,steps,k,layer,samples,"
           "dnn_accuracy,knn_accuracy,dknn_accuracy,"
           "dnn_success,knn_success,dknn_success,"
           "mean_l2_correct,mean_l2_successful,mean_credibility";
}

std::string MetricsReport::csv_row() const {
    std::ostringstream os;
    os << attack << ',' << guidance << ',' << epsilon << ',' << alpha << ',' << steps << ',' << k
       << ',' << layer << ',' << sample_count << ',' << dnn_accuracy << ',' << knn_accuracy << ','
       << dknn_accuracy << ',' << dnn_success << ',' << knn_success << ',' << dknn_success << ','
       << mean_l2_correct << ',' << mean_l2_successful << ',' << mean_credibility;
    return os.str();
}

namespace {

MetricsReport evaluate_records(std::span<const AdversarialRecord> records,
                               const AttackConfig& cfg, int k) {
    if (records.empty()) throw ContractError("evaluate_batch: no records");
    MetricsReport r;
    r.attack = attack_kind_name(cfg.kind);
    r.guidance = guidance_name(cfg.guidance);
    r.epsilon = cfg.epsilon;
    r.alpha = cfg.kind == AttackKind::Bim ? cfg.alpha : 0.0;
    r.steps = cfg.kind == AttackKind::Bim ? cfg.steps : 1;
    r.k = k;
    r.layer = cfg.layer;
    r.sample_count = records.size();
    r.credibility_histogram.assign(10, 0);

    std::size_t dnn_ok = 0, knn_ok = 0, dknn_ok = 0;
    double l2_correct = 0.0, l2_success = 0.0, cred = 0.0;
    std::size_t n_correct = 0, n_success = 0;
    for (const auto& rec : records) {
        dnn_ok += rec.dnn_after == rec.true_label;
        knn_ok += rec.knn_after == rec.true_label;
        dknn_ok += rec.dknn_after == rec.true_label;
        cred += rec.credibility;
        std::size_t bin = std::min<std::size_t>(9, static_cast<std::size_t>(rec.credibility * 10));
        ++r.credibility_histogram[bin];
        if (rec.dknn_before == rec.true_label) {
            l2_correct += rec.l2;
            ++n_correct;
            if (rec.dknn_after != rec.true_label) {
                l2_success += rec.l2;
                ++n_success;
            }
        }
    }
    const double n = static_cast<double>(records.size());
    r.dnn_accuracy = dnn_ok / n;
    r.knn_accuracy = knn_ok / n;
    r.dknn_accuracy = dknn_ok / n;
    r.dnn_success = 1.0 - r.dnn_accuracy;
    r.knn_success = 1.0 - r.knn_accuracy;
    r.dknn_success = 1.0 - r.dknn_accuracy;
    r.mean_l2_correct = n_correct ? l2_correct / n_correct : 0.0;
    r.mean_l2_successful = n_success ? l2_success / n_success : 0.0;
    r.mean_credibility = cred / n;
    return r;
}

bool same_config(const AttackConfig& a, const AttackConfig& b) {
    return a.kind == b.kind && a.epsilon == b.epsilon && a.alpha == b.alpha &&
           a.steps == b.steps && a.guidance == b.guidance && a.layer == b.layer;
}

} // namespace

MetricsReport evaluate_batch(const AdversarialBatch& batch, int k) {
    return evaluate_records(batch.records, batch.config, k);
}

MetricsReport evaluate_batches(std::span<const AdversarialBatch> batches, int k) {
    if (batches.empty()) throw ContractError("evaluate_batches: no batches");
    std::vector<AdversarialRecord> all;
    for (const auto& b : batches) {
        if (!same_config(b.config, batches.front().config))
            throw ContractError("evaluate_batches: mixed attack configs in one evaluation");
        all.insert(all.end(), b.records.begin(), b.records.end());
    }
    return evaluate_records(all, batches.front().config, k);
}

std::vector<TradeoffPoint> detection_tradeoff(std::span<const float> clean_credibility,
                                              std::span<const float> adversarial_credibility,
                                              std::span<const double> thresholds) {
    if (clean_credibility.empty() || adversarial_credibility.empty())
        throw ContractError("detection_tradeoff: both credibility lists must be non-empty");
    std::vector<TradeoffPoint> out;
    out.reserve(thresholds.size());
    for (double th : thresholds) {
        TradeoffPoint p;
        p.threshold = th;
        std::size_t adv = 0, clean = 0;
        for (float c : adversarial_credibility) adv += c < th;
        for (float c : clean_credibility) clean += c < th;
        p.detected_adversarial = static_cast<double>(adv) / adversarial_credibility.size();
        p.rejected_clean = static_cast<double>(clean) / clean_credibility.size();
        out.push_back(p);
    }
    return out;
}

SweepAxis sweep_axis_from(const std::string& s) {
    if (s == "epsilon") return SweepAxis::Epsilon;
    if (s == "k") return SweepAxis::K;
    if (s == "layer") return SweepAxis::Layer;
    throw ConfigError("unknown sweep axis '" + s + "' (expected epsilon, k or layer)");
}

const char* sweep_axis_name(SweepAxis a) {
    switch (a) {
        case SweepAxis::Epsilon: return "epsilon";
        case SweepAxis::K: return "k";
        case SweepAxis::Layer: return "layer";
    }
    return "?";
}

SweepResult sweep(SweepAxis axis, const std::vector<double>& grid, const SweepContext& ctx) {
    if (grid.empty()) throw ContractError("sweep: empty grid");
    SweepResult result;
    result.axis = axis;
    result.grid = grid;

    for (double point : grid) {
        DknnModel model;
        model.net = ctx.net;
        model.layer_dbs = ctx.layer_dbs;
        model.k = ctx.k;
        model.knn_layer = ctx.knn_layer;
        AttackConfig attack = ctx.attack;
        SurrogateTrainConfig scfg = ctx.surrogate;
        int layer = ctx.attack.layer;

        switch (axis) {
            case SweepAxis::Epsilon:
                if (point < 0.0 || point > 1.0)
                    throw ConfigError("sweep: epsilon grid value " + std::to_string(point) +
                                      " outside [0,1]");
                attack.epsilon = point;
                attack.alpha = std::min(attack.alpha, point);
                break;
            case SweepAxis::K: {
                int kk = static_cast<int>(point);
                if (kk < 1 || static_cast<double>(kk) != point)
                    throw ConfigError("sweep: k grid value " + std::to_string(point) +
                                      " is not a positive integer");
                model.k = kk;
                break;
            }
            case SweepAxis::Layer: {
                int l = static_cast<int>(point);
                if (l < 1 || static_cast<double>(l) != point)
                    throw ConfigError("sweep: layer grid value " + std::to_string(point) +
                                      " is not a positive layer id");
                layer = l;
                attack.layer = l;
                break;
            }
        }

        CalibrationTable table = build_calibration(model, ctx.calibration);

        const SurrogateHead* head_ptr = nullptr;
        SurrogateHead head;
        if (attack.guidance != Guidance::Origin) {
            const FeatureDatabase* db = nullptr;
            for (const auto& dbp : model.layer_dbs)
                if (dbp->layer == layer) db = dbp.get();
            if (!db)
                throw ConfigError("sweep: no database for surrogate layer " +
                                  std::to_string(layer));
            scfg.use_cl = attack.guidance == Guidance::DknnbCl;
            head = train_surrogate(model.net, *db, model.k, scfg);
            head_ptr = &head;
        }

        auto batch = run_attack(model, table, head_ptr, ctx.population, attack);
        result.reports.push_back(evaluate_batch(batch, model.k));
    }
    return result;
}

MetricsReport transfer_eval(const AdversarialBatch& records, const DknnModel& target,
                            const CalibrationTable& target_table) {
    target.validate();
    if (records.size() == 0) throw ContractError("transfer_eval: no records");
    if (records.adversarials.dim(2) != target.net.config().in_height ||
        records.adversarials.dim(3) != target.net.config().in_width)
        throw ShapeError("stored adversarial images " + records.adversarials.shape_str() +
                         " do not fit the target network input");

    Dataset adv;
    adv.images = records.adversarials;
    adv.class_count = target.class_count();
    adv.labels.reserve(records.size());
    for (const auto& r : records.records) adv.labels.push_back(r.true_label);

    CleanEval verdicts = evaluate_clean(target, target_table, adv);

    AdversarialBatch rescored = records;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& r = rescored.records[i];
        r.dnn_after = verdicts.dnn[i];
        r.knn_after = verdicts.knn[i];
        r.dknn_after = verdicts.dknn[i];
        r.credibility = verdicts.credibility[i];
        // The "before" half refers to the source model; transfer accuracy
        // only reads the after-verdicts, but keep the originally-correct
        // population meaningful for the distortion means.
        r.dknn_before = r.true_label;
    }
    return evaluate_batch(rescored, target.k);
}

void write_pgm(const TensorF& image_row, std::size_t h, std::size_t w, const std::string& path) {
    if (image_row.size() != h * w)
        throw ShapeError("write_pgm: buffer of " + std::to_string(image_row.size()) +
                         " pixels does not fill " + std::to_string(h) + "x" + std::to_string(w));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "P5\n" << w << ' ' << h << "\n255\n";
    for (std::size_t i = 0; i < image_row.size(); ++i) {
        float v = std::min(1.0f, std::max(0.0f, image_row[i]));
        unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0f));
        f.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

std::vector<std::string> export_neighbor_panel(const DknnModel& model, const Dataset& train,
                                               const TensorF& image, int k_show,
                                               const std::string& out_prefix) {
    model.validate();
    if (k_show < 1 || k_show > model.k)
        throw ContractError("k_show must be in [1, k], got " + std::to_string(k_show));

    const std::size_t h = train.height(), w = train.width();
    Dataset probe;
    probe.images = image;
    probe.labels = {0};
    probe.class_count = model.class_count();

    std::vector<std::string> written;
    std::ofstream csv(out_prefix + "-index.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot open '" + out_prefix + "-index.csv' for writing");
    csv << "layer,rank,train_index,label,distance\n";

    for (int li = 0; li < model.layer_count(); ++li) {
        const FeatureDatabase& db = model.db(li);
        TensorF feat = extract_features(model.net, probe, db.layer);
        auto hits = knn_query(db, feat.data(), model.k);

        // Strip layout: the query image, then k_show nearest training images.
        TensorF strip({h, w * (static_cast<std::size_t>(k_show) + 1)});
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                strip[y * strip.dim(1) + x] = image[y * w + x];
        for (int r = 0; r < k_show; ++r) {
            const std::size_t idx = hits[r].index;
            csv << db.layer << ',' << r << ',' << idx << ',' << train.labels[idx] << ','
                << hits[r].distance << '\n';
            const float* src = train.images.data() + idx * h * w;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    strip[y * strip.dim(1) + (r + 1) * w + x] = src[y * w + x];
        }
        std::string path = out_prefix + "-l" + std::to_string(db.layer) + ".pgm";
        write_pgm(strip, h, strip.dim(1), path);
        written.push_back(path);
    }
    return written;
}

void write_reports_csv(const std::vector<MetricsReport>& reports, const std::string& path,
                       const std::string& config_echo) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << config_echo;
    f << MetricsReport::csv_header() << '\n';
    for (const auto& r : reports) f << r.csv_row() << '\n';
}

void write_tradeoff_csv(const std::vector<TradeoffPoint>& points, const std::string& path,
                        const std::string& config_echo) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << config_echo;
    f << "threshold,detected_adversarial,rejected_clean\n";
    for (const auto& p : points)
        f << p.threshold << ',' << p.detected_adversarial << ',' << p.rejected_clean << '\n';
}

} // namespace advknn
