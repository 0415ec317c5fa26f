#include "advknn/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "advknn/container.hpp"
#include "advknn/errors.hpp"
#include "advknn/parallel.hpp"

namespace advknn {

const char* attack_kind_name(AttackKind k) { return k == AttackKind::Fgsm ? "fgsm" : "bim"; }

const char* guidance_name(Guidance g) {
    switch (g) {
        case Guidance::Origin: return "origin";
        case Guidance::Dknnb: return "dknnb";
        case Guidance::DknnbCl: return "dknnb-cl";
    }
    return "?";
}

AttackKind attack_kind_from(const std::string& s) {
    if (s == "fgsm") return AttackKind::Fgsm;
    if (s == "bim") return AttackKind::Bim;
    throw ConfigError("unknown attack kind '" + s + "' (expected fgsm or bim)");
}

Guidance guidance_from(const std::string& s) {
    if (s == "origin") return Guidance::Origin;
    if (s == "dknnb") return Guidance::Dknnb;
    if (s == "dknnb-cl" || s == "dknnb+cl") return Guidance::DknnbCl;
    throw ConfigError("unknown guidance '" + s + "' (expected origin, dknnb or dknnb-cl)");
}

void AttackConfig::validate() const {
    if (epsilon < 0.0 || epsilon > 1.0)
        throw ConfigError("epsilon must be in [0,1], got " + std::to_string(epsilon));
    if (kind == AttackKind::Bim) {
        if (alpha < 0.0 || alpha > epsilon)
            throw ConfigError("alpha must satisfy 0 <= alpha <= epsilon, got alpha=" +
                              std::to_string(alpha) + " epsilon=" + std::to_string(epsilon));
        if (steps < 1) throw ConfigError("steps must be >= 1");
    }
}

namespace {

inline float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

TensorF fgsm_step(const NetworkF& net, const LossHead& head, const TensorF& x,
                  const std::vector<std::int32_t>& y, double magnitude) {
    TensorF grad = net.input_gradient(head, x, y);
    TensorF out = x;
    const float eps = static_cast<float>(magnitude);
    for (std::size_t i = 0; i < out.size(); ++i) {
        float v = out[i] + eps * sign_of(grad[i]);
        out[i] = std::min(1.0f, std::max(0.0f, v));
    }
    return out;
}

} // namespace

TensorF fgsm(const NetworkF& net, const LossHead& head, const TensorF& x,
             const std::vector<std::int32_t>& y, double epsilon) {
    if (epsilon < 0.0) throw ContractError("epsilon must be nonnegative");
    return fgsm_step(net, head, x, y, epsilon);
}

TensorF bim(const NetworkF& net, const LossHead& head, const TensorF& x,
            const std::vector<std::int32_t>& y, double epsilon, double alpha, int steps) {
    if (epsilon < 0.0 || alpha < 0.0 || alpha > epsilon || steps < 1)
        throw ContractError("bim: need 0 <= alpha <= epsilon and steps >= 1");
    const float eps = static_cast<float>(epsilon);
    TensorF cur = x;
    for (int s = 0; s < steps; ++s) {
        cur = fgsm_step(net, head, cur, y, alpha);
        // Project back into the eps-ball around the original image.
        for (std::size_t i = 0; i < cur.size(); ++i) {
            float lo = x[i] - eps, hi = x[i] + eps;
            cur[i] = std::min(hi, std::max(lo, cur[i]));
        }
    }
    return cur;
}

CleanEval evaluate_clean(const DknnModel& model, const CalibrationTable& table,
                         const Dataset& population) {
    model.validate();
    if (population.size() == 0) throw ContractError("empty evaluation population");

    CleanEval out;
    out.network_fingerprint = model.net.fingerprint();
    out.labels = population.labels;
    out.dnn.resize(population.size());
    out.knn.resize(population.size());
    out.dknn.resize(population.size());
    out.credibility.resize(population.size());
    out.dknn_score.resize(population.size());

    auto preds = model.net.predict_chunked(population.images);
    for (std::size_t i = 0; i < preds.size(); ++i) out.dnn[i] = preds[i];

    // The plain kNN verdict is the vote on the model's knn_layer database;
    // it falls out of the same per-layer histograms the ensemble sums.
    const std::size_t knn_idx = static_cast<std::size_t>(model.knn_db_index());
    auto scores = dknn_scores_batch(model, population);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out.knn[i] = scores[i].layer_label(knn_idx);
        out.dknn[i] = scores[i].label;
        out.dknn_score[i] = static_cast<float>(scores[i].predicted_score());
        out.credibility[i] =
            static_cast<float>(credibility_from_score(table, scores[i].predicted_score()));
    }
    return out;
}

AdversarialBatch run_attack(const DknnModel& model, const CalibrationTable& table,
                            const SurrogateHead* head, const Dataset& population,
                            const AttackConfig& cfg, const CleanEval* clean,
                            std::size_t chunk_size) {
    cfg.validate();
    model.validate();
    if (population.size() == 0) throw ContractError("empty attack population");
    if (cfg.guidance != Guidance::Origin) {
        if (!head) throw DependencyError("guidance " + std::string(guidance_name(cfg.guidance)) +
                                         " needs a trained surrogate head");
        if (head->db_fingerprint != model.net.fingerprint())
            throw FingerprintError("surrogate head was trained against a different network");
        if (head->layer != cfg.layer)
            throw ConfigError("surrogate head sits on layer " + std::to_string(head->layer) +
                              ", attack config says " + std::to_string(cfg.layer));
    }

    LossHead loss_head;
    if (cfg.guidance == Guidance::Origin) {
        loss_head.kind = LossHead::Kind::CrossEntropyLogits;
    } else {
        loss_head = head->loss_head();
    }

    AdversarialBatch batch;
    batch.config = cfg;
    batch.network_fingerprint = model.net.fingerprint();
    batch.originals = population.images;
    batch.adversarials = TensorF(population.images.shape());
    batch.records.resize(population.size());

    const std::size_t n = population.size();
    const std::size_t px = population.images.size() / n;
    const std::size_t nchunks = (n + chunk_size - 1) / chunk_size;
    parallel_for(nchunks, [&](std::size_t cb, std::size_t ce) {
        for (std::size_t chunk = cb; chunk < ce; ++chunk) {
            std::size_t begin = chunk * chunk_size;
            std::size_t end = std::min(n, begin + chunk_size);
            std::size_t m = end - begin;
            TensorF xb({m, population.images.dim(1), population.images.dim(2),
                        population.images.dim(3)});
            std::memcpy(xb.data(), population.images.data() + begin * px,
                        m * px * sizeof(float));
            std::vector<std::int32_t> yb(population.labels.begin() + begin,
                                         population.labels.begin() + end);
            TensorF adv = cfg.kind == AttackKind::Fgsm
                              ? fgsm(model.net, loss_head, xb, yb, cfg.epsilon)
                              : bim(model.net, loss_head, xb, yb, cfg.epsilon, cfg.alpha,
                                    cfg.steps);
            std::memcpy(batch.adversarials.data() + begin * px, adv.data(),
                        m * px * sizeof(float));
        }
    });

    // Verdicts on the adversarial images (and on the originals when no
    // precomputed clean evaluation was supplied).
    Dataset adv_ds;
    adv_ds.images = batch.adversarials;
    adv_ds.labels = population.labels;
    adv_ds.class_count = population.class_count;

    CleanEval before;
    if (clean) {
        if (clean->size() != n)
            throw ContractError("clean evaluation covers " + std::to_string(clean->size()) +
                                " samples, population has " + std::to_string(n));
        if (clean->network_fingerprint != model.net.fingerprint())
            throw FingerprintError("clean evaluation was produced by a different network");
        before = *clean;
    } else {
        before = evaluate_clean(model, table, population);
    }
    CleanEval after = evaluate_clean(model, table, adv_ds);

    for (std::size_t i = 0; i < n; ++i) {
        AdversarialRecord& r = batch.records[i];
        r.true_label = population.labels[i];
        double l2 = 0.0;
        float linf = 0.0f;
        for (std::size_t j = 0; j < px; ++j) {
            float dlt = batch.adversarials[i * px + j] - batch.originals[i * px + j];
            l2 += double(dlt) * double(dlt);
            linf = std::max(linf, std::abs(dlt));
        }
        r.l2 = static_cast<float>(std::sqrt(l2));
        r.linf = linf;
        r.dnn_before = before.dnn[i];
        r.knn_before = before.knn[i];
        r.dknn_before = before.dknn[i];
        r.dnn_after = after.dnn[i];
        r.knn_after = after.knn[i];
        r.dknn_after = after.dknn[i];
        r.credibility = after.credibility[i];
        if (r.linf > cfg.epsilon + 1e-6f)
            throw NumericError("record " + std::to_string(i) + " violates the L-inf budget");
    }
    return batch;
}

void save_records(const AdversarialBatch& batch, const std::string& path) {
    Container c;
    c.kind = "adversarial-records";
    c.meta["attack"] = attack_kind_name(batch.config.kind);
    c.meta["guidance"] = guidance_name(batch.config.guidance);
    c.meta["epsilon"] = std::to_string(batch.config.epsilon);
    c.meta["alpha"] = std::to_string(batch.config.alpha);
    c.meta["steps"] = std::to_string(batch.config.steps);
    c.meta["layer"] = std::to_string(batch.config.layer);
    c.meta["network_fingerprint"] = std::to_string(batch.network_fingerprint);
    c.add_f32("originals", batch.originals.shape(), batch.originals.values());
    c.add_f32("adversarials", batch.adversarials.shape(), batch.adversarials.values());

    const std::size_t n = batch.size();
    std::vector<std::int32_t> ints;
    ints.reserve(n * 7);
    std::vector<float> floats;
    floats.reserve(n * 3);
    for (const auto& r : batch.records) {
        ints.push_back(r.true_label);
        ints.push_back(r.dnn_before);
        ints.push_back(r.dnn_after);
        ints.push_back(r.knn_before);
        ints.push_back(r.knn_after);
        ints.push_back(r.dknn_before);
        ints.push_back(r.dknn_after);
        floats.push_back(r.l2);
        floats.push_back(r.linf);
        floats.push_back(r.credibility);
    }
    c.add_i32("verdicts", {n, 7}, ints);
    c.add_f32("norms", {n, 3}, floats);
    c.save(path);
}

AdversarialBatch load_records(const std::string& path) {
    Container c = Container::load(path);
    if (c.kind != "adversarial-records")
        throw FormatError("'" + path + "' is a " + c.kind + ", not an adversarial record batch");
    AdversarialBatch b;
    b.config.kind = attack_kind_from(c.meta_at("attack"));
    b.config.guidance = guidance_from(c.meta_at("guidance"));
    b.config.epsilon = std::stod(c.meta_at("epsilon"));
    b.config.alpha = std::stod(c.meta_at("alpha"));
    b.config.steps = static_cast<int>(c.meta_u64("steps"));
    b.config.layer = static_cast<int>(c.meta_u64("layer"));
    b.network_fingerprint = c.meta_u64("network_fingerprint");
    b.originals = TensorF(c.shape("originals"), c.f32("originals"));
    b.adversarials = TensorF(c.shape("adversarials"), c.f32("adversarials"));
    const auto& ints = c.i32("verdicts");
    const auto& floats = c.f32("norms");
    const std::size_t n = c.shape("verdicts")[0];
    b.records.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        AdversarialRecord& r = b.records[i];
        r.true_label = ints[i * 7 + 0];
        r.dnn_before = ints[i * 7 + 1];
        r.dnn_after = ints[i * 7 + 2];
        r.knn_before = ints[i * 7 + 3];
        r.knn_after = ints[i * 7 + 4];
        r.dknn_before = ints[i * 7 + 5];
        r.dknn_after = ints[i * 7 + 6];
        r.l2 = floats[i * 3 + 0];
        r.linf = floats[i * 3 + 1];
        r.credibility = floats[i * 3 + 2];
    }
    return b;
}

void save_cleaneval(const CleanEval& ce, const std::string& path) {
    Container c;
    c.kind = "clean-eval";
    c.meta["network_fingerprint"] = std::to_string(ce.network_fingerprint);
    c.add_i32("labels", {ce.size()}, ce.labels);
    c.add_i32("dnn", {ce.size()}, ce.dnn);
    c.add_i32("knn", {ce.size()}, ce.knn);
    c.add_i32("dknn", {ce.size()}, ce.dknn);
    c.add_f32("credibility", {ce.size()}, ce.credibility);
    c.add_f32("dknn_score", {ce.size()}, ce.dknn_score);
    c.save(path);
}

CleanEval load_cleaneval(const std::string& path, std::uint64_t expect_fingerprint) {
    Container c = Container::load(path);
    if (c.kind != "clean-eval")
        throw FormatError("'" + path + "' is a " + c.kind + ", not a clean evaluation");
    CleanEval ce;
    ce.network_fingerprint = c.meta_u64("network_fingerprint");
    if (expect_fingerprint != 0 && ce.network_fingerprint != expect_fingerprint)
        throw FingerprintError("clean evaluation '" + path +
                               "' was produced by a different network");
    ce.labels = c.i32("labels");
    ce.dnn = c.i32("dnn");
    ce.knn = c.i32("knn");
    ce.dknn = c.i32("dknn");
    ce.credibility = c.f32("credibility");
    ce.dknn_score = c.f32("dknn_score");
    return ce;
}

void write_records_csv(const AdversarialBatch& batch, const std::string& path,
                       const std::string& config_echo) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << config_echo;
    f << "index,true_label,dnn_before,dnn_after,knn_before,knn_after,dknn_before,dknn_after,"
         "l2,linf,credibility\n";
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& r = batch.records[i];
        f << i << ',' << r.true_label << ',' << r.dnn_before << ',' << r.dnn_after << ','
          << r.knn_before << ',' << r.knn_after << ',' << r.dknn_before << ',' << r.dknn_after
          << ',' << r.l2 << ',' << r.linf << ',' << r.credibility << '\n';
    }
}

} // namespace advknn
