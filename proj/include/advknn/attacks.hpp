#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advknn/dataio.hpp"
#include "advknn/dknn.hpp"
#include "advknn/network.hpp"
#include "advknn/surrogate.hpp"

namespace advknn {

enum class AttackKind : std::uint8_t { Fgsm, Bim };
enum class Guidance : std::uint8_t { Origin, Dknnb, DknnbCl };

const char* attack_kind_name(AttackKind k);
const char* guidance_name(Guidance g);
AttackKind attack_kind_from(const std::string& s);
Guidance guidance_from(const std::string& s);

struct AttackConfig {
    AttackKind kind = AttackKind::Fgsm;
    double epsilon = 0.25; // L-inf budget in pixel units
    double alpha = 0.01;   // BIM step size
    int steps = 100;       // BIM iteration count
    Guidance guidance = Guidance::DknnbCl;
    int layer = 3;

    void validate() const;
};

/// One attacked sample: images, distortion norms, and the classifier
/// verdicts before and after. x' stays in [0,1] with ||x'-x||inf <= eps.
struct AdversarialRecord {
    std::int32_t true_label = 0;
    float l2 = 0.0f;
    float linf = 0.0f;
    std::int32_t dnn_before = 0, dnn_after = 0;
    std::int32_t knn_before = 0, knn_after = 0;
    std::int32_t dknn_before = 0, dknn_after = 0;
    float credibility = 0.0f; // of x'
};

/// A batch of records plus the image payloads, kept columnar so the whole
/// set round-trips through one container.
struct AdversarialBatch {
    AttackConfig config;
    std::uint64_t network_fingerprint = 0;
    TensorF originals;    // [n,1,H,W]
    TensorF adversarials; // [n,1,H,W]
    std::vector<AdversarialRecord> records;

    std::size_t size() const { return records.size(); }
};

/// Clean-side verdicts reused as the "before" half of every record (and as
/// the clean credibility population for detection curves).
struct CleanEval {
    std::uint64_t network_fingerprint = 0;
    std::vector<std::int32_t> labels;
    std::vector<std::int32_t> dnn, knn, dknn;
    std::vector<float> credibility;
    std::vector<float> dknn_score; // predicted-class summed score

    std::size_t size() const { return labels.size(); }
};

/// x' = clip_[0,1](x + eps * sign(dloss/dx)), sign(0) := 0.
TensorF fgsm(const NetworkF& net, const LossHead& head, const TensorF& x,
             const std::vector<std::int32_t>& y, double epsilon);

/// Iterated steps of size alpha, each followed by a [0,1] clip and a
/// projection into the eps-ball around the original x.
TensorF bim(const NetworkF& net, const LossHead& head, const TensorF& x,
            const std::vector<std::int32_t>& y, double epsilon, double alpha, int steps);

/// Evaluates the clean population once: DNN/kNN/DkNN predictions plus
/// credibility per sample.
CleanEval evaluate_clean(const DknnModel& model, const CalibrationTable& table,
                         const Dataset& population);

/// Runs the configured attack over the population and fills records
/// completely (kNN/DkNN verdicts and credibility included). `head` may be
/// null only for origin guidance. Samples are attacked in deterministic
/// chunks and merged in input order.
AdversarialBatch run_attack(const DknnModel& model, const CalibrationTable& table,
                            const SurrogateHead* head, const Dataset& population,
                            const AttackConfig& cfg, const CleanEval* clean = nullptr,
                            std::size_t chunk_size = 64);

void save_records(const AdversarialBatch& batch, const std::string& path);
AdversarialBatch load_records(const std::string& path);
/// CSV sidecar: one row per sample with norms, verdicts and credibility.
void write_records_csv(const AdversarialBatch& batch, const std::string& path,
                       const std::string& config_echo);

void save_cleaneval(const CleanEval& ce, const std::string& path);
CleanEval load_cleaneval(const std::string& path, std::uint64_t expect_fingerprint = 0);

} // namespace advknn
