#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advknn/dataio.hpp"

namespace advknn {

/// One experiment's reproducible knobs. Every emitted artifact embeds the
/// fingerprint of the config subset that defines it, so reruns are
/// idempotent and stale artifacts are never silently reused.
struct RunConfig {
    // dataset
    std::string data_dir = "data/mnist";
    std::string out_dir = "out";
    std::string arch = "base";
    std::uint64_t seed = 0;

    // kNN / DkNN
    int k = 75;
    int layer = 3;
    int per_class = 75;
    std::string metric = "euclidean";

    // base training
    int epochs = 10;
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 64;

    // surrogate training
    double lambda = 0.3;
    int surrogate_epochs = 5;
    double surrogate_learning_rate = 0.1;
    int surrogate_batch_size = 128;
    std::uint64_t surrogate_samples = 0; // 0 = all training rows

    // attack
    std::string attack = "bim";
    std::string guidance = "dknnb-cl";
    double epsilon = 0.25;
    double alpha = 0.01;
    int steps = 100;
    std::uint64_t attack_count = 0; // 0 = full remaining test set

    // evaluation
    std::uint64_t eval_count = 0; // 0 = full remaining test set

    int workers = 0; // 0 = hardware concurrency

    /// Applies `key = value` lines (with # comments). Throws ConfigError
    /// naming the line on parse failures or unknown keys.
    void apply_file(const std::string& path);
    void apply_kv(const std::string& key, const std::string& value, const std::string& where);

    /// Canonical `key = value` listing (the exact-config echo for outputs).
    std::string to_text() const;
    /// Canonical echo as CSV comment lines.
    std::string csv_echo() const;

    std::string train_images_path() const { return data_dir + "/train-images-idx3-ubyte"; }
    std::string train_labels_path() const { return data_dir + "/train-labels-idx1-ubyte"; }
    std::string test_images_path() const { return data_dir + "/t10k-images-idx3-ubyte"; }
    std::string test_labels_path() const { return data_dir + "/t10k-labels-idx1-ubyte"; }

    // Fingerprints chain: downstream artifacts incorporate their upstream
    // dependencies, so any config change invalidates exactly the right files.
    std::uint64_t dataset_fingerprint() const;
    std::uint64_t train_fingerprint() const;
    std::uint64_t db_fingerprint(int db_layer) const;
    std::uint64_t calibration_fingerprint() const;
    std::uint64_t targets_fingerprint() const;
    std::uint64_t head_fingerprint(bool use_cl) const;
    std::uint64_t cleaneval_fingerprint() const;
    std::uint64_t records_fingerprint() const;

    std::string checkpoint_path() const;
    std::string db_path(int db_layer) const;
    std::string calibration_path() const;
    std::string targets_path() const;
    std::string head_path(bool use_cl) const;
    std::string cleaneval_path() const;
    std::string records_path() const;
    std::string records_csv_path() const;
};

/// Loads the IDX pair for the configured dataset and carves the calibration
/// split. `splits.train` is filled from the training pair.
SplitSet load_splits(const RunConfig& cfg);

/// First `attack_count` samples (0 = all) of the post-holdout test split.
Dataset attack_population(const RunConfig& cfg, const Dataset& heldout_test);
Dataset eval_population(const RunConfig& cfg, const Dataset& heldout_test);

/// Write-once emit: refuses to change an existing artifact's bytes, and is
/// a no-op when the bytes are identical.
void emit_file(const std::string& path, const std::string& bytes);
void emit_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

/// Throws DependencyError naming the artifact and the producing command.
void require_artifact(const std::string& path, const std::string& producer);

std::string hex16(std::uint64_t v);

} // namespace advknn
