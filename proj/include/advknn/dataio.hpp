#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advknn/tensor.hpp"

namespace advknn {

/// Labeled image set. Images are [n, 1, H, W] with every pixel in [0,1];
/// labels are in [0, C).
struct Dataset {
    TensorF images;
    std::vector<std::int32_t> labels;
    int class_count = 10;

    std::size_t size() const { return labels.size(); }
    std::size_t height() const { return images.dim(2); }
    std::size_t width() const { return images.dim(3); }

    /// Copy of sample i as a [1, 1, H, W] tensor.
    TensorF image(std::size_t i) const;
    /// Rows `index_list` gathered into a new dataset.
    Dataset subset(const std::vector<std::size_t>& index_list) const;
};

/// Train/test/calibration carve-up. Calibration is held out of the test
/// split before any evaluation.
struct SplitSet {
    Dataset train;
    Dataset test;
    Dataset calibration;
};

/// Reads an IDX image/label file pair: big-endian, magic 0x00000803 for
/// 3-D uint8 images and 0x00000801 for labels. Pixel bytes are divided by
/// 255 into [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int class_count = 10);

/// Serializes a dataset back to IDX bytes (pixels as round(v*255)).
/// Inverse of load_idx for any dataset that came from a file.
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

/// Draws `per_class` samples of every class from `test` uniformly at random
/// under `seed`; the remaining samples form the returned test split.
SplitSet holdout_calibration(const Dataset& test, int per_class = 75, std::uint64_t seed = 0);

/// The held-out calibration index set itself (ascending), for tests.
std::vector<std::size_t> calibration_indices(const Dataset& test, int per_class,
                                             std::uint64_t seed);

} // namespace advknn
