#include "advknn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "advknn/errors.hpp"
#include "advknn/rng.hpp"

namespace advknn {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw TruncationError("IDX file '" + path + "' ends inside its header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be32(std::ostream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<std::uint8_t> read_payload(std::istream& f, std::size_t expected,
                                       const std::string& path) {
    std::vector<std::uint8_t> out(expected);
    f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expected));
    if (static_cast<std::size_t>(f.gcount()) != expected)
        throw TruncationError("IDX file '" + path + "' payload is " +
                              std::to_string(f.gcount()) + " bytes, header promises " +
                              std::to_string(expected));
    return out;
}

} // namespace

TensorF Dataset::image(std::size_t i) const {
    const std::size_t px = images.dim(1) * images.dim(2) * images.dim(3);
    TensorF out({1, images.dim(1), images.dim(2), images.dim(3)});
    std::memcpy(out.data(), images.data() + i * px, px * sizeof(float));
    return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& index_list) const {
    const std::size_t px = images.dim(1) * images.dim(2) * images.dim(3);
    Dataset out;
    out.class_count = class_count;
    out.images = TensorF({std::max<std::size_t>(index_list.size(), 1), images.dim(1),
                          images.dim(2), images.dim(3)});
    if (index_list.empty()) out.images = TensorF();
    out.labels.reserve(index_list.size());
    for (std::size_t row = 0; row < index_list.size(); ++row) {
        std::size_t i = index_list[row];
        std::memcpy(out.images.data() + row * px, images.data() + i * px, px * sizeof(float));
        out.labels.push_back(labels[i]);
    }
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int class_count) {
    std::ifstream imf(images_path, std::ios::binary);
    if (!imf) throw IoError("cannot open IDX image file '" + images_path + "'");
    std::uint32_t magic = read_be32(imf, images_path);
    if (magic != kImageMagic)
        throw FormatError("'" + images_path + "' has magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", magic);
            return std::string(buf);
        }() + ", expected 0x00000803");
    std::uint32_t n = read_be32(imf, images_path);
    std::uint32_t h = read_be32(imf, images_path);
    std::uint32_t w = read_be32(imf, images_path);
    auto pixels = read_payload(imf, std::size_t(n) * h * w, images_path);

    std::ifstream lbf(labels_path, std::ios::binary);
    if (!lbf) throw IoError("cannot open IDX label file '" + labels_path + "'");
    std::uint32_t lmagic = read_be32(lbf, labels_path);
    if (lmagic != kLabelMagic)
        throw FormatError("'" + labels_path + "' has magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", lmagic);
            return std::string(buf);
        }() + ", expected 0x00000801");
    std::uint32_t ln = read_be32(lbf, labels_path);
    auto labels = read_payload(lbf, ln, labels_path);

    if (n != ln)
        throw PairingError("image count " + std::to_string(n) + " ('" + images_path +
                           "') does not match label count " + std::to_string(ln) + " ('" +
                           labels_path + "')");

    Dataset ds;
    ds.class_count = class_count;
    ds.images = TensorF({n, 1, h, w});
    for (std::size_t i = 0; i < pixels.size(); ++i)
        ds.images[i] = static_cast<float>(pixels[i]) / 255.0f;
    ds.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (labels[i] >= class_count)
            throw FormatError("label " + std::to_string(int(labels[i])) + " at row " +
                              std::to_string(i) + " is outside [0," +
                              std::to_string(class_count) + ")");
        ds.labels[i] = labels[i];
    }
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    std::ofstream imf(images_path, std::ios::binary | std::ios::trunc);
    if (!imf) throw IoError("cannot open '" + images_path + "' for writing");
    write_be32(imf, kImageMagic);
    write_be32(imf, static_cast<std::uint32_t>(ds.size()));
    write_be32(imf, static_cast<std::uint32_t>(ds.height()));
    write_be32(imf, static_cast<std::uint32_t>(ds.width()));
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        auto byte = static_cast<unsigned char>(std::lround(ds.images[i] * 255.0f));
        imf.write(reinterpret_cast<const char*>(&byte), 1);
    }

    std::ofstream lbf(labels_path, std::ios::binary | std::ios::trunc);
    if (!lbf) throw IoError("cannot open '" + labels_path + "' for writing");
    write_be32(lbf, kLabelMagic);
    write_be32(lbf, static_cast<std::uint32_t>(ds.size()));
    for (std::int32_t l : ds.labels) {
        auto byte = static_cast<unsigned char>(l);
        lbf.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

std::vector<std::size_t> calibration_indices(const Dataset& test, int per_class,
                                             std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(test.class_count);
    for (std::size_t i = 0; i < test.size(); ++i) by_class[test.labels[i]].push_back(i);

    auto rng = seeded_rng(seed, "calibration-holdout");
    std::vector<std::size_t> chosen;
    chosen.reserve(static_cast<std::size_t>(per_class) * test.class_count);
    for (int c = 0; c < test.class_count; ++c) {
        auto& pool = by_class[c];
        if (pool.size() < static_cast<std::size_t>(per_class))
            throw CoverageError("class " + std::to_string(c) + " has only " +
                                std::to_string(pool.size()) + " test samples, need " +
                                std::to_string(per_class));
        std::shuffle(pool.begin(), pool.end(), rng);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + per_class);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

SplitSet holdout_calibration(const Dataset& test, int per_class, std::uint64_t seed) {
    if (per_class < 0) throw ContractError("per_class must be nonnegative");
    SplitSet out;
    if (per_class == 0) {
        out.test = test;
        out.calibration.class_count = test.class_count;
        return out;
    }
    auto chosen = calibration_indices(test, per_class, seed);
    std::vector<char> held(test.size(), 0);
    for (std::size_t i : chosen) held[i] = 1;
    std::vector<std::size_t> rest;
    rest.reserve(test.size() - chosen.size());
    for (std::size_t i = 0; i < test.size(); ++i)
        if (!held[i]) rest.push_back(i);

    out.calibration = test.subset(chosen);
    out.test = test.subset(rest);
    return out;
}

} // namespace advknn
