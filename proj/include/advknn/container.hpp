#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advknn/tensor.hpp"

namespace advknn {

/// Shared on-disk container: a text header (format version, kind, metadata,
/// tensor manifest with shapes and byte offsets) followed by length-prefixed
/// little-endian blobs and a trailing CRC32 over everything before it.
///
/// Blob dtypes: f32 (default), f64 (calibration scores), i32 (labels).
///
///   AKNN1 <kind>
///   meta <key> = <value>
///   blob <name> dtype=<f32|f64|i32> shape=<a,b,...> offset=<bytes>
///   end
///   [u64le count, payload]...
///   u32le crc32
class Container {
public:
    std::string kind;
    std::map<std::string, std::string> meta;

    void add_f32(const std::string& name, const std::vector<std::size_t>& shape,
                 const std::vector<float>& data);
    void add_f64(const std::string& name, const std::vector<std::size_t>& shape,
                 const std::vector<double>& data);
    void add_i32(const std::string& name, const std::vector<std::size_t>& shape,
                 const std::vector<std::int32_t>& data);

    bool has(const std::string& name) const;
    const std::vector<std::size_t>& shape(const std::string& name) const;
    const std::vector<float>& f32(const std::string& name) const;
    const std::vector<double>& f64(const std::string& name) const;
    const std::vector<std::int32_t>& i32(const std::string& name) const;

    std::string meta_at(const std::string& key) const;
    std::uint64_t meta_u64(const std::string& key) const;

    void save(const std::string& path) const;
    static Container load(const std::string& path);

    /// Serialized bytes (identical to the file contents).
    std::vector<std::uint8_t> serialize() const;

private:
    struct Blob {
        std::string name;
        std::string dtype;
        std::vector<std::size_t> shape;
        std::vector<float> f32;
        std::vector<double> f64;
        std::vector<std::int32_t> i32;
    };
    const Blob& find(const std::string& name, const char* dtype) const;
    std::vector<Blob> blobs_;
};

std::uint32_t crc32_ieee(const void* data, std::size_t n, std::uint32_t seed = 0);

} // namespace advknn
