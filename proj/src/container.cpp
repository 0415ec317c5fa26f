#include "advknn/container.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "advknn/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container blobs are written as raw little-endian words");

namespace advknn {

std::uint32_t crc32_ieee(const void* data, std::size_t n, std::uint32_t seed) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed ^ 0xffffffffu;
    const std::uint8_t* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

namespace {

template <class T>
void append_raw(std::vector<std::uint8_t>& out, const T* p, std::size_t count) {
    std::size_t bytes = count * sizeof(T);
    std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, p, bytes);
}

void append_str(std::vector<std::uint8_t>& out, const std::string& s) {
    out.insert(out.end(), s.begin(), s.end());
}

std::string shape_to_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    return os.str();
}

std::vector<std::size_t> str_to_shape(const std::string& s) {
    std::vector<std::size_t> shape;
    std::istringstream is(s);
    std::string part;
    while (std::getline(is, part, ',')) shape.push_back(std::stoull(part));
    return shape;
}

} // namespace

void Container::add_f32(const std::string& name, const std::vector<std::size_t>& shape,
                        const std::vector<float>& data) {
    blobs_.push_back({name, "f32", shape, data, {}, {}});
}

void Container::add_f64(const std::string& name, const std::vector<std::size_t>& shape,
                        const std::vector<double>& data) {
    blobs_.push_back({name, "f64", shape, {}, data, {}});
}

void Container::add_i32(const std::string& name, const std::vector<std::size_t>& shape,
                        const std::vector<std::int32_t>& data) {
    blobs_.push_back({name, "i32", shape, {}, {}, data});
}

bool Container::has(const std::string& name) const {
    for (const Blob& b : blobs_)
        if (b.name == name) return true;
    return false;
}

const Container::Blob& Container::find(const std::string& name, const char* dtype) const {
    for (const Blob& b : blobs_) {
        if (b.name != name) continue;
        if (b.dtype != dtype)
            throw FormatError("container blob '" + name + "' has dtype " + b.dtype +
                              ", expected " + dtype);
        return b;
    }
    throw FormatError("container has no blob named '" + name + "'");
}

const std::vector<std::size_t>& Container::shape(const std::string& name) const {
    for (const Blob& b : blobs_)
        if (b.name == name) return b.shape;
    throw FormatError("container has no blob named '" + name + "'");
}

const std::vector<float>& Container::f32(const std::string& name) const {
    return find(name, "f32").f32;
}
const std::vector<double>& Container::f64(const std::string& name) const {
    return find(name, "f64").f64;
}
const std::vector<std::int32_t>& Container::i32(const std::string& name) const {
    return find(name, "i32").i32;
}

std::string Container::meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("container metadata is missing key '" + key + "'");
    return it->second;
}

std::uint64_t Container::meta_u64(const std::string& key) const {
    return std::stoull(meta_at(key), nullptr, 0);
}

std::vector<std::uint8_t> Container::serialize() const {
    std::ostringstream header;
    header << "AKNN1 " << kind << '\n';
    for (const auto& [k, v] : meta) header << "meta " << k << " = " << v << '\n';
    std::uint64_t offset = 0;
    for (const Blob& b : blobs_) {
        std::size_t elem = b.dtype == "f32" ? 4 : 8;
        std::size_t count = b.dtype == "f32"   ? b.f32.size()
                            : b.dtype == "f64" ? b.f64.size()
                                               : b.i32.size();
        if (b.dtype == "i32") elem = 4;
        if (count != Tensor<float>::count(b.shape) && !(count == 0 && b.shape.empty()))
            throw ShapeError("container blob '" + b.name + "' size mismatch");
        header << "blob " << b.name << " dtype=" << b.dtype << " shape=" << shape_to_str(b.shape)
               << " offset=" << offset << '\n';
        offset += 8 + count * elem;
    }
    header << "end\n";

    std::vector<std::uint8_t> out;
    out.reserve(header.str().size() + offset + 4);
    append_str(out, header.str());
    for (const Blob& b : blobs_) {
        std::uint64_t count = b.dtype == "f32"   ? b.f32.size()
                              : b.dtype == "f64" ? b.f64.size()
                                                 : b.i32.size();
        append_raw(out, &count, 1);
        if (b.dtype == "f32")
            append_raw(out, b.f32.data(), b.f32.size());
        else if (b.dtype == "f64")
            append_raw(out, b.f64.data(), b.f64.size());
        else
            append_raw(out, b.i32.data(), b.i32.size());
    }
    std::uint32_t crc = crc32_ieee(out.data(), out.size());
    append_raw(out, &crc, 1);
    return out;
}

void Container::save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to '" + path + "'");
}

Container Container::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 4) throw TruncationError("container '" + path + "' is truncated");

    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    std::uint32_t actual = crc32_ieee(bytes.data(), bytes.size() - 4);
    if (stored != actual)
        throw TruncationError("container '" + path + "' failed its checksum (stored " +
                              std::to_string(stored) + ", computed " + std::to_string(actual) +
                              ")");

    // Header ends at the first "end\n" line.
    const std::string end_marker = "\nend\n";
    std::string head(reinterpret_cast<const char*>(bytes.data()),
                     std::min<std::size_t>(bytes.size(), 1 << 20));
    std::size_t end_at = head.find(end_marker);
    if (end_at == std::string::npos) throw FormatError("container '" + path + "' has no header end");
    std::size_t body_at = end_at + end_marker.size();

    Container c;
    std::istringstream hs(head.substr(0, end_at + 1));
    std::string line;
    if (!std::getline(hs, line) || line.rfind("AKNN1 ", 0) != 0)
        throw FormatError("container '" + path + "' has a bad magic line");
    c.kind = line.substr(6);

    struct Entry {
        std::string name, dtype;
        std::vector<std::size_t> shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    while (std::getline(hs, line)) {
        if (line.rfind("meta ", 0) == 0) {
            std::size_t eq = line.find(" = ");
            if (eq == std::string::npos)
                throw FormatError("container '" + path + "' has a malformed meta line");
            c.meta[line.substr(5, eq - 5)] = line.substr(eq + 3);
        } else if (line.rfind("blob ", 0) == 0) {
            std::istringstream ls(line.substr(5));
            Entry e;
            std::string dtype_kv, shape_kv, offset_kv;
            ls >> e.name >> dtype_kv >> shape_kv >> offset_kv;
            if (dtype_kv.rfind("dtype=", 0) != 0 || shape_kv.rfind("shape=", 0) != 0 ||
                offset_kv.rfind("offset=", 0) != 0)
                throw FormatError("container '" + path + "' has a malformed blob line");
            e.dtype = dtype_kv.substr(6);
            e.shape = str_to_shape(shape_kv.substr(6));
            e.offset = std::stoull(offset_kv.substr(7));
            entries.push_back(std::move(e));
        } else if (!line.empty()) {
            throw FormatError("container '" + path + "' has an unknown header line: " + line);
        }
    }

    const std::size_t body_len = bytes.size() - 4 - body_at;
    for (const Entry& e : entries) {
        if (e.offset + 8 > body_len)
            throw TruncationError("container '" + path + "' blob '" + e.name +
                                  "' is out of bounds");
        std::uint64_t count;
        std::memcpy(&count, bytes.data() + body_at + e.offset, 8);
        std::size_t elem = e.dtype == "f64" ? 8 : 4;
        if (e.offset + 8 + count * elem > body_len)
            throw TruncationError("container '" + path + "' blob '" + e.name + "' is truncated");
        const std::uint8_t* payload = bytes.data() + body_at + e.offset + 8;
        Blob b;
        b.name = e.name;
        b.dtype = e.dtype;
        b.shape = e.shape;
        if (e.dtype == "f32") {
            b.f32.resize(count);
            std::memcpy(b.f32.data(), payload, count * 4);
        } else if (e.dtype == "f64") {
            b.f64.resize(count);
            std::memcpy(b.f64.data(), payload, count * 8);
        } else if (e.dtype == "i32") {
            b.i32.resize(count);
            std::memcpy(b.i32.data(), payload, count * 4);
        } else {
            throw FormatError("container '" + path + "' blob '" + e.name + "' has unknown dtype " +
                              e.dtype);
        }
        c.blobs_.push_back(std::move(b));
    }
    return c;
}

} // namespace advknn
