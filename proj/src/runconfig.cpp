#include "advknn/runconfig.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "advknn/errors.hpp"
#include "advknn/rng.hpp"

namespace advknn {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::uint64_t file_identity(const std::string& path) {
    std::error_code ec;
    auto size = std::filesystem::file_size(path, ec);
    if (ec) return fnv1a(path);
    return fnv1a(path + "|" + std::to_string(size));
}

} // namespace

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void RunConfig::apply_kv(const std::string& key, const std::string& value,
                         const std::string& where) {
    try {
        if (key == "data_dir") data_dir = value;
        else if (key == "out_dir") out_dir = value;
        else if (key == "arch") arch = value;
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "k") k = std::stoi(value);
        else if (key == "layer") layer = std::stoi(value);
        else if (key == "per_class") per_class = std::stoi(value);
        else if (key == "metric") metric = value;
        else if (key == "epochs") epochs = std::stoi(value);
        else if (key == "learning_rate") learning_rate = std::stod(value);
        else if (key == "momentum") momentum = std::stod(value);
        else if (key == "batch_size") batch_size = std::stoi(value);
        else if (key == "lambda") lambda = std::stod(value);
        else if (key == "surrogate_epochs") surrogate_epochs = std::stoi(value);
        else if (key == "surrogate_learning_rate") surrogate_learning_rate = std::stod(value);
        else if (key == "surrogate_batch_size") surrogate_batch_size = std::stoi(value);
        else if (key == "surrogate_samples") surrogate_samples = std::stoull(value);
        else if (key == "attack") attack = value;
        else if (key == "guidance") guidance = value;
        else if (key == "epsilon") epsilon = std::stod(value);
        else if (key == "alpha") alpha = std::stod(value);
        else if (key == "steps") steps = std::stoi(value);
        else if (key == "attack_count") attack_count = std::stoull(value);
        else if (key == "eval_count") eval_count = std::stoull(value);
        else if (key == "workers") workers = std::stoi(value);
        else throw ConfigError("unknown config key '" + key + "' (" + where + ")");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("bad value '" + value + "' for key '" + key + "' (" + where + ")");
    }
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::string where = path + ":" + std::to_string(lineno);
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config parse error at " + where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config parse error at " + where + ": empty key");
        apply_kv(key, value, where);
    }
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "data_dir = " << data_dir << '\n'
       << "out_dir = " << out_dir << '\n'
       << "arch = " << arch << '\n'
       << "seed = " << seed << '\n'
       << "k = " << k << '\n'
       << "layer = " << layer << '\n'
       << "per_class = " << per_class << '\n'
       << "metric = " << metric << '\n'
       << "epochs = " << epochs << '\n'
       << "learning_rate = " << learning_rate << '\n'
       << "momentum = " << momentum << '\n'
       << "batch_size = " << batch_size << '\n'
       << "lambda = " << lambda << '\n'
       << "surrogate_epochs = " << surrogate_epochs << '\n'
       << "surrogate_learning_rate = " << surrogate_learning_rate << '\n'
       << "surrogate_batch_size = " << surrogate_batch_size << '\n'
       << "surrogate_samples = " << surrogate_samples << '\n'
       << "attack = " << attack << '\n'
       << "guidance = " << guidance << '\n'
       << "epsilon = " << epsilon << '\n'
       << "alpha = " << alpha << '\n'
       << "steps = " << steps << '\n'
       << "attack_count = " << attack_count << '\n'
       << "eval_count = " << eval_count << '\n';
    return os.str();
}

std::string RunConfig::csv_echo() const {
    std::istringstream is(to_text());
    std::ostringstream os;
    std::string line;
    while (std::getline(is, line)) os << "# " << line << '\n';
    return os.str();
}

std::uint64_t RunConfig::dataset_fingerprint() const {
    std::uint64_t h = file_identity(train_images_path());
    h ^= file_identity(train_labels_path()) * 0x9e3779b97f4a7c15ull;
    h ^= file_identity(test_images_path()) + 0x517cc1b727220a95ull;
    h ^= file_identity(test_labels_path()) * 0xbf58476d1ce4e5b9ull;
    return h;
}

std::uint64_t RunConfig::train_fingerprint() const {
    std::ostringstream os;
    os << "train|" << hex16(dataset_fingerprint()) << '|' << arch << '|' << seed << '|' << epochs
       << '|' << learning_rate << '|' << momentum << '|' << batch_size;
    return fnv1a(os.str());
}

std::uint64_t RunConfig::db_fingerprint(int db_layer) const {
    return fnv1a("db|" + hex16(train_fingerprint()) + "|" + std::to_string(db_layer) + "|" +
                 metric);
}

std::uint64_t RunConfig::calibration_fingerprint() const {
    return fnv1a("calib|" + hex16(train_fingerprint()) + "|" + std::to_string(k) + "|" +
                 std::to_string(per_class) + "|" + std::to_string(seed) + "|" + metric);
}

std::uint64_t RunConfig::targets_fingerprint() const {
    return fnv1a("targets|" + hex16(db_fingerprint(layer)) + "|" + std::to_string(k) + "|" +
                 std::to_string(surrogate_samples));
}

std::uint64_t RunConfig::head_fingerprint(bool use_cl) const {
    std::ostringstream os;
    os << "head|" << hex16(targets_fingerprint()) << '|' << (use_cl ? "cl" : "cls") << '|'
       << lambda << '|' << surrogate_epochs << '|' << surrogate_learning_rate << '|'
       << surrogate_batch_size << '|' << seed;
    return fnv1a(os.str());
}

std::uint64_t RunConfig::cleaneval_fingerprint() const {
    return fnv1a("cleaneval|" + hex16(calibration_fingerprint()) + "|" +
                 std::to_string(attack_count));
}

std::uint64_t RunConfig::records_fingerprint() const {
    std::ostringstream os;
    os << "records|" << hex16(calibration_fingerprint()) << '|' << attack << '|' << guidance
       << '|' << epsilon << '|' << alpha << '|' << steps << '|' << layer << '|' << attack_count;
    if (guidance != "origin") os << '|' << hex16(head_fingerprint(guidance != "dknnb"));
    return fnv1a(os.str());
}

std::string RunConfig::checkpoint_path() const {
    return out_dir + "/" + arch + "-" + hex16(train_fingerprint()) + ".net";
}
std::string RunConfig::db_path(int db_layer) const {
    return out_dir + "/db-" + arch + "-l" + std::to_string(db_layer) + "-" +
           hex16(db_fingerprint(db_layer)) + ".fdb";
}
std::string RunConfig::calibration_path() const {
    return out_dir + "/calib-" + arch + "-" + hex16(calibration_fingerprint()) + ".cal";
}
std::string RunConfig::targets_path() const {
    return out_dir + "/targets-" + arch + "-l" + std::to_string(layer) + "-" +
           hex16(targets_fingerprint()) + ".tgt";
}
std::string RunConfig::head_path(bool use_cl) const {
    return out_dir + "/head-" + arch + "-l" + std::to_string(layer) + "-" +
           (use_cl ? "dknnb-cl" : "dknnb") + "-" + hex16(head_fingerprint(use_cl)) + ".head";
}
std::string RunConfig::cleaneval_path() const {
    return out_dir + "/cleaneval-" + arch + "-" + hex16(cleaneval_fingerprint()) + ".ce";
}
std::string RunConfig::records_path() const {
    return out_dir + "/records-" + attack + "-" + guidance + "-" +
           hex16(records_fingerprint()) + ".adv";
}
std::string RunConfig::records_csv_path() const {
    return out_dir + "/records-" + attack + "-" + guidance + "-" +
           hex16(records_fingerprint()) + ".csv";
}

SplitSet load_splits(const RunConfig& cfg) {
    Dataset train = load_idx(cfg.train_images_path(), cfg.train_labels_path());
    Dataset test = load_idx(cfg.test_images_path(), cfg.test_labels_path());
    SplitSet splits = holdout_calibration(test, cfg.per_class, cfg.seed);
    splits.train = std::move(train);
    return splits;
}

namespace {
Dataset take_first(const Dataset& ds, std::uint64_t count) {
    if (count == 0 || count >= ds.size()) return ds;
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    return ds.subset(idx);
}
} // namespace

Dataset attack_population(const RunConfig& cfg, const Dataset& heldout_test) {
    return take_first(heldout_test, cfg.attack_count);
}

Dataset eval_population(const RunConfig& cfg, const Dataset& heldout_test) {
    return take_first(heldout_test, cfg.eval_count);
}

void emit_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    namespace fs = std::filesystem;
    if (fs::exists(path)) {
        std::ifstream f(path, std::ios::binary);
        std::vector<std::uint8_t> old((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
        if (old == bytes) return; // idempotent rerun
        throw IoError("artifact '" + path +
                      "' already exists with different content; outputs are write-once "
                      "per fingerprint");
    }
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void emit_file(const std::string& path, const std::string& bytes) {
    emit_file(path, std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

void require_artifact(const std::string& path, const std::string& producer) {
    if (!std::filesystem::exists(path))
        throw DependencyError("missing artifact '" + path + "' — run `" + producer + "` first");
}

} // namespace advknn
