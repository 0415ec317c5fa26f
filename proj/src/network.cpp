#include "advknn/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "advknn/container.hpp"
#include "advknn/errors.hpp"
#include "advknn/parallel.hpp"
#include "advknn/rng.hpp"

namespace advknn {

namespace {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Affine: return "affine";
    }
    return "?";
}

LayerKind layer_kind_from(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "relu") return LayerKind::Relu;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "flatten") return LayerKind::Flatten;
    if (s == "affine") return LayerKind::Affine;
    throw FormatError("unknown layer kind '" + s + "'");
}

} // namespace

int NetworkConfig::capture_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.capture ? 1 : 0;
    return n;
}

int NetworkConfig::capture_layer(int l) const {
    int seen = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].capture && ++seen == l) return static_cast<int>(i);
    }
    throw ConfigError("capture point " + std::to_string(l) + " does not exist (network '" + name +
                      "' has " + std::to_string(capture_count()) + ")");
}

void NetworkConfig::validate() const {
    if (layers.empty()) throw ConfigError("network '" + name + "' has no layers");
    if (capture_count() < 1) throw ConfigError("network '" + name + "' has no capture points");
    if (layers.back().kind != LayerKind::Affine || layers.back().units != class_count)
        throw ConfigError("network '" + name + "' must end in an affine layer with " +
                          std::to_string(class_count) + " outputs");
}

std::string NetworkConfig::to_text() const {
    std::ostringstream os;
    os << name << ' ' << class_count << ' ' << in_channels << ' ' << in_height << ' ' << in_width;
    for (const auto& l : layers) {
        os << ' ' << layer_kind_name(l.kind) << ':' << l.units << ':' << l.kernel << ':'
           << (l.capture ? 1 : 0);
    }
    return os.str();
}

NetworkConfig NetworkConfig::from_text(const std::string& text) {
    std::istringstream is(text);
    NetworkConfig c;
    is >> c.name >> c.class_count >> c.in_channels >> c.in_height >> c.in_width;
    if (!is) throw FormatError("malformed network config line: " + text);
    std::string tok;
    while (is >> tok) {
        LayerSpec l;
        std::replace(tok.begin(), tok.end(), ':', ' ');
        std::istringstream ts(tok);
        std::string kind;
        int cap;
        ts >> kind >> l.units >> l.kernel >> cap;
        if (!ts) throw FormatError("malformed layer token in config line: " + text);
        l.kind = layer_kind_from(kind);
        l.capture = cap != 0;
        c.layers.push_back(l);
    }
    c.validate();
    return c;
}

NetworkConfig base_config(int class_count) {
    NetworkConfig c;
    c.name = "base";
    c.class_count = class_count;
    c.layers = {
        {LayerKind::Conv, 16, 3, false}, {LayerKind::Relu, 0, 0, false},
        {LayerKind::MaxPool, 0, 0, true},
        {LayerKind::Conv, 32, 3, false}, {LayerKind::Relu, 0, 0, false},
        {LayerKind::MaxPool, 0, 0, true},
        {LayerKind::Conv, 64, 3, false}, {LayerKind::Relu, 0, 0, true},
        {LayerKind::Flatten, 0, 0, false},
        {LayerKind::Affine, class_count, 0, true},
    };
    return c;
}

NetworkConfig lenet5_config(int class_count) {
    NetworkConfig c;
    c.name = "lenet5";
    c.class_count = class_count;
    c.layers = {
        {LayerKind::Conv, 6, 5, false},  {LayerKind::Relu, 0, 0, false},
        {LayerKind::MaxPool, 0, 0, true},
        {LayerKind::Conv, 16, 5, false}, {LayerKind::Relu, 0, 0, false},
        {LayerKind::MaxPool, 0, 0, true},
        {LayerKind::Flatten, 0, 0, false},
        {LayerKind::Affine, 120, 0, false}, {LayerKind::Relu, 0, 0, true},
        {LayerKind::Affine, 84, 0, false},  {LayerKind::Relu, 0, 0, true},
        {LayerKind::Affine, class_count, 0, true},
    };
    return c;
}

NetworkConfig config_by_name(const std::string& name) {
    if (name == "base") return base_config();
    if (name == "lenet5") return lenet5_config();
    throw ConfigError("unknown architecture '" + name + "' (expected base or lenet5)");
}

template <class T>
TrainedNetwork<T>::TrainedNetwork(NetworkConfig config, std::uint64_t init_seed)
    : config_(std::move(config)) {
    config_.validate();
    meta_.seed = init_seed;
    auto rng = seeded_rng(init_seed, "init:" + config_.name);

    // He-uniform per parameterized layer, walked in layer order so
    // identical seeds give identical parameters.
    std::size_t c = config_.in_channels, h = config_.in_height, w = config_.in_width;
    std::size_t width = c * h * w;
    for (const auto& layer : config_.layers) {
        switch (layer.kind) {
            case LayerKind::Conv: {
                std::size_t oc = layer.units, k = layer.kernel;
                double bound = std::sqrt(6.0 / (double(c) * k * k));
                std::uniform_real_distribution<double> dist(-bound, bound);
                Tensor<T> wt({oc, c, k, k});
                for (std::size_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<T>(dist(rng));
                params_.push_back(std::move(wt));
                params_.push_back(Tensor<T>({oc}, T(0)));
                c = oc;
                width = c * h * w;
                break;
            }
            case LayerKind::Affine: {
                std::size_t dout = layer.units;
                double bound = std::sqrt(6.0 / double(width));
                std::uniform_real_distribution<double> dist(-bound, bound);
                Tensor<T> wt({width, dout});
                for (std::size_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<T>(dist(rng));
                params_.push_back(std::move(wt));
                params_.push_back(Tensor<T>({dout}, T(0)));
                width = dout;
                break;
            }
            case LayerKind::MaxPool:
                h /= 2;
                w /= 2;
                width = c * h * w;
                break;
            case LayerKind::Relu:
            case LayerKind::Flatten:
                break;
        }
    }
}

template <class T>
std::uint64_t TrainedNetwork<T>::fingerprint() const {
    std::uint64_t h = fnv1a(config_.to_text());
    for (const auto& p : params_) {
        // 32-bit parameter bytes, so float and double nets with identical
        // values agree.
        for (std::size_t i = 0; i < p.size(); ++i) {
            float v = static_cast<float>(p[i]);
            h = fnv1a_bytes(&v, sizeof v, h);
        }
    }
    return h;
}

template <class T>
typename TrainedNetwork<T>::Trace TrainedNetwork<T>::trace(Graph<T>& g,
                                                           typename Graph<T>::Id input,
                                                           bool params_require_grad) const {
    Trace tr;
    typename Graph<T>::Id cur = input;
    std::size_t pi = 0;
    bool flat = false;
    for (const auto& layer : config_.layers) {
        switch (layer.kind) {
            case LayerKind::Conv: {
                auto wi = g.leaf(params_[pi++], params_require_grad);
                auto bi = g.leaf(params_[pi++], params_require_grad);
                tr.param_ids.push_back(wi);
                tr.param_ids.push_back(bi);
                cur = g.conv2d(cur, wi, bi);
                break;
            }
            case LayerKind::Affine: {
                if (!flat) {
                    cur = g.flatten(cur);
                    flat = true;
                }
                auto wi = g.leaf(params_[pi++], params_require_grad);
                auto bi = g.leaf(params_[pi++], params_require_grad);
                tr.param_ids.push_back(wi);
                tr.param_ids.push_back(bi);
                cur = g.affine(cur, wi, bi);
                break;
            }
            case LayerKind::Relu:
                cur = g.relu(cur);
                break;
            case LayerKind::MaxPool:
                cur = g.maxpool2x2(cur);
                break;
            case LayerKind::Flatten:
                cur = g.flatten(cur);
                flat = true;
                break;
        }
        if (layer.capture) {
            // Captured activations are flattened per-sample vectors.
            tr.captures.push_back(g.value(cur).rank() == 2 ? cur : g.flatten(cur));
        }
    }
    tr.logits = cur;
    return tr;
}

template <class T>
ForwardResult<T> TrainedNetwork<T>::forward_with_activations(const Tensor<T>& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != config_.in_channels ||
        batch.dim(2) != config_.in_height || batch.dim(3) != config_.in_width)
        throw ShapeError("network '" + config_.name + "' expects input [n," +
                         std::to_string(config_.in_channels) + "," +
                         std::to_string(config_.in_height) + "," +
                         std::to_string(config_.in_width) + "], got " + batch.shape_str());
    Graph<T> g;
    auto x = g.leaf(batch, false);
    Trace tr = trace(g, x, false);
    ForwardResult<T> out;
    out.logits = g.value(tr.logits);
    out.activations.reserve(tr.captures.size());
    for (auto id : tr.captures) out.activations.push_back(g.value(id));
    return out;
}

template <class T>
Tensor<T> TrainedNetwork<T>::logits(const Tensor<T>& batch) const {
    return forward_with_activations(batch).logits;
}

template <class T>
std::vector<int> TrainedNetwork<T>::predict(const Tensor<T>& batch) const {
    Tensor<T> lg = logits(batch);
    std::vector<int> out(lg.dim(0));
    const std::size_t c = lg.dim(1);
    for (std::size_t r = 0; r < out.size(); ++r) {
        const T* row = lg.data() + r * c;
        out[r] = static_cast<int>(std::max_element(row, row + c) - row);
    }
    return out;
}

template <class T>
std::vector<int> TrainedNetwork<T>::predict_chunked(const Tensor<T>& images,
                                                    std::size_t batch_size) const {
    const std::size_t n = images.dim(0);
    const std::size_t px = images.size() / n;
    std::vector<int> out(n);
    const std::size_t nchunks = (n + batch_size - 1) / batch_size;
    parallel_for(nchunks, [&](std::size_t cb, std::size_t ce) {
        for (std::size_t chunk = cb; chunk < ce; ++chunk) {
            std::size_t begin = chunk * batch_size;
            std::size_t end = std::min(n, begin + batch_size);
            Tensor<T> batch({end - begin, images.dim(1), images.dim(2), images.dim(3)});
            std::memcpy(batch.data(), images.data() + begin * px,
                        (end - begin) * px * sizeof(T));
            auto preds = predict(batch);
            std::copy(preds.begin(), preds.end(), out.begin() + begin);
        }
    });
    return out;
}

template <class T>
double TrainedNetwork<T>::accuracy(const Dataset& data, std::size_t batch_size) const {
    if (data.size() == 0) throw ContractError("accuracy over an empty dataset");
    Tensor<T> images = data.images.template cast<T>();
    auto preds = predict_chunked(images, batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == data.labels[i];
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <class T>
Tensor<T> TrainedNetwork<T>::input_gradient(const LossHead& head, const Tensor<T>& x,
                                            const std::vector<std::int32_t>& targets) const {
    if (head.kind == LossHead::Kind::Constant) return Tensor<T>(x.shape(), T(0));
    if (x.dim(0) != targets.size())
        throw ShapeError("input_gradient: " + std::to_string(x.dim(0)) + " samples but " +
                         std::to_string(targets.size()) + " targets");

    Graph<T> g;
    auto xi = g.leaf(x, true);
    Trace tr = trace(g, xi, false);

    const std::size_t n = x.dim(0);
    const std::size_t C = config_.class_count;
    typename Graph<T>::Id loss;
    Tensor<T> onehot({n, C}, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] < 0 || targets[i] >= static_cast<std::int32_t>(C))
            throw ContractError("target label " + std::to_string(targets[i]) +
                                " outside [0," + std::to_string(C) + ")");
        onehot[i * C + targets[i]] = T(1);
    }
    auto ti = g.leaf(onehot, false);

    if (head.kind == LossHead::Kind::CrossEntropyLogits) {
        loss = g.cross_entropy(g.softmax(tr.logits), ti);
    } else {
        int L = config_.capture_count();
        if (head.capture_point < 1 || head.capture_point > L)
            throw ConfigError("loss head references capture point " +
                              std::to_string(head.capture_point) + ", network '" + config_.name +
                              "' has 1.." + std::to_string(L));
        auto feat = tr.captures[head.capture_point - 1];
        std::size_t d = g.value(feat).dim(1);
        if (head.weight.size() != d * C || head.bias.size() != C)
            throw ShapeError("surrogate head shape mismatch: weight " +
                             std::to_string(head.weight.size()) + " vs expected " +
                             std::to_string(d * C));
        Tensor<T> w({d, C});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(head.weight[i]);
        Tensor<T> b({C});
        for (std::size_t i = 0; i < C; ++i) b[i] = static_cast<T>(head.bias[i]);
        auto q = g.softmax(g.affine(feat, g.leaf(std::move(w), false), g.leaf(std::move(b), false)));
        loss = g.cross_entropy(q, ti);
    }

    std::array<typename Graph<T>::Id, 1> want{xi};
    auto grads = g.backward(loss, want);
    return std::move(grads.at(xi));
}

NetworkF train_base(const Dataset& train, const NetworkConfig& config,
                    const OptimizerSettings& opt, std::uint64_t seed, const Dataset* eval_set,
                    const EpochHook& hook) {
    if (train.size() == 0) throw ContractError("train_base: empty training set");
    config.validate();
    NetworkF net(config, seed);
    net.meta().epochs = opt.epochs;

    std::vector<TensorF> velocity;
    for (const auto& p : net.params()) velocity.emplace_back(p.shape(), 0.0f);

    const std::size_t n = train.size();
    const std::size_t px = train.images.size() / n;
    const std::size_t C = static_cast<std::size_t>(config.class_count);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = seeded_rng(seed, "shuffle:" + config.name);

    const int workers = default_workers();

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < n; at += opt.batch_size, ++batches) {
            const std::size_t bs = std::min<std::size_t>(opt.batch_size, n - at);

            // Split the batch into per-worker sub-batches; gradients are
            // reduced in slot order so a fixed worker count is bit-stable.
            const std::size_t parts = std::min<std::size_t>(workers, bs);
            struct Slot {
                std::vector<TensorF> grads;
                double loss_sum = 0.0;
                std::size_t count = 0;
            };
            std::vector<Slot> slots(parts);
            const std::size_t per = (bs + parts - 1) / parts;
            parallel_for(parts, [&](std::size_t pb, std::size_t pe) {
                for (std::size_t p = pb; p < pe; ++p) {
                    std::size_t begin = at + p * per;
                    std::size_t end = std::min(at + bs, begin + per);
                    if (begin >= end) continue;
                    std::size_t m = end - begin;
                    TensorF xb({m, train.images.dim(1), train.images.dim(2), train.images.dim(3)});
                    TensorF th({m, C}, 0.0f);
                    for (std::size_t i = 0; i < m; ++i) {
                        std::size_t src = order[begin + i];
                        std::memcpy(xb.data() + i * px, train.images.data() + src * px,
                                    px * sizeof(float));
                        th[i * C + train.labels[src]] = 1.0f;
                    }
                    Graph<float> g;
                    auto xi = g.leaf(std::move(xb), false);
                    auto tr = net.trace(g, xi, true);
                    auto loss = g.cross_entropy(g.softmax(tr.logits), g.leaf(std::move(th), false));
                    slots[p].loss_sum = static_cast<double>(g.value(loss)[0]) * m;
                    slots[p].count = m;
                    auto grads = g.backward(loss, tr.param_ids);
                    slots[p].grads.reserve(tr.param_ids.size());
                    for (auto id : tr.param_ids) slots[p].grads.push_back(std::move(grads.at(id)));
                }
            });

            double batch_loss = 0.0;
            for (auto& s : slots) batch_loss += s.loss_sum;
            batch_loss /= static_cast<double>(bs);
            if (!std::isfinite(batch_loss))
                throw TrainingError("loss diverged to non-finite at epoch " +
                                    std::to_string(epoch));
            epoch_loss += batch_loss;

            // Weighted slot reduction recovers the whole-batch mean gradient.
            for (std::size_t pi = 0; pi < net.params().size(); ++pi) {
                TensorF& p = net.params()[pi];
                TensorF& v = velocity[pi];
                const float lr = static_cast<float>(opt.learning_rate);
                const float mu = static_cast<float>(opt.momentum);
                for (std::size_t j = 0; j < p.size(); ++j) {
                    float gsum = 0.0f;
                    for (auto& s : slots)
                        if (s.count) gsum += s.grads[pi][j] * static_cast<float>(s.count);
                    float gj = gsum / static_cast<float>(bs);
                    v[j] = mu * v[j] - lr * gj;
                    p[j] += v[j];
                }
            }
        }
        epoch_loss /= static_cast<double>(batches);
        net.meta().final_train_loss = epoch_loss;
        if (hook) hook(epoch, epoch_loss);
    }

    if (eval_set && eval_set->size() > 0) net.meta().final_accuracy = net.accuracy(*eval_set);
    return net;
}

void save_checkpoint(const NetworkF& net, const std::string& path) {
    Container c;
    c.kind = "network-checkpoint";
    c.meta["format"] = "1";
    c.meta["config"] = net.config().to_text();
    c.meta["seed"] = std::to_string(net.meta().seed);
    c.meta["epochs"] = std::to_string(net.meta().epochs);
    c.meta["final_train_loss"] = std::to_string(net.meta().final_train_loss);
    c.meta["final_accuracy"] = std::to_string(net.meta().final_accuracy);
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        const auto& p = net.params()[i];
        c.add_f32("p" + std::to_string(i), p.shape(), p.values());
    }
    c.save(path);
}

NetworkF load_checkpoint(const std::string& path) {
    Container c = Container::load(path);
    if (c.kind != "network-checkpoint")
        throw FormatError("'" + path + "' is a " + c.kind + ", not a network checkpoint");
    if (c.meta_at("format") != "1")
        throw FormatError("'" + path + "' has unsupported checkpoint format version " +
                          c.meta_at("format"));
    NetworkF net;
    TrainMeta meta;
    meta.seed = c.meta_u64("seed");
    meta.epochs = static_cast<int>(c.meta_u64("epochs"));
    meta.final_train_loss = std::stod(c.meta_at("final_train_loss"));
    meta.final_accuracy = std::stod(c.meta_at("final_accuracy"));
    net.set_state(NetworkConfig::from_text(c.meta_at("config")), meta);
    for (std::size_t i = 0;; ++i) {
        std::string name = "p" + std::to_string(i);
        if (!c.has(name)) break;
        net.params().emplace_back(c.shape(name), c.f32(name));
    }
    // Shape audit against a freshly initialized copy of the same config.
    NetworkF probe(net.config(), 0);
    if (probe.params().size() != net.params().size())
        throw ShapeError("'" + path + "' holds " + std::to_string(net.params().size()) +
                         " parameter tensors, config needs " +
                         std::to_string(probe.params().size()));
    for (std::size_t i = 0; i < probe.params().size(); ++i)
        if (probe.params()[i].shape() != net.params()[i].shape())
            throw ShapeError("'" + path + "' parameter " + std::to_string(i) + " has shape " +
                             net.params()[i].shape_str() + ", config needs " +
                             probe.params()[i].shape_str());
    return net;
}

NetworkF load_checkpoint(const std::string& path, const NetworkConfig& expect) {
    NetworkF net = load_checkpoint(path);
    if (!(net.config() == expect))
        throw ShapeError("checkpoint '" + path + "' holds architecture '" + net.config().name +
                         "' (" + net.config().to_text() + "), expected '" + expect.name + "'");
    return net;
}

template class TrainedNetwork<float>;
template class TrainedNetwork<double>;

} // namespace advknn
