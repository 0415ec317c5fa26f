#include "advknn/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace advknn {

namespace {

template <class T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatrixRM<T>>;

// Expands one sample [c,h,w] into a [c*k*k, h*w] patch matrix with zero
// padding of (k-1)/2 on each border.
template <class T>
void im2col_sample(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                   T* cols) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k - 1) / 2;
    const std::size_t hw = h * w;
    std::size_t row = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t dy = 0; dy < k; ++dy) {
            for (std::size_t dx = 0; dx < k; ++dx, ++row) {
                T* out = cols + row * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(out + y * w, out + (y + 1) * w, T(0));
                        continue;
                    }
                    const T* src = x + ch * hw + static_cast<std::size_t>(sy) * w;
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) - pad;
                        out[y * w + xx] =
                            (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[sx];
                    }
                }
            }
        }
    }
}

// Transpose of im2col: accumulates a [c*k*k, h*w] patch matrix back into
// the [c,h,w] input gradient.
template <class T>
void col2im_sample(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                   T* x) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k - 1) / 2;
    const std::size_t hw = h * w;
    std::size_t row = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t dy = 0; dy < k; ++dy) {
            for (std::size_t dx = 0; dx < k; ++dx, ++row) {
                const T* src = cols + row * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    T* dst = x + ch * hw + static_cast<std::size_t>(sy) * w;
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) - pad;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                        dst[sx] += src[y * w + xx];
                    }
                }
            }
        }
    }
}

template <class T>
T clamp_prob(T v) {
    return std::max(v, static_cast<T>(kLogFloor));
}

} // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Affine: return "affine";
        case Op::Conv2d: return "conv2d";
        case Op::Relu: return "relu";
        case Op::MaxPool2x2: return "maxpool2x2";
        case Op::Flatten: return "flatten";
        case Op::Softmax: return "softmax";
        case Op::Log: return "log";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::ReduceSum: return "reduce-sum";
        case Op::ReduceMean: return "reduce-mean";
        case Op::CrossEntropy: return "cross-entropy";
        case Op::KlDiv: return "kl-div";
    }
    return "?";
}

template <class T>
Graph<T>::Graph() {
#ifdef NDEBUG
    finite_checks_ = false;
#else
    finite_checks_ = true;
#endif
}

template <class T>
typename Graph<T>::Id Graph<T>::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

template <class T>
const typename Graph<T>::Node& Graph<T>::node(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ContractError("graph node id " + std::to_string(id) + " out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

template <class T>
const Tensor<T>& Graph<T>::value(Id id) const {
    return node(id).value;
}

template <class T>
Op Graph<T>::op(Id id) const {
    return node(id).op;
}

template <class T>
void Graph<T>::check_finite(Id id, const char* what) const {
    if (!finite_checks_) return;
    if (!nodes_[static_cast<std::size_t>(id)].value.all_finite())
        throw NumericError(std::string(what) + ": non-finite values in " +
                           op_name(nodes_[static_cast<std::size_t>(id)].op) + " node " +
                           std::to_string(id));
}

template <class T>
bool Graph<T>::any_requires(const std::vector<Id>& ids) const {
    for (Id id : ids)
        if (node(id).requires_grad) return true;
    return false;
}

template <class T>
typename Graph<T>::Id Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    Id id = push(std::move(n));
    check_finite(id, "leaf");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::affine(Id xi, Id wi, Id bi) {
    const Tensor<T>& x = value(xi);
    const Tensor<T>& w = value(wi);
    const Tensor<T>& b = value(bi);
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("affine: expected x[n,din] w[din,dout] b[dout], got x" + x.shape_str() +
                         " w" + w.shape_str() + " b" + b.shape_str());
    if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
        throw ShapeError("affine: axis mismatch, x columns " + std::to_string(x.dim(1)) +
                         " vs weight rows " + std::to_string(w.dim(0)) + ", weight columns " +
                         std::to_string(w.dim(1)) + " vs bias " + std::to_string(b.dim(0)));
    const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
    Tensor<T> out({n, dout});
    CMapRM<T> xm(x.data(), n, din), wm(w.data(), din, dout);
    MapRM<T> om(out.data(), n, dout);
    om.noalias() = xm * wm;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < dout; ++c) out[r * dout + c] += b[c];

    Node nd;
    nd.op = Op::Affine;
    nd.inputs = {xi, wi, bi};
    nd.value = std::move(out);
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::conv2d(Id xi, Id wi, Id bi) {
    const Tensor<T>& x = value(xi);
    const Tensor<T>& w = value(wi);
    const Tensor<T>& b = value(bi);
    if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1)
        throw ShapeError("conv2d: expected x[n,c,h,w] w[oc,c,k,k] b[oc], got x" + x.shape_str() +
                         " w" + w.shape_str() + " b" + b.shape_str());
    if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
        throw ShapeError("conv2d: kernel must be square with odd size, got " + w.shape_str());
    if (x.dim(1) != w.dim(1) || w.dim(0) != b.dim(0))
        throw ShapeError("conv2d: channel mismatch, input channels " + std::to_string(x.dim(1)) +
                         " vs kernel channels " + std::to_string(w.dim(1)) + ", out channels " +
                         std::to_string(w.dim(0)) + " vs bias " + std::to_string(b.dim(0)));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const std::size_t oc = w.dim(0), k = w.dim(2), hw = h * ww, kk = c * k * k;

    Tensor<T> out({n, oc, h, ww});
    std::vector<T> cols(kk * hw);
    CMapRM<T> wm(w.data(), oc, kk);
    for (std::size_t s = 0; s < n; ++s) {
        im2col_sample(x.data() + s * c * hw, c, h, ww, k, cols.data());
        CMapRM<T> cm(cols.data(), kk, hw);
        MapRM<T> om(out.data() + s * oc * hw, oc, hw);
        om.noalias() = wm * cm;
        for (std::size_t o = 0; o < oc; ++o) {
            T* row = out.data() + (s * oc + o) * hw;
            for (std::size_t i = 0; i < hw; ++i) row[i] += b[o];
        }
    }

    Node nd;
    nd.op = Op::Conv2d;
    nd.inputs = {xi, wi, bi};
    nd.value = std::move(out);
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::relu(Id xi) {
    const Tensor<T>& x = value(xi);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    Node nd;
    nd.op = Op::Relu;
    nd.inputs = {xi};
    nd.value = std::move(out);
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::maxpool2x2(Id xi) {
    const Tensor<T>& x = value(xi);
    if (x.rank() != 4)
        throw ShapeError("maxpool2x2: expected x[n,c,h,w], got " + x.shape_str());
    if (x.dim(2) < 2 || x.dim(3) < 2)
        throw ShapeError("maxpool2x2: spatial size too small, got " + x.shape_str());
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> out({n, c, oh, ow});
    std::vector<std::uint32_t> argmax(out.size());
    std::size_t oi = 0;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* plane = x.data() + (s * c + ch) * h * w;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t xx = 0; xx < ow; ++xx, ++oi) {
                    std::size_t base = (2 * y) * w + 2 * xx;
                    std::size_t best = base;
                    T bv = plane[base];
                    const std::size_t cand[3] = {base + 1, base + w, base + w + 1};
                    for (std::size_t cd : cand) {
                        if (plane[cd] > bv) {
                            bv = plane[cd];
                            best = cd;
                        }
                    }
                    out[oi] = bv;
                    argmax[oi] = static_cast<std::uint32_t>((s * c + ch) * h * w + best);
                }
            }
        }
    }
    Node nd;
    nd.op = Op::MaxPool2x2;
    nd.inputs = {xi};
    nd.value = std::move(out);
    nd.aux = std::move(argmax);
    nd.requires_grad = any_requires(nd.inputs);
    return push(std::move(nd));
}

template <class T>
typename Graph<T>::Id Graph<T>::flatten(Id xi) {
    const Tensor<T>& x = value(xi);
    if (x.rank() < 2)
        throw ShapeError("flatten: expected rank >= 2, got " + x.shape_str());
    std::size_t rest = x.size() / x.dim(0);
    Tensor<T> out({x.dim(0), rest}, x.values());
    Node nd;
    nd.op = Op::Flatten;
    nd.inputs = {xi};
    nd.value = std::move(out);
    nd.requires_grad = any_requires(nd.inputs);
    return push(std::move(nd));
}

template <class T>
typename Graph<T>::Id Graph<T>::softmax(Id xi) {
    const Tensor<T>& x = value(xi);
    if (x.rank() != 2)
        throw ShapeError("softmax: expected x[n,C], got " + x.shape_str());
    check_finite(xi, "softmax input");
    const std::size_t n = x.dim(0), cdim = x.dim(1);
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = x.data() + r * cdim;
        T* orow = out.data() + r * cdim;
        T m = row[0];
        for (std::size_t c = 1; c < cdim; ++c) m = std::max(m, row[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < cdim; ++c) {
            orow[c] = std::exp(row[c] - m);
            sum += orow[c];
        }
        for (std::size_t c = 0; c < cdim; ++c) orow[c] /= sum;
    }
    Node nd;
    nd.op = Op::Softmax;
    nd.inputs = {xi};
    nd.value = std::move(out);
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::log(Id xi) {
    const Tensor<T>& x = value(xi);
    check_finite(xi, "log input");
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::log(clamp_prob(x[i]));
    Node nd;
    nd.op = Op::Log;
    nd.inputs = {xi};
    nd.value = std::move(out);
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::add(Id ai, Id bi) {
    const Tensor<T>& a = value(ai);
    const Tensor<T>& b = value(bi);
    if (!a.same_shape(b))
        throw ShapeError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    Node nd;
    nd.op = Op::Add;
    nd.inputs = {ai, bi};
    nd.value = std::move(out);
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::mul(Id ai, Id bi) {
    const Tensor<T>& a = value(ai);
    const Tensor<T>& b = value(bi);
    if (!a.same_shape(b))
        throw ShapeError("mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    Node nd;
    nd.op = Op::Mul;
    nd.inputs = {ai, bi};
    nd.value = std::move(out);
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::reduce_sum(Id xi) {
    const Tensor<T>& x = value(xi);
    T acc = T(0);
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
    Node nd;
    nd.op = Op::ReduceSum;
    nd.inputs = {xi};
    nd.value = Tensor<T>::scalar(acc);
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::reduce_mean(Id xi) {
    const Tensor<T>& x = value(xi);
    T acc = T(0);
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
    Node nd;
    nd.op = Op::ReduceMean;
    nd.inputs = {xi};
    nd.value = Tensor<T>::scalar(acc / static_cast<T>(x.size()));
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::cross_entropy(Id pi, Id ti) {
    const Tensor<T>& p = value(pi);
    const Tensor<T>& t = value(ti);
    if (p.rank() != 2 || !p.same_shape(t))
        throw ShapeError("cross-entropy: expected matching [n,C] tensors, got " + p.shape_str() +
                         " vs " + t.shape_str());
    const std::size_t n = p.dim(0);
    T acc = T(0);
    for (std::size_t i = 0; i < p.size(); ++i) acc -= t[i] * std::log(clamp_prob(p[i]));
    Node nd;
    nd.op = Op::CrossEntropy;
    nd.inputs = {pi, ti};
    nd.value = Tensor<T>::scalar(acc / static_cast<T>(n));
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
typename Graph<T>::Id Graph<T>::kl_div(Id pi, Id qi) {
    const Tensor<T>& p = value(pi);
    const Tensor<T>& q = value(qi);
    if (p.rank() != 2 || !p.same_shape(q))
        throw ShapeError("kl-div: expected matching [n,C] tensors, got " + p.shape_str() + " vs " +
                         q.shape_str());
    const std::size_t n = p.dim(0);
    T acc = T(0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > T(0))
            acc += p[i] * (std::log(clamp_prob(p[i])) - std::log(clamp_prob(q[i])));
    }
    Node nd;
    nd.op = Op::KlDiv;
    nd.inputs = {pi, qi};
    nd.value = Tensor<T>::scalar(acc / static_cast<T>(n));
    nd.requires_grad = any_requires(nd.inputs);
    Id id = push(std::move(nd));
    check_finite(id, "forward");
    return id;
}

template <class T>
std::unordered_map<typename Graph<T>::Id, Tensor<T>> Graph<T>::backward(
    Id root, std::span<const Id> wanted) const {
    const Node& rn = node(root);
    if (rn.value.size() != 1)
        throw ContractError("backward: root must be scalar, got shape " + rn.value.shape_str());

    // grads[i] is allocated lazily; an empty tensor means "no gradient yet".
    std::vector<Tensor<T>> grads(static_cast<std::size_t>(root) + 1);
    grads[static_cast<std::size_t>(root)] = Tensor<T>(rn.value.shape(), T(1));

    auto grad_into = [&](Id id) -> Tensor<T>& {
        auto& g = grads[static_cast<std::size_t>(id)];
        if (g.empty()) g = Tensor<T>(nodes_[static_cast<std::size_t>(id)].value.shape(), T(0));
        return g;
    };

    for (Id i = root; i >= 0; --i) {
        const Node& nd = nodes_[static_cast<std::size_t>(i)];
        const Tensor<T>& g = grads[static_cast<std::size_t>(i)];
        if (g.empty() || nd.op == Op::Leaf || !nd.requires_grad) continue;

        switch (nd.op) {
            case Op::Affine: {
                const Tensor<T>& x = value(nd.inputs[0]);
                const Tensor<T>& w = value(nd.inputs[1]);
                const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
                CMapRM<T> gm(g.data(), n, dout), xm(x.data(), n, din), wm(w.data(), din, dout);
                if (node(nd.inputs[0]).requires_grad) {
                    MapRM<T> dx(grad_into(nd.inputs[0]).data(), n, din);
                    dx.noalias() += gm * wm.transpose();
                }
                if (node(nd.inputs[1]).requires_grad) {
                    MapRM<T> dw(grad_into(nd.inputs[1]).data(), din, dout);
                    dw.noalias() += xm.transpose() * gm;
                }
                if (node(nd.inputs[2]).requires_grad) {
                    Tensor<T>& db = grad_into(nd.inputs[2]);
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < dout; ++c) db[c] += g[r * dout + c];
                }
                break;
            }
            case Op::Conv2d: {
                const Tensor<T>& x = value(nd.inputs[0]);
                const Tensor<T>& w = value(nd.inputs[1]);
                const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
                const std::size_t oc = w.dim(0), k = w.dim(2), hw = h * ww, kk = c * k * k;
                CMapRM<T> wm(w.data(), oc, kk);
                const bool need_dx = node(nd.inputs[0]).requires_grad;
                const bool need_dw = node(nd.inputs[1]).requires_grad;
                const bool need_db = node(nd.inputs[2]).requires_grad;
                std::vector<T> cols(need_dx || need_dw ? kk * hw : 0);
                for (std::size_t s = 0; s < n; ++s) {
                    CMapRM<T> gm(g.data() + s * oc * hw, oc, hw);
                    if (need_dx) {
                        MapRM<T> cm(cols.data(), kk, hw);
                        cm.noalias() = wm.transpose() * gm;
                        col2im_sample(cols.data(), c, h, ww, k,
                                      grad_into(nd.inputs[0]).data() + s * c * hw);
                    }
                    if (need_dw) {
                        im2col_sample(x.data() + s * c * hw, c, h, ww, k, cols.data());
                        CMapRM<T> cm(cols.data(), kk, hw);
                        MapRM<T> dw(grad_into(nd.inputs[1]).data(), oc, kk);
                        dw.noalias() += gm * cm.transpose();
                    }
                    if (need_db) {
                        Tensor<T>& db = grad_into(nd.inputs[2]);
                        for (std::size_t o = 0; o < oc; ++o) {
                            const T* row = g.data() + (s * oc + o) * hw;
                            T acc = T(0);
                            for (std::size_t ii = 0; ii < hw; ++ii) acc += row[ii];
                            db[o] += acc;
                        }
                    }
                }
                break;
            }
            case Op::Relu: {
                if (!node(nd.inputs[0]).requires_grad) break;
                const Tensor<T>& x = value(nd.inputs[0]);
                Tensor<T>& dx = grad_into(nd.inputs[0]);
                for (std::size_t ii = 0; ii < x.size(); ++ii)
                    if (x[ii] > T(0)) dx[ii] += g[ii];
                break;
            }
            case Op::MaxPool2x2: {
                if (!node(nd.inputs[0]).requires_grad) break;
                Tensor<T>& dx = grad_into(nd.inputs[0]);
                for (std::size_t ii = 0; ii < nd.aux.size(); ++ii) dx[nd.aux[ii]] += g[ii];
                break;
            }
            case Op::Flatten: {
                if (!node(nd.inputs[0]).requires_grad) break;
                Tensor<T>& dx = grad_into(nd.inputs[0]);
                for (std::size_t ii = 0; ii < g.size(); ++ii) dx[ii] += g[ii];
                break;
            }
            case Op::Softmax: {
                if (!node(nd.inputs[0]).requires_grad) break;
                const Tensor<T>& y = nd.value;
                const std::size_t n = y.dim(0), cdim = y.dim(1);
                Tensor<T>& dx = grad_into(nd.inputs[0]);
                for (std::size_t r = 0; r < n; ++r) {
                    const T* yr = y.data() + r * cdim;
                    const T* gr = g.data() + r * cdim;
                    T dot = T(0);
                    for (std::size_t cc = 0; cc < cdim; ++cc) dot += gr[cc] * yr[cc];
                    T* dr = dx.data() + r * cdim;
                    for (std::size_t cc = 0; cc < cdim; ++cc) dr[cc] += yr[cc] * (gr[cc] - dot);
                }
                break;
            }
            case Op::Log: {
                if (!node(nd.inputs[0]).requires_grad) break;
                const Tensor<T>& x = value(nd.inputs[0]);
                Tensor<T>& dx = grad_into(nd.inputs[0]);
                for (std::size_t ii = 0; ii < x.size(); ++ii)
                    if (x[ii] > static_cast<T>(kLogFloor)) dx[ii] += g[ii] / x[ii];
                break;
            }
            case Op::Add: {
                for (int side = 0; side < 2; ++side) {
                    if (!node(nd.inputs[side]).requires_grad) continue;
                    Tensor<T>& d = grad_into(nd.inputs[side]);
                    for (std::size_t ii = 0; ii < g.size(); ++ii) d[ii] += g[ii];
                }
                break;
            }
            case Op::Mul: {
                const Tensor<T>& a = value(nd.inputs[0]);
                const Tensor<T>& b = value(nd.inputs[1]);
                if (node(nd.inputs[0]).requires_grad) {
                    Tensor<T>& da = grad_into(nd.inputs[0]);
                    for (std::size_t ii = 0; ii < g.size(); ++ii) da[ii] += g[ii] * b[ii];
                }
                if (node(nd.inputs[1]).requires_grad) {
                    Tensor<T>& db = grad_into(nd.inputs[1]);
                    for (std::size_t ii = 0; ii < g.size(); ++ii) db[ii] += g[ii] * a[ii];
                }
                break;
            }
            case Op::ReduceSum: {
                if (!node(nd.inputs[0]).requires_grad) break;
                Tensor<T>& dx = grad_into(nd.inputs[0]);
                for (std::size_t ii = 0; ii < dx.size(); ++ii) dx[ii] += g[0];
                break;
            }
            case Op::ReduceMean: {
                if (!node(nd.inputs[0]).requires_grad) break;
                Tensor<T>& dx = grad_into(nd.inputs[0]);
                T scale = g[0] / static_cast<T>(dx.size());
                for (std::size_t ii = 0; ii < dx.size(); ++ii) dx[ii] += scale;
                break;
            }
            case Op::CrossEntropy: {
                const Tensor<T>& p = value(nd.inputs[0]);
                const Tensor<T>& t = value(nd.inputs[1]);
                const T scale = g[0] / static_cast<T>(p.dim(0));
                if (node(nd.inputs[0]).requires_grad) {
                    Tensor<T>& dp = grad_into(nd.inputs[0]);
                    for (std::size_t ii = 0; ii < p.size(); ++ii)
                        if (p[ii] > static_cast<T>(kLogFloor)) dp[ii] -= scale * t[ii] / p[ii];
                }
                if (node(nd.inputs[1]).requires_grad) {
                    Tensor<T>& dt = grad_into(nd.inputs[1]);
                    for (std::size_t ii = 0; ii < p.size(); ++ii)
                        dt[ii] -= scale * std::log(clamp_prob(p[ii]));
                }
                break;
            }
            case Op::KlDiv: {
                const Tensor<T>& p = value(nd.inputs[0]);
                const Tensor<T>& q = value(nd.inputs[1]);
                const T scale = g[0] / static_cast<T>(p.dim(0));
                if (node(nd.inputs[0]).requires_grad) {
                    Tensor<T>& dp = grad_into(nd.inputs[0]);
                    for (std::size_t ii = 0; ii < p.size(); ++ii)
                        if (p[ii] > T(0))
                            dp[ii] += scale * (std::log(clamp_prob(p[ii])) -
                                               std::log(clamp_prob(q[ii])) + T(1));
                }
                if (node(nd.inputs[1]).requires_grad) {
                    Tensor<T>& dq = grad_into(nd.inputs[1]);
                    for (std::size_t ii = 0; ii < p.size(); ++ii)
                        if (p[ii] > T(0) && q[ii] > static_cast<T>(kLogFloor))
                            dq[ii] -= scale * p[ii] / q[ii];
                }
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    std::unordered_map<Id, Tensor<T>> out;
    for (Id id : wanted) {
        const Node& nd = node(id);
        if (id <= root && !grads[static_cast<std::size_t>(id)].empty())
            out.emplace(id, grads[static_cast<std::size_t>(id)]);
        else
            out.emplace(id, Tensor<T>(nd.value.shape(), T(0))); // disconnected: zero
    }
    return out;
}

template class Graph<float>;
template class Graph<double>;

} // namespace advknn
