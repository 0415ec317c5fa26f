#include "advknn/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "advknn/container.hpp"
#include "advknn/errors.hpp"
#include "advknn/parallel.hpp"

namespace advknn {

namespace {

// Four independent accumulators so the compiler can keep FMA pipelines
// busy; accumulation is in double to make orderings reproducible.
double dist2(const float* a, const float* b, std::size_t d) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t j = 0;
    for (; j + 4 <= d; j += 4) {
        double d0 = double(a[j]) - double(b[j]);
        double d1 = double(a[j + 1]) - double(b[j + 1]);
        double d2 = double(a[j + 2]) - double(b[j + 2]);
        double d3 = double(a[j + 3]) - double(b[j + 3]);
        s0 += d0 * d0;
        s1 += d1 * d1;
        s2 += d2 * d2;
        s3 += d3 * d3;
    }
    for (; j < d; ++j) {
        double dd = double(a[j]) - double(b[j]);
        s0 += dd * dd;
    }
    return (s0 + s1) + (s2 + s3);
}

double cosine_distance(const float* a, const float* b, std::size_t d) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < d; ++j) {
        dot += double(a[j]) * double(b[j]);
        na += double(a[j]) * double(a[j]);
        nb += double(b[j]) * double(b[j]);
    }
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot / std::sqrt(na * nb);
}

struct Candidate {
    double dist;
    std::size_t index;
};

// Worst-first ordering: larger distance, then larger index.
bool worse(const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.index < b.index;
}

// Bounded worst-at-top heap holding the running best k candidates.
class TopK {
public:
    explicit TopK(int k) : k_(static_cast<std::size_t>(k)) { heap_.reserve(k_); }

    void offer(double dist, std::size_t index) {
        Candidate c{dist, index};
        if (heap_.size() < k_) {
            heap_.push_back(c);
            std::push_heap(heap_.begin(), heap_.end(), worse);
            return;
        }
        if (worse(c, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), worse);
            heap_.back() = c;
            std::push_heap(heap_.begin(), heap_.end(), worse);
        }
    }

    // Ascending by (distance, index).
    std::vector<Candidate> sorted() && {
        std::sort(heap_.begin(), heap_.end(), [](const Candidate& a, const Candidate& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            return a.index < b.index;
        });
        return std::move(heap_);
    }

private:
    std::size_t k_;
    std::vector<Candidate> heap_;
};

// Exact scan of every database row for one query. The slow path: only used
// for small databases and as the fallback when the fast path cannot prove
// its shortlist complete.
std::vector<Candidate> scan_query(const FeatureDatabase& db, const float* q, int k,
                                  std::ptrdiff_t exclude) {
    const std::size_t d = db.dim();
    TopK top(k);
    for (std::size_t r = 0; r < db.rows(); ++r) {
        if (exclude >= 0 && r == static_cast<std::size_t>(exclude)) continue;
        double dist = db.metric == Metric::SquaredEuclidean ? dist2(q, db.row(r), d)
                                                            : cosine_distance(q, db.row(r), d);
        top.offer(dist, r);
    }
    return std::move(top).sorted();
}

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapF = Eigen::Map<const MatrixF>;

constexpr std::size_t kQueryTile = 256;
constexpr std::size_t kRowBlock = 4096;
constexpr int kShortlistSlack = 64;

// Fast path for squared Euclidean distance: |q|^2 + |g|^2 - 2 q.g via one
// float GEMM per (query tile, row block), followed by an exact double
// re-rank of a k+slack shortlist. A per-query margin check proves that no
// true neighbor was lost to float rounding; when it cannot, the query is
// rescanned exactly. Results are therefore identical to the naive scan
// except on exact distance collisions between distinct rows.
void search_tile_gemm(const FeatureDatabase& db, const float* queries, std::size_t q_begin,
                      std::size_t q_end, int k, std::ptrdiff_t exclude_base,
                      const std::vector<float>& row_norms,
                      std::vector<std::vector<Candidate>>& out) {
    const std::size_t d = db.dim();
    const std::size_t m = db.rows();
    const std::size_t nq = q_end - q_begin;
    const std::size_t shortlist = std::min<std::size_t>(m, static_cast<std::size_t>(k) +
                                                               kShortlistSlack);

    std::vector<float> qn(nq);
    for (std::size_t i = 0; i < nq; ++i) {
        CMapF qv(queries + (q_begin + i) * d, 1, d);
        qn[i] = qv.squaredNorm();
    }

    std::vector<TopK> tops;
    tops.reserve(nq);
    for (std::size_t i = 0; i < nq; ++i) tops.emplace_back(static_cast<int>(shortlist));

    CMapF Q(queries + q_begin * d, nq, d);
    MatrixF prod(nq, std::min(kRowBlock, m));
    for (std::size_t rb = 0; rb < m; rb += kRowBlock) {
        const std::size_t bs = std::min(kRowBlock, m - rb);
        CMapF G(db.row(rb), bs, d);
        prod.leftCols(bs).noalias() = Q * G.transpose();
        for (std::size_t i = 0; i < nq; ++i) {
            const float* prow = prod.data() + i * prod.cols();
            const std::size_t skip =
                exclude_base >= 0 ? static_cast<std::size_t>(exclude_base) + q_begin + i
                                  : static_cast<std::size_t>(-1);
            for (std::size_t j = 0; j < bs; ++j) {
                const std::size_t r = rb + j;
                if (r == skip) continue;
                float fdist = qn[i] + row_norms[r] - 2.0f * prow[j];
                tops[i].offer(static_cast<double>(fdist), r);
            }
        }
    }

    float gn_max = 0.0f;
    for (float v : row_norms) gn_max = std::max(gn_max, v);

    for (std::size_t i = 0; i < nq; ++i) {
        auto cands = std::move(tops[i]).sorted();
        // Best float distance among rejected rows; everything kept is
        // re-ranked exactly, so only the shortlist boundary can lose a row.
        const bool clipped = cands.size() >= shortlist && shortlist < m;
        const double best_rejected = clipped ? cands.back().dist
                                             : std::numeric_limits<double>::infinity();

        const float* q = queries + (q_begin + i) * d;
        for (Candidate& c : cands) c.dist = dist2(q, db.row(c.index), d);
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            return a.index < b.index;
        });
        cands.resize(std::min<std::size_t>(cands.size(), static_cast<std::size_t>(k)));

        // Worst-case float error of qn + gn - 2P with nonnegative summands
        // is about d * eps * scale; stay an order of magnitude above it.
        const double tau =
            32.0 * double(d) * 6e-8 * (double(qn[i]) + double(gn_max)) + 1e-12;
        const std::size_t skip = exclude_base >= 0
                                     ? static_cast<std::size_t>(exclude_base) + q_begin + i
                                     : static_cast<std::size_t>(-1);
        if (cands.size() < static_cast<std::size_t>(k) ||
            best_rejected - cands.back().dist <= tau) {
            out[q_begin + i] = scan_query(db, q, k,
                                          skip == static_cast<std::size_t>(-1)
                                              ? std::ptrdiff_t(-1)
                                              : static_cast<std::ptrdiff_t>(skip));
        } else {
            out[q_begin + i] = std::move(cands);
        }
    }
}

std::vector<std::vector<Candidate>> search_batch(const FeatureDatabase& db, const float* queries,
                                                 std::size_t nq, int k,
                                                 std::ptrdiff_t exclude_base) {
    db.validate();
    std::size_t usable = db.rows() - (exclude_base >= 0 ? 1 : 0);
    if (k < 1 || static_cast<std::size_t>(k) > usable)
        throw ContractError("k = " + std::to_string(k) + " outside [1, " +
                            std::to_string(usable) + "] for a database of " +
                            std::to_string(db.rows()) + " rows");

    std::vector<std::vector<Candidate>> out(nq);

    const bool use_gemm = db.metric == Metric::SquaredEuclidean && db.rows() >= 1024 &&
                          db.dim() >= 16;
    if (!use_gemm) {
        parallel_for(nq, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                std::ptrdiff_t skip = exclude_base >= 0
                                          ? exclude_base + static_cast<std::ptrdiff_t>(i)
                                          : std::ptrdiff_t(-1);
                out[i] = scan_query(db, queries + i * db.dim(), k, skip);
            }
        });
        return out;
    }

    std::vector<float> row_norms(db.rows());
    parallel_for(db.rows(), [&](std::size_t b, std::size_t e) {
        for (std::size_t r = b; r < e; ++r) {
            CMapF row(db.row(r), 1, db.dim());
            row_norms[r] = row.squaredNorm();
        }
    });

    const std::size_t tiles = (nq + kQueryTile - 1) / kQueryTile;
    parallel_for(tiles, [&](std::size_t tb, std::size_t te) {
        for (std::size_t t = tb; t < te; ++t) {
            std::size_t begin = t * kQueryTile;
            std::size_t end = std::min(nq, begin + kQueryTile);
            search_tile_gemm(db, queries, begin, end, k, exclude_base, row_norms, out);
        }
    });
    return out;
}

NeighborDistribution to_distribution(const FeatureDatabase& db, std::vector<Candidate> hits,
                                     int k) {
    NeighborDistribution nd;
    nd.k = k;
    nd.counts.assign(db.class_count, 0);
    nd.neighbors.reserve(hits.size());
    for (const Candidate& c : hits) {
        nd.neighbors.push_back(c.index);
        ++nd.counts[db.labels[c.index]];
    }
    return nd;
}

} // namespace

void FeatureDatabase::validate() const {
    if (rows() == 0) throw ContractError("feature database is empty");
    if (features.rank() != 2 || features.dim(0) != rows())
        throw ShapeError("feature database shape " + features.shape_str() + " does not pair with " +
                         std::to_string(rows()) + " labels");
}

std::vector<double> NeighborDistribution::probs() const {
    std::vector<double> out(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) out[c] = prob(c);
    return out;
}

int NeighborDistribution::argmax() const {
    int best = 0;
    for (std::size_t c = 1; c < counts.size(); ++c)
        if (counts[c] > counts[best]) best = static_cast<int>(c);
    return best;
}

TensorF extract_features(const NetworkF& net, const Dataset& data, int layer,
                         std::size_t batch_size) {
    const int L = net.config().capture_count();
    if (layer < 1 || layer > L)
        throw ConfigError("layer " + std::to_string(layer) + " is not a capture point (1.." +
                          std::to_string(L) + ")");
    if (data.size() == 0) throw ContractError("cannot extract features from an empty dataset");

    // Probe one sample for the flattened width.
    const std::size_t d =
        net.forward_with_activations(data.image(0)).activations[layer - 1].dim(1);
    TensorF out({data.size(), d});
    const std::size_t px = data.images.size() / data.size();
    const std::size_t nchunks = (data.size() + batch_size - 1) / batch_size;
    parallel_for(nchunks, [&](std::size_t cb, std::size_t ce) {
        for (std::size_t chunk = cb; chunk < ce; ++chunk) {
            std::size_t begin = chunk * batch_size;
            std::size_t end = std::min(data.size(), begin + batch_size);
            TensorF batch({end - begin, data.images.dim(1), data.images.dim(2),
                           data.images.dim(3)});
            std::memcpy(batch.data(), data.images.data() + begin * px,
                        (end - begin) * px * sizeof(float));
            auto fw = net.forward_with_activations(batch);
            const TensorF& act = fw.activations[layer - 1];
            std::memcpy(out.data() + begin * d, act.data(), act.size() * sizeof(float));
        }
    });
    return out;
}

FeatureDatabase build_database(const NetworkF& net, const Dataset& data, int layer, Metric metric,
                               std::size_t batch_size) {
    FeatureDatabase db;
    db.features = extract_features(net, data, layer, batch_size);
    db.labels = data.labels;
    db.layer = layer;
    db.class_count = data.class_count;
    db.network_fingerprint = net.fingerprint();
    db.metric = metric;
    if (!db.features.all_finite()) throw NumericError("feature database contains non-finite rows");
    return db;
}

std::vector<NeighborHit> knn_query(const FeatureDatabase& db, const float* q, int k,
                                   std::ptrdiff_t exclude) {
    // exclude_base semantics place the excluded row at base + query index;
    // a single query at index 0 excludes exactly `exclude`.
    auto hits = search_batch(db, q, 1, k, exclude);
    std::vector<NeighborHit> out;
    out.reserve(hits[0].size());
    for (const Candidate& c : hits[0]) out.push_back({c.index, c.dist});
    return out;
}

NeighborDistribution vote_distribution(const FeatureDatabase& db, const float* q, int k,
                                       std::ptrdiff_t exclude) {
    auto hits = search_batch(db, q, 1, k, exclude);
    return to_distribution(db, std::move(hits[0]), k);
}

int knn_predict(const FeatureDatabase& db, const float* q, int k, std::ptrdiff_t exclude) {
    return vote_distribution(db, q, k, exclude).argmax();
}

std::vector<NeighborDistribution> vote_batch(const FeatureDatabase& db, const TensorF& queries,
                                             int k, std::ptrdiff_t exclude_base) {
    if (queries.rank() != 2 || queries.dim(1) != db.dim())
        throw ShapeError("query matrix " + queries.shape_str() + " does not match database dim " +
                         std::to_string(db.dim()));
    auto hits = search_batch(db, queries.data(), queries.dim(0), k, exclude_base);
    std::vector<NeighborDistribution> out;
    out.reserve(hits.size());
    for (auto& h : hits) out.push_back(to_distribution(db, std::move(h), k));
    return out;
}

void save_database(const FeatureDatabase& db, const std::string& path) {
    db.validate();
    Container c;
    c.kind = "feature-database";
    c.meta["layer"] = std::to_string(db.layer);
    c.meta["class_count"] = std::to_string(db.class_count);
    c.meta["network_fingerprint"] = std::to_string(db.network_fingerprint);
    c.meta["metric"] = db.metric == Metric::SquaredEuclidean ? "euclidean" : "cosine";
    c.add_f32("features", db.features.shape(), db.features.values());
    c.add_i32("labels", {db.labels.size()}, db.labels);
    c.save(path);
}

FeatureDatabase load_database(const std::string& path) {
    Container c = Container::load(path);
    if (c.kind != "feature-database")
        throw FormatError("'" + path + "' is a " + c.kind + ", not a feature database");
    FeatureDatabase db;
    db.layer = static_cast<int>(c.meta_u64("layer"));
    db.class_count = static_cast<int>(c.meta_u64("class_count"));
    db.network_fingerprint = c.meta_u64("network_fingerprint");
    db.metric = c.meta_at("metric") == "cosine" ? Metric::Cosine : Metric::SquaredEuclidean;
    db.features = TensorF(c.shape("features"), c.f32("features"));
    db.labels = c.i32("labels");
    db.validate();
    return db;
}

} // namespace advknn
