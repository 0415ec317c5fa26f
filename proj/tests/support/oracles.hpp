#pragma once

// Test-only oracles. These are deliberately naive and independent of the
// library's optimized code paths; the tests trust them, not the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "advknn/graph.hpp"
#include "advknn/tensor.hpp"

namespace advknn::testing {

/// Central finite differences of a scalar-valued function of a flat vector.
inline std::vector<double> finite_difference(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double up = f(x);
        x[i] = keep - h;
        double down = f(x);
        x[i] = keep;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// Largest relative error between a gradient and its oracle, with an
/// absolute floor so near-zero components do not blow up the ratio.
inline double max_rel_error(const std::vector<double>& got, const std::vector<double>& want,
                            double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        double denom = std::max({std::abs(got[i]), std::abs(want[i]), floor});
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

/// Brute-force exact kNN: all pairwise distances, stable ordering by
/// (distance, index). Sequential double accumulation.
struct BruteHit {
    std::size_t index;
    double distance;
};

inline std::vector<BruteHit> brute_force_knn(const std::vector<std::vector<float>>& rows,
                                             const std::vector<float>& q, int k,
                                             std::ptrdiff_t exclude = -1) {
    std::vector<BruteHit> all;
    all.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (exclude >= 0 && i == static_cast<std::size_t>(exclude)) continue;
        double acc = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) {
            double d = double(q[j]) - double(rows[i][j]);
            acc += d * d;
        }
        all.push_back({i, acc});
    }
    std::sort(all.begin(), all.end(), [](const BruteHit& a, const BruteHit& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.index < b.index;
    });
    all.resize(static_cast<std::size_t>(k));
    return all;
}

/// Direct-summation KL divergence oracle.
inline double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        acc += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-12)));
    }
    return acc;
}

} // namespace advknn::testing
