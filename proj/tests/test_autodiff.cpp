#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <random>

#include "advknn/graph.hpp"
#include "support/oracles.hpp"

using namespace advknn;
using advknn::testing::finite_difference;
using advknn::testing::max_rel_error;

namespace {

TensorD random_tensor(std::vector<std::size_t> shape, std::mt19937& rng, double lo = -1.0,
                      double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    TensorD t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

std::vector<double> graph_input_gradient(
    const std::function<Graph<double>::Id(Graph<double>&, Graph<double>::Id)>& build,
    const TensorD& x) {
    Graph<double> g;
    auto xi = g.leaf(x, true);
    auto root = build(g, xi);
    std::array<Graph<double>::Id, 1> want{xi};
    auto grads = g.backward(root, want);
    return grads.at(xi).values();
}

double graph_scalar(const std::function<Graph<double>::Id(Graph<double>&, Graph<double>::Id)>& build,
                    const TensorD& x) {
    Graph<double> g;
    auto xi = g.leaf(x, false);
    return g.value(build(g, xi))[0];
}

void check_against_fd(const std::function<Graph<double>::Id(Graph<double>&, Graph<double>::Id)>& build,
                      const TensorD& x, double tol = 1e-4) {
    auto got = graph_input_gradient(build, x);
    auto fd = finite_difference(
        [&](const std::vector<double>& v) {
            return graph_scalar(build, TensorD(x.shape(), v));
        },
        x.values());
    CHECK(max_rel_error(got, fd) < tol);
}

} // namespace

TEST_CASE("relu matches its defining example") {
    Graph<double> g;
    auto x = g.leaf(TensorD({1, 3}, {-1.0, 0.0, 2.0}), false);
    auto y = g.relu(x);
    CHECK(g.value(y)[0] == 0.0);
    CHECK(g.value(y)[1] == 0.0);
    CHECK(g.value(y)[2] == 2.0);
}

TEST_CASE("softmax of a constant row is uniform") {
    Graph<double> g;
    auto y = g.softmax(g.leaf(TensorD({1, 4}, 0.0), false));
    for (int i = 0; i < 4; ++i) CHECK(g.value(y)[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax rows are positive and sum to one") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Graph<double> g;
        auto y = g.softmax(g.leaf(random_tensor({3, 10}, rng, -30.0, 30.0), false));
        for (std::size_t r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 10; ++c) {
                double v = g.value(y).at2(r, c);
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("conv2d with an identity-center kernel reproduces the input") {
    std::mt19937 rng(3);
    TensorD img = random_tensor({1, 1, 3, 3}, rng);
    TensorD kernel({1, 1, 3, 3}, 0.0);
    kernel[4] = 1.0; // center tap
    Graph<double> g;
    auto y = g.conv2d(g.leaf(img, false), g.leaf(kernel, false), g.leaf(TensorD({1}, 0.0), false));
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(g.value(y)[i] == doctest::Approx(img[i]));
}

TEST_CASE("backward of sum is all ones") {
    Graph<double> g;
    auto x = g.leaf(TensorD({2, 2}, {1.0, -2.0, 3.0, 0.5}), true);
    auto root = g.reduce_sum(x);
    std::array<Graph<double>::Id, 1> want{x};
    auto grads = g.backward(root, want);
    for (std::size_t i = 0; i < 4; ++i) CHECK(grads.at(x)[i] == 1.0);
}

TEST_CASE("cross-entropy through softmax gives softmax minus one-hot") {
    std::mt19937 rng(11);
    TensorD z = random_tensor({1, 5}, rng, -2.0, 2.0);
    TensorD onehot({1, 5}, 0.0);
    onehot[3] = 1.0;

    Graph<double> g;
    auto zi = g.leaf(z, true);
    auto p = g.softmax(zi);
    auto root = g.cross_entropy(p, g.leaf(onehot, false));
    std::array<Graph<double>::Id, 1> want{zi};
    auto grads = g.backward(root, want);

    for (std::size_t i = 0; i < 5; ++i) {
        double expect = g.value(p)[i] - onehot[i];
        CHECK(grads.at(zi)[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("two-layer network gradient matches central finite differences") {
    // conv + relu + pool + affine, randomized over many seeds.
    for (unsigned seed = 0; seed < 25; ++seed) {
        std::mt19937 rng(seed);
        TensorD x = random_tensor({1, 1, 6, 6}, rng);
        TensorD w1 = random_tensor({2, 1, 3, 3}, rng, -0.7, 0.7);
        TensorD b1 = random_tensor({2}, rng, -0.2, 0.2);
        TensorD w2 = random_tensor({18, 3}, rng, -0.7, 0.7);
        TensorD b2 = random_tensor({3}, rng, -0.2, 0.2);
        TensorD t({1, 3}, 0.0);
        t[seed % 3] = 1.0;

        auto build = [&](Graph<double>& g, Graph<double>::Id xi) {
            auto c = g.relu(g.conv2d(xi, g.leaf(w1, false), g.leaf(b1, false)));
            auto pooled = g.maxpool2x2(c);
            auto z = g.affine(g.flatten(pooled), g.leaf(w2, false), g.leaf(b2, false));
            return g.cross_entropy(g.softmax(z), g.leaf(t, false));
        };
        check_against_fd(build, x);
    }
}

TEST_CASE("every operation kind matches finite differences") {
    std::mt19937 rng(99);

    SUBCASE("affine") {
        TensorD x = random_tensor({2, 4}, rng);
        TensorD w = random_tensor({4, 3}, rng);
        TensorD b = random_tensor({3}, rng);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id xi) {
                return g.reduce_sum(g.mul(g.affine(xi, g.leaf(w, false), g.leaf(b, false)),
                                          g.affine(xi, g.leaf(w, false), g.leaf(b, false))));
            },
            x);
        // and with respect to the weight
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id wi) {
                return g.reduce_sum(g.affine(g.leaf(x, false), wi, g.leaf(b, false)));
            },
            w);
    }
    SUBCASE("conv2d") {
        TensorD x = random_tensor({2, 2, 4, 4}, rng);
        TensorD w = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
        TensorD b = random_tensor({3}, rng);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id xi) {
                auto y = g.conv2d(xi, g.leaf(w, false), g.leaf(b, false));
                return g.reduce_mean(g.mul(y, y));
            },
            x);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id wi) {
                auto y = g.conv2d(g.leaf(x, false), wi, g.leaf(b, false));
                return g.reduce_mean(g.mul(y, y));
            },
            w);
    }
    SUBCASE("relu") {
        // keep values away from the kink where the derivative jumps
        TensorD x = random_tensor({2, 6}, rng);
        for (auto& v : x.values())
            if (std::abs(v) < 0.05) v += 0.1;
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id xi) {
                return g.reduce_sum(g.mul(g.relu(xi), g.relu(xi)));
            },
            x);
    }
    SUBCASE("maxpool2x2") {
        TensorD x = random_tensor({1, 2, 4, 4}, rng);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id xi) {
                auto y = g.maxpool2x2(xi);
                return g.reduce_sum(g.mul(y, y));
            },
            x);
    }
    SUBCASE("flatten add mul") {
        TensorD x = random_tensor({2, 2, 2, 2}, rng);
        TensorD other = random_tensor({2, 8}, rng);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id xi) {
                auto f = g.flatten(xi);
                return g.reduce_sum(g.mul(g.add(f, g.leaf(other, false)), f));
            },
            x);
    }
    SUBCASE("softmax log") {
        TensorD x = random_tensor({2, 5}, rng);
        TensorD weights = random_tensor({2, 5}, rng, 0.1, 1.0);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id xi) {
                return g.reduce_sum(g.mul(g.log(g.softmax(xi)), g.leaf(weights, false)));
            },
            x);
    }
    SUBCASE("reduce-mean") {
        TensorD x = random_tensor({3, 3}, rng);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id xi) { return g.reduce_mean(g.mul(xi, xi)); },
            x);
    }
    SUBCASE("cross-entropy wrt probabilities") {
        TensorD x = random_tensor({2, 4}, rng, 0.1, 1.0);
        TensorD t({2, 4}, 0.0);
        t[1] = 1.0;
        t[4 + 2] = 1.0;
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id xi) {
                return g.cross_entropy(xi, g.leaf(t, false));
            },
            x);
    }
    SUBCASE("kl-div wrt q and p") {
        TensorD q = random_tensor({2, 4}, rng, 0.1, 1.0);
        TensorD p = random_tensor({2, 4}, rng, 0.1, 1.0);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id qi) {
                return g.kl_div(g.leaf(p, false), qi);
            },
            q);
        check_against_fd(
            [&](Graph<double>& g, Graph<double>::Id pi) {
                return g.kl_div(pi, g.leaf(q, false));
            },
            p);
    }
}

TEST_CASE("backward is deterministic") {
    std::mt19937 rng(42);
    TensorD x = random_tensor({1, 1, 6, 6}, rng);
    TensorD w = random_tensor({2, 1, 3, 3}, rng);
    TensorD b = random_tensor({2}, rng);
    auto run = [&] {
        Graph<double> g;
        auto xi = g.leaf(x, true);
        auto y = g.relu(g.conv2d(xi, g.leaf(w, false), g.leaf(b, false)));
        auto root = g.reduce_sum(g.mul(y, y));
        std::array<Graph<double>::Id, 1> want{xi};
        return g.backward(root, want).at(xi).values();
    };
    auto a = run();
    auto bgrads = run();
    CHECK(a == bgrads); // bit-identical
}

TEST_CASE("backward rejects non-scalar roots") {
    Graph<double> g;
    auto x = g.leaf(TensorD({2, 2}, 1.0), true);
    auto y = g.relu(x);
    std::array<Graph<double>::Id, 1> want{x};
    CHECK_THROWS_AS((void)g.backward(y, want), ContractError);
}

TEST_CASE("disconnected leaves get zero gradients") {
    Graph<double> g;
    auto x = g.leaf(TensorD({2}, 1.0), true);
    auto unused = g.leaf(TensorD({3}, 5.0), true);
    auto root = g.reduce_sum(x);
    std::array<Graph<double>::Id, 2> want{x, unused};
    auto grads = g.backward(root, want);
    CHECK(grads.at(unused).shape() == std::vector<std::size_t>{3});
    for (std::size_t i = 0; i < 3; ++i) CHECK(grads.at(unused)[i] == 0.0);
}

TEST_CASE("shape mismatches name the operation") {
    Graph<double> g;
    auto a = g.leaf(TensorD({2, 3}, 1.0), false);
    auto b = g.leaf(TensorD({3, 2}, 1.0), false);
    try {
        (void)g.add(a, b);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
    try {
        auto w = g.leaf(TensorD({4, 2}, 1.0), false);
        auto bias = g.leaf(TensorD({2}, 1.0), false);
        (void)g.affine(a, w, bias);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("affine") != std::string::npos);
    }
}

TEST_CASE("finite checks flag non-finite op outputs when enabled") {
    Graph<double> g;
    g.set_finite_checks(true);
    auto x = g.leaf(TensorD({1, 2}, {1e308, 1e308}), false);
    CHECK_THROWS_AS((void)g.add(x, x), NumericError);
}
