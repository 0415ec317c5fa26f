#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "advknn/tensor.hpp"

using namespace advknn;

TEST_CASE("shape product checks data length") {
    CHECK_THROWS_AS(TensorF({2, 3}, std::vector<float>{1.0f}), ShapeError);
    CHECK_THROWS_AS(TensorF({2, 0}), ShapeError);
    TensorF ok({2, 3}, std::vector<float>(6, 0.0f));
    CHECK(ok.size() == 6);
}

TEST_CASE("4-d accessor addresses row-major layout") {
    TensorF t({2, 3, 4, 5});
    t.at4(1, 2, 3, 4) = 7.0f;
    CHECK(t[1 * 60 + 2 * 20 + 3 * 5 + 4] == 7.0f);
}

TEST_CASE("all_finite spots NaN and infinity") {
    TensorD t({3}, {1.0, 2.0, 3.0});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK(!t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    CHECK(!t.all_finite());
}

TEST_CASE("cast converts dtype and keeps shape") {
    TensorF t({2, 2}, {1.5f, -2.0f, 0.0f, 3.25f});
    TensorD d = t.cast<double>();
    CHECK(d.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(d[i] == double(t[i]));
}
