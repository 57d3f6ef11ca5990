#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sslseg/symmetric_eigen.hpp"
#include "sslseg/tensor_ops.hpp"

using namespace sslseg;

namespace {

FeatureMap sequential_map(int h, int w, int c) {
    FeatureMap t(h, w, c);
    for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<float>(i + 1);
    return t;
}

}  // namespace

TEST_CASE("extract_patches centers each pixel and zero pads the border") {
    FeatureMap t = sequential_map(3, 3, 1);  // values 1..9 row-major
    PatchMatrix p = extract_patches(t, 3);

    REQUIRE(p.rows == 9);
    REQUIRE(p.cols == 9);
    REQUIRE(p.source_height == 3);
    REQUIRE(p.source_width == 3);
    REQUIRE(p.source_channels == 1);

    // Center pixel (1,1): full 3x3 neighborhood in row-major order.
    const float* mid = p.row(4);
    for (int i = 0; i < 9; ++i) CHECK(mid[i] == static_cast<float>(i + 1));

    // Corner pixel (0,0): first row and first column of the window fall
    // outside the image and must be zero.
    const float* corner = p.row(0);
    CHECK(corner[0] == 0.f);
    CHECK(corner[1] == 0.f);
    CHECK(corner[2] == 0.f);
    CHECK(corner[3] == 0.f);
    CHECK(corner[4] == 1.f);
    CHECK(corner[5] == 2.f);
    CHECK(corner[6] == 0.f);
    CHECK(corner[7] == 4.f);
    CHECK(corner[8] == 5.f);
}

TEST_CASE("extract_patches keeps channels fastest within a slot") {
    FeatureMap t = sequential_map(2, 2, 2);
    PatchMatrix p = extract_patches(t, 3);
    REQUIRE(p.cols == 18);

    // Pixel (0,0), center slot is window position (1,1) -> flat slot 4,
    // columns 8 and 9 hold its two channel values.
    const float* row = p.row(0);
    CHECK(row[8] == t.at(0, 0, 0));
    CHECK(row[9] == t.at(0, 0, 1));
    // Window position (1,2) is pixel (0,1).
    CHECK(row[10] == t.at(0, 1, 0));
    CHECK(row[11] == t.at(0, 1, 1));
    // Window position (2,1) is pixel (1,0).
    CHECK(row[14] == t.at(1, 0, 0));
    CHECK(row[15] == t.at(1, 0, 1));
}

TEST_CASE("extract_patches window must be odd and positive") {
    FeatureMap t = sequential_map(3, 3, 1);
    CHECK_THROWS_AS(extract_patches(t, 2), std::invalid_argument);
    CHECK_THROWS_AS(extract_patches(t, 0), std::invalid_argument);
    CHECK_THROWS_AS(extract_patches(t, -3), std::invalid_argument);
    CHECK_NOTHROW(extract_patches(t, 1));
}

TEST_CASE("max_pool takes the per-channel maximum of each 2x2 block") {
    FeatureMap t(4, 4, 1);
    const float vals[16] = {1, 5, 2, 0, 3, 4, 8, 1, 9, 0, 1, 1, 2, 7, 3, 6};
    std::copy(vals, vals + 16, t.data.begin());

    FeatureMap out = max_pool(t);
    REQUIRE(out.height == 2);
    REQUIRE(out.width == 2);
    CHECK(out.at(0, 0, 0) == 5.f);
    CHECK(out.at(0, 1, 0) == 8.f);
    CHECK(out.at(1, 0, 0) == 9.f);
    CHECK(out.at(1, 1, 0) == 6.f);

    FeatureMap odd(3, 4, 1);
    CHECK_THROWS_AS(max_pool(odd), std::invalid_argument);
}

TEST_CASE("max_pool handles channels independently") {
    FeatureMap t(2, 2, 2);
    // channel 0: 1 2 / 3 4 ; channel 1: 9 6 / 5 4
    t.at(0, 0, 0) = 1;
    t.at(0, 1, 0) = 2;
    t.at(1, 0, 0) = 3;
    t.at(1, 1, 0) = 4;
    t.at(0, 0, 1) = 9;
    t.at(0, 1, 1) = 6;
    t.at(1, 0, 1) = 5;
    t.at(1, 1, 1) = 4;
    FeatureMap out = max_pool(t);
    CHECK(out.at(0, 0, 0) == 4.f);
    CHECK(out.at(0, 0, 1) == 9.f);
}

TEST_CASE("upsample_nearest replicates blocks") {
    FeatureMap t = sequential_map(2, 2, 1);
    FeatureMap out = upsample_nearest(t, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(out.at(y, x, 0) == t.at(y / 2, x / 2, 0));

    CHECK_THROWS_AS(upsample_nearest(t, 3, 4), std::invalid_argument);
    CHECK_THROWS_AS(upsample_nearest(t, 4, 5), std::invalid_argument);

    // Identity when target equals source.
    FeatureMap same = upsample_nearest(t, 2, 2);
    CHECK(same.data == t.data);
}

TEST_CASE("concat_channels stacks per pixel in list order") {
    FeatureMap a(2, 2, 1);
    FeatureMap b(2, 2, 2);
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] = static_cast<float>(i);
    for (size_t i = 0; i < b.data.size(); ++i) b.data[i] = static_cast<float>(100 + i);

    FeatureMap out = concat_channels({a, b});
    REQUIRE(out.channels == 3);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            CHECK(out.at(y, x, 0) == a.at(y, x, 0));
            CHECK(out.at(y, x, 1) == b.at(y, x, 0));
            CHECK(out.at(y, x, 2) == b.at(y, x, 1));
        }

    FeatureMap c(3, 2, 1);
    CHECK_THROWS_AS(concat_channels({a, c}), std::invalid_argument);
    CHECK_THROWS_AS(concat_channels({}), std::invalid_argument);
}

TEST_CASE("jacobi solver diagonalizes a known symmetric matrix") {
    // [[2,1],[1,2]] has eigenvalues 3 and 1 with eigenvectors (1,1)/sqrt2, (1,-1)/sqrt2.
    SymmetricEigen eig = jacobi_eigen_symmetric({2, 1, 1, 2}, 2);
    std::vector<int> order = descending_eigen_order(eig);
    CHECK(eig.values[order[0]] == Catch::Approx(3.0).margin(1e-12));
    CHECK(eig.values[order[1]] == Catch::Approx(1.0).margin(1e-12));

    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const int top = order[0];
    const double v0 = eig.vectors[0 * 2 + top];
    const double v1 = eig.vectors[1 * 2 + top];
    CHECK(std::abs(std::abs(v0) - inv_sqrt2) < 1e-12);
    CHECK(std::abs(v0 - v1) < 1e-12);  // same sign, equal components
}

TEST_CASE("jacobi solver reproduces A v = lambda v on a random symmetric matrix") {
    const int n = 12;
    std::mt19937_64 rng(7);
    std::vector<double> a(n * n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const double v = static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
            a[i * n + j] = v;
            a[j * n + i] = v;
        }

    SymmetricEigen eig = jacobi_eigen_symmetric(a, n);
    for (int col = 0; col < n; ++col) {
        for (int i = 0; i < n; ++i) {
            double av = 0.0;
            for (int j = 0; j < n; ++j) av += a[i * n + j] * eig.vectors[j * n + col];
            CHECK(av == Catch::Approx(eig.values[col] * eig.vectors[i * n + col]).margin(1e-9));
        }
    }

    // Eigenvectors are orthonormal.
    for (int c1 = 0; c1 < n; ++c1)
        for (int c2 = c1; c2 < n; ++c2) {
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += eig.vectors[i * n + c1] * eig.vectors[i * n + c2];
            CHECK(dot == Catch::Approx(c1 == c2 ? 1.0 : 0.0).margin(1e-12));
        }
}
