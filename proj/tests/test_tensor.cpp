#include <doctest.h>

#include <random>

#include "expandnet/tensor.hpp"
#include "oracles.hpp"

using namespace expandnet;

TEST_CASE("conv2d: zero input yields the bias on every output element") {
    Tensor4<double> x(1, 1, 3, 3);
    ConvKernel<double> k(2, 1, 3);
    std::mt19937_64 rng(1);
    oracle::randomize(k.data, rng);
    std::vector<double> bias{0.5, -1.25};
    auto y = conv2d_forward(x, k, &bias, 1, 1);
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < y.h * y.w; ++i)
            CHECK(y.data[o * y.h * y.w + i] == bias[o]);
}

TEST_CASE("conv2d: centered impulse reproduces the kernel flipped") {
    Tensor4<double> x(1, 1, 5, 5);
    x.at(0, 0, 2, 2) = 1.0;
    ConvKernel<double> k(1, 1, 3);
    for (int i = 0; i < 9; ++i) k.data[i] = i + 1;
    auto y = conv2d_forward(x, k, nullptr, 1, 1);
    REQUIRE(y.h == 5);
    for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
            CHECK(y.at(0, 0, 1 + ky, 1 + kx) == k.at(0, 0, 2 - ky, 2 - kx));
}

TEST_CASE("conv2d: strided padded case matches the quadruple-loop oracle") {
    std::mt19937_64 rng(42);
    auto x = oracle::random_tensor<double>(2, 3, 8, 8, rng);
    ConvKernel<double> k(4, 3, 3);
    oracle::randomize(k.data, rng);
    std::vector<double> bias(4);
    oracle::randomize(bias, rng);
    auto fast = conv2d_forward(x, k, &bias, 2, 1);
    auto slow = oracle::conv2d_naive(x, k, &bias, 2, 1);
    CHECK(fast.h == slow.h);
    CHECK(oracle::max_abs_diff(fast.data, slow.data) <= 1e-6);
}

TEST_CASE("conv2d: shape errors") {
    Tensor4<double> x(1, 3, 4, 4);
    ConvKernel<double> k(2, 2, 3);
    CHECK_THROWS_AS(conv2d_forward(x, k, nullptr, 1, 0), std::invalid_argument);
    ConvKernel<double> big(2, 3, 7);
    CHECK_THROWS_AS(conv2d_forward(x, big, nullptr, 1, 0), std::invalid_argument);  // empty output
    ConvKernel<double> ok(2, 3, 3);
    CHECK_THROWS_AS(conv2d_forward(x, ok, nullptr, 0, 0), std::invalid_argument);
}

TEST_CASE("conv2d is linear in the input when bias is zero") {
    std::mt19937_64 rng(7);
    auto x = oracle::random_tensor<double>(1, 2, 6, 6, rng);
    auto y = oracle::random_tensor<double>(1, 2, 6, 6, rng);
    ConvKernel<double> k(3, 2, 3);
    oracle::randomize(k.data, rng);
    const double a = 0.37, b = -1.8;
    Tensor4<double> mix(1, 2, 6, 6);
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
    auto lhs = conv2d_forward(mix, k, nullptr, 1, 1);
    auto fx = conv2d_forward(x, k, nullptr, 1, 1);
    auto fy = conv2d_forward(y, k, nullptr, 1, 1);
    for (std::size_t i = 0; i < lhs.data.size(); ++i)
        CHECK(lhs.data[i] == doctest::Approx(a * fx.data[i] + b * fy.data[i]).epsilon(1e-12));
}

TEST_CASE("1x1 conv with s1 p0 equals per-pixel channel matmul") {
    std::mt19937_64 rng(9);
    auto x = oracle::random_tensor<double>(1, 3, 4, 4, rng);
    ConvKernel<double> k(2, 3, 1);
    oracle::randomize(k.data, rng);
    auto y = conv2d_forward(x, k, nullptr, 1, 0);
    Matrix<double> w(2, 3);
    w.data = k.data;
    for (int py = 0; py < 4; ++py)
        for (int px = 0; px < 4; ++px) {
            Matrix<double> v(3, 1);
            for (int c = 0; c < 3; ++c) v.at(c, 0) = x.at(0, c, py, px);
            auto prod = matmul(w, v);
            for (int o = 0; o < 2; ++o)
                CHECK(y.at(0, o, py, px) == doctest::Approx(prod.at(o, 0)).epsilon(1e-12));
        }
}

TEST_CASE("matmul: identity, counting, and direct-summation oracle") {
    auto i3 = Matrix<double>::identity(3);
    auto prod = matmul(i3, i3);
    CHECK(prod.data == i3.data);

    Matrix<double> ones23(2, 3), ones34(3, 4);
    for (auto& v : ones23.data) v = 1.0;
    for (auto& v : ones34.data) v = 1.0;
    auto counted = matmul(ones23, ones34);
    for (auto v : counted.data) CHECK(v == 3.0);

    std::mt19937_64 rng(3);
    Matrix<double> a(5, 7), b(7, 2);
    oracle::randomize(a.data, rng);
    oracle::randomize(b.data, rng);
    auto fast = matmul(a, b);
    auto slow = oracle::matmul_naive(a, b);
    CHECK(oracle::max_abs_diff(fast.data, slow.data) <= 1e-13);

    Matrix<double> bad(4, 4);
    CHECK_THROWS_AS(matmul(ones23, bad), std::invalid_argument);
}

TEST_CASE("matmul associativity to tolerance") {
    std::mt19937_64 rng(11);
    Matrix<double> a(4, 6), b(6, 5), c(5, 3);
    oracle::randomize(a.data, rng);
    oracle::randomize(b.data, rng);
    oracle::randomize(c.data, rng);
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    CHECK(oracle::max_abs_diff(left.data, right.data) <= 1e-10);
}

TEST_CASE("maxpool: window maxima, tie-break, and loop oracle") {
    Tensor4<double> x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    auto res = maxpool2d(x, 2, 2);
    CHECK(res.output.data[0] == 4.0);
    CHECK(res.argmax[0] == 3);

    Tensor4<double> flat(1, 1, 2, 2);
    flat.data = {5, 5, 5, 5};
    auto tie = maxpool2d(flat, 2, 2);
    CHECK(tie.argmax[0] == 0);  // first (lowest linear) index wins

    std::mt19937_64 rng(13);
    auto r = oracle::random_tensor<double>(2, 3, 7, 7, rng);
    auto fast = maxpool2d(r, 2, 2);
    auto slow = oracle::maxpool_naive(r, 2, 2);
    CHECK(oracle::max_abs_diff(fast.output.data, slow.data) == 0.0);
}

TEST_CASE("constructors reject invalid shapes") {
    CHECK_THROWS_AS(Tensor4<float>(0, 1, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(ConvKernel<float>(1, 1, 2), std::invalid_argument);  // even kernel
}
