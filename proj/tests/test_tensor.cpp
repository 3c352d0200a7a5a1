#include <doctest.h>

#include <cmath>

#include "aria/rng.hpp"
#include "aria/tensor.hpp"

using namespace aria;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// Quadruple-loop cross-correlation oracle, all in double.
TensorD conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const int ci = x.dim(0), h = x.dim(1), ww = x.dim(2);
    const int co = w.dim(0), k = w.dim(2);
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (ww + 2 * pad - k) / stride + 1;
    TensorD y({co, oh, ow});
    for (int o = 0; o < co; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b[o];
                for (int c = 0; c < ci; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                            acc += static_cast<double>(x.at3(c, iy, ix)) *
                                   static_cast<double>(w.data[((static_cast<size_t>(o) * ci + c) * k + ky) * k + kx]);
                        }
                y.at3(o, oy, ox) = acc;
            }
    return y;
}

}  // namespace

TEST_CASE("conv2d zero input gives zero output") {
    Tensor x({1, 3, 3});
    Rng rng(7);
    Tensor w = random_tensor({2, 1, 2, 2}, rng);
    Tensor b({2});
    Tensor y = kernels::conv2d(x, w, b, 1, 0);
    for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("conv2d 1x1 identity kernel passes input through") {
    Rng rng(3);
    Tensor x = random_tensor({1, 4, 5}, rng);
    Tensor w({1, 1, 1, 1}, {1.0f});
    Tensor b({1}, {0.0f});
    Tensor y = kernels::conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape == x.shape);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("conv2d matches quadruple-loop oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({1, 4, 4}, rng);
        Tensor w = random_tensor({1, 1, 2, 2}, rng);
        Tensor b = random_tensor({1}, rng);
        const int stride = 1 + trial % 2;
        const int pad = trial % 2;
        Tensor y = kernels::conv2d(x, w, b, stride, pad);
        TensorD ref = conv_oracle(x, w, b, stride, pad);
        REQUIRE(y.numel() == ref.numel());
        for (size_t i = 0; i < y.numel(); ++i) {
            CHECK(std::abs(y.data[i] - ref.data[i]) < 1e-6);
        }
    }
}

TEST_CASE("conv2d rejects mismatched shapes") {
    Tensor x({2, 4, 4});
    Tensor w({1, 3, 2, 2});
    Tensor b({1});
    CHECK_THROWS_AS(kernels::conv2d(x, w, b, 1, 0), std::invalid_argument);
}

TEST_CASE("dense identity weight copies input") {
    Tensor x({3}, {0.5f, -1.25f, 2.0f});
    Tensor w({3, 3});
    for (int i = 0; i < 3; ++i) w.data[static_cast<size_t>(i) * 3 + i] = 1.0f;
    Tensor b({3});
    Tensor y = kernels::dense(x, w, b);
    for (int i = 0; i < 3; ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("dense zero weight returns bias") {
    Tensor x({2}, {3.0f, 4.0f});
    Tensor w({3, 2});
    Tensor b({3}, {1.0f, -2.0f, 0.5f});
    Tensor y = kernels::dense(x, w, b);
    for (int i = 0; i < 3; ++i) CHECK(y.data[i] == b.data[i]);
}

TEST_CASE("dense matches hand summation") {
    Rng rng(17);
    Tensor x = random_tensor({2}, rng);
    Tensor w = random_tensor({3, 2}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y = kernels::dense(x, w, b);
    for (int i = 0; i < 3; ++i) {
        const double ref = static_cast<double>(b.data[i]) +
                           static_cast<double>(w.data[static_cast<size_t>(i) * 2]) * x.data[0] +
                           static_cast<double>(w.data[static_cast<size_t>(i) * 2 + 1]) * x.data[1];
        CHECK(std::abs(y.data[i] - ref) < 1e-6);
    }
}

TEST_CASE("avgpool2d constant plane stays constant") {
    Tensor x({1, 4, 4});
    x.fill(0.37f);
    Tensor y = kernels::avgpool2d(x, 2);
    for (float v : y.data) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
}

TEST_CASE("avgpool2d 2x2 window means four values") {
    Tensor x({1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    Tensor y = kernels::avgpool2d(x, 2);
    REQUIRE(y.numel() == 1);
    CHECK(y.data[0] == doctest::Approx(2.5f));
}

TEST_CASE("avgpool2d matches loop oracle") {
    Rng rng(23);
    Tensor x = random_tensor({2, 6, 6}, rng);
    Tensor y = kernels::avgpool2d(x, 3);
    for (int c = 0; c < 2; ++c)
        for (int oy = 0; oy < 2; ++oy)
            for (int ox = 0; ox < 2; ++ox) {
                double acc = 0.0;
                for (int dy = 0; dy < 3; ++dy)
                    for (int dx = 0; dx < 3; ++dx) acc += x.at3(c, oy * 3 + dy, ox * 3 + dx);
                CHECK(std::abs(y.at3(c, oy, ox) - acc / 9.0) < 1e-6);
            }
}

TEST_CASE("avgpool2d rejects indivisible planes") {
    Tensor x({1, 5, 4});
    CHECK_THROWS_AS(kernels::avgpool2d(x, 2), std::invalid_argument);
}

TEST_CASE("global_avgpool of constant plane") {
    Tensor x({3, 4, 4});
    x.fill(-1.5f);
    Tensor y = kernels::global_avgpool(x);
    REQUIRE(y.numel() == 3);
    for (float v : y.data) CHECK(v == doctest::Approx(-1.5f));
}

TEST_CASE("l2_normalize 3-4-5 triangle") {
    Tensor v({2}, {3.0f, 4.0f});
    Tensor y = kernels::l2_normalize(v);
    CHECK(y.data[0] == doctest::Approx(0.6f));
    CHECK(y.data[1] == doctest::Approx(0.8f));
}

TEST_CASE("l2_normalize leaves unit vectors unchanged") {
    Tensor v({3}, {1.0f, 0.0f, 0.0f});
    Tensor y = kernels::l2_normalize(v);
    for (int i = 0; i < 3; ++i) CHECK(y.data[i] == doctest::Approx(v.data[i]));
}

TEST_CASE("l2_normalize guards the zero vector") {
    Tensor v({4});
    Tensor y = kernels::l2_normalize(v);
    for (float x : y.data) CHECK(x == 0.0f);
}

TEST_CASE("l2_normalize output norm is 1 for healthy inputs") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor v = random_tensor({8}, rng, -2.0f, 2.0f);
        double n2 = 0.0;
        for (float x : v.data) n2 += static_cast<double>(x) * x;
        if (std::sqrt(n2) < 1e-6) continue;
        Tensor y = kernels::l2_normalize(v);
        double out = 0.0;
        for (float x : y.data) out += static_cast<double>(x) * x;
        CHECK(std::abs(std::sqrt(out) - 1.0) < 1e-5);
    }
}

TEST_CASE("cosine similarity of identical vectors is 1") {
    Tensor u({3}, {0.3f, -0.2f, 0.9f});
    CHECK(kernels::cosine_similarity(u, u) == doctest::Approx(1.0f));
}

TEST_CASE("cosine similarity of orthogonal unit vectors is 0") {
    Tensor u({2}, {1.0f, 0.0f});
    Tensor v({2}, {0.0f, 1.0f});
    CHECK(kernels::cosine_similarity(u, v) == doctest::Approx(0.0f));
}

TEST_CASE("cosine similarity of opposite vectors is -1") {
    Tensor u({3}, {0.5f, -1.0f, 2.0f});
    Tensor v({3}, {-0.5f, 1.0f, -2.0f});
    CHECK(kernels::cosine_similarity(u, v) == doctest::Approx(-1.0f));
}

TEST_CASE("cosine similarity rejects length mismatch") {
    Tensor u({2}), v({3});
    CHECK_THROWS_AS(kernels::cosine_similarity(u, v), std::invalid_argument);
}

TEST_CASE("cosine similarity stays within [-1, 1]") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor u = random_tensor({6}, rng, -3.0f, 3.0f);
        Tensor v = random_tensor({6}, rng, -3.0f, 3.0f);
        const float c = kernels::cosine_similarity(u, v);
        CHECK(c >= -1.0f - 1e-6f);
        CHECK(c <= 1.0f + 1e-6f);
    }
}

TEST_CASE("tensor shape/data invariant is enforced") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
}

TEST_CASE("rng streams are deterministic and distinct") {
    Rng a(123, 1), b(123, 1), c(123, 2);
    bool all_same = true;
    for (int i = 0; i < 16; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        if (x != c.next_u64()) all_same = false;
    }
    CHECK_FALSE(all_same);
}

TEST_CASE("rng normal moments are sane") {
    Rng rng(99);
    double sum = 0.0, sum2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum2 += x * x;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}
