#include <catch2/catch_amalgamated.hpp>

#include "scenemine/nn.hpp"
#include "scenemine/tensor.hpp"

using namespace scenemine;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.values_mut()) v = rng.uniform(lo, hi);
    return t;
}

/// Kink-free scalarization: chained means weighted by a fixed random vector.
Tensor smooth_reduce(const Tensor& t, double weight_seed) {
    Rng rng(static_cast<std::uint64_t>(weight_seed));
    Tensor w = Tensor::zeros(t.shape());
    for (auto& v : w.values_mut()) v = rng.uniform(-1.0, 1.0);
    Tensor prod = ad::mul(t, w);
    Tensor flat = ad::reshape(prod, {static_cast<int>(t.numel())});
    return ad::scale(ad::mean_over_axis(flat, 0), static_cast<double>(t.numel()));
}

nn::GradCheckOptions resample_with(Rng& rng) {
    nn::GradCheckOptions opt;
    opt.resample = [&rng](Tensor& x) {
        for (auto& v : x.values_mut()) v = rng.uniform(-2.0, 2.0);
    };
    return opt;
}

}  // namespace

TEST_CASE("leaky_relu forward matches the pinned slope") {
    Tensor x = Tensor::from({3}, {-1.0, 0.0, 2.0});
    Tensor y = ad::leaky_relu(x, 0.01);
    CHECK(y.value_at(0) == Catch::Approx(-0.01));
    CHECK(y.value_at(1) == 0.0);
    CHECK(y.value_at(2) == 2.0);
}

TEST_CASE("softmax is symmetric, positive, and sums to one") {
    Tensor y = ad::softmax(Tensor::from({2}, {0.0, 0.0}));
    CHECK(y.value_at(0) == 0.5);
    CHECK(y.value_at(1) == 0.5);

    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        Tensor t = random_tensor({5}, rng, -30.0, 30.0);
        Tensor s = ad::softmax(t);
        double sum = 0.0;
        for (std::size_t j = 0; j < s.numel(); ++j) {
            CHECK(s.value_at(j) > 0.0);
            sum += s.value_at(j);
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("conv2d with a 1x1 identity kernel is the identity") {
    Rng rng(3);
    Tensor x = random_tensor({1, 4, 4}, rng);
    Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
    Tensor b = Tensor::zeros({1});
    Tensor y = ad::conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == ad::Shape{1, 4, 4});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value_at(i) == x.value_at(i));
}

TEST_CASE("l2_normalize yields unit norm, identity below epsilon") {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        Tensor x = random_tensor({7}, rng);
        Tensor y = ad::l2_normalize(x);
        double n = 0.0;
        for (std::size_t j = 0; j < y.numel(); ++j) n += y.value_at(j) * y.value_at(j);
        CHECK(std::sqrt(n) == Catch::Approx(1.0).margin(1e-9));
    }
    Tensor tiny = Tensor::from({2}, {1e-15, -1e-15});
    Tensor same = ad::l2_normalize(tiny, 1e-12);
    CHECK(same.value_at(0) == 1e-15);
    CHECK(same.value_at(1) == -1e-15);
}

TEST_CASE("backward: simple compositions") {
    SECTION("f(x) = x*x at 3 has gradient 6") {
        Tensor x = Tensor::scalar(3.0);
        x.set_requires_grad(true);
        Tensor y = ad::mul(x, x);
        ad::backward(y);
        CHECK(x.grad()[0] == Catch::Approx(6.0));
    }
    SECTION("f(x,y) = x + y has gradients (1, 1)") {
        Tensor x = Tensor::scalar(1.5);
        Tensor y = Tensor::scalar(-2.5);
        x.set_requires_grad(true);
        y.set_requires_grad(true);
        ad::backward(ad::add(x, y));
        CHECK(x.grad()[0] == 1.0);
        CHECK(y.grad()[0] == 1.0);
    }
    SECTION("backward rejects non-scalar outputs") {
        Tensor x = Tensor::from({2}, {1.0, 2.0});
        x.set_requires_grad(true);
        CHECK_THROWS_AS(ad::backward(ad::scale(x, 2.0)), ad::ShapeError);
    }
}

TEST_CASE("shape errors name the operation and both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4});
    try {
        ad::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ad::ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4]") != std::string::npos);
    }
}

TEST_CASE("grad_check: every primitive under 1e-4 relative error") {
    Rng rng(1234);
    auto opt = resample_with(rng);

    SECTION("matmul") {
        Rng wr(77);
        Tensor a = random_tensor({4, 3}, wr);
        Tensor x = random_tensor({3, 2}, rng);
        const double err = nn::grad_check([&](const Tensor& t) { return smooth_reduce(ad::matmul(a, t), 1); }, x, opt);
        CHECK(err < 1e-4);
    }
    SECTION("add/sub/mul/affine") {
        Rng wr(78);
        Tensor other = random_tensor({6}, wr);
        Tensor x = random_tensor({6}, rng);
        double err = nn::grad_check(
            [&](const Tensor& t) { return smooth_reduce(ad::add(ad::mul(t, other), ad::affine(ad::sub(t, other), 0.5, 1.0)), 2); },
            x, opt);
        CHECK(err < 1e-4);
    }
    SECTION("conv2d + leaky_relu stack") {
        Rng wr(79);
        Tensor w = random_tensor({2, 3, 3, 3}, wr, -0.5, 0.5);
        Tensor b = random_tensor({2}, wr, -0.5, 0.5);
        Tensor x = random_tensor({3, 6, 6}, rng);
        double err = nn::grad_check(
            [&](const Tensor& t) { return smooth_reduce(ad::leaky_relu(ad::conv2d(t, w, b, 2, 1), 0.01), 3); }, x, opt);
        CHECK(err < 1e-4);
        // And with respect to the kernel.
        err = nn::grad_check(
            [&](const Tensor& t) { return smooth_reduce(ad::leaky_relu(ad::conv2d(x, t, b, 2, 1), 0.01), 4); }, w, opt);
        CHECK(err < 1e-4);
    }
    SECTION("max_pool2d") {
        Tensor x = random_tensor({2, 4, 4}, rng);
        const double err =
            nn::grad_check([&](const Tensor& t) { return smooth_reduce(ad::max_pool2d(t, 2, 2), 5); }, x, opt);
        CHECK(err < 1e-4);
    }
    SECTION("sigmoid/tanh/softmax") {
        Tensor x = random_tensor({5}, rng);
        const double err = nn::grad_check(
            [&](const Tensor& t) { return smooth_reduce(ad::softmax(ad::add(ad::sigmoid(t), ad::tanh(t))), 6); }, x,
            opt);
        CHECK(err < 1e-4);
    }
    SECTION("l2_normalize") {
        Tensor x = random_tensor({6}, rng);
        const double err =
            nn::grad_check([&](const Tensor& t) { return smooth_reduce(ad::l2_normalize(t), 7); }, x, opt);
        CHECK(err < 1e-4);
    }
    SECTION("mean_over_axis/concat/slice/reshape") {
        Rng wr(80);
        Tensor other = random_tensor({2, 3}, wr);
        Tensor x = random_tensor({2, 3}, rng);
        const double err = nn::grad_check(
            [&](const Tensor& t) {
                Tensor c = ad::concat(t, other, 1);              // [2,6]
                Tensor s = ad::slice(c, 1, 1, 4);                // [2,4]
                Tensor r = ad::reshape(s, {8});
                return smooth_reduce(ad::mean_over_axis(ad::reshape(r, {4, 2}), 0), 8);
            },
            x, opt);
        CHECK(err < 1e-4);
    }
    SECTION("abs_sum") {
        Tensor x = random_tensor({9}, rng);
        const double err = nn::grad_check([&](const Tensor& t) { return ad::abs_sum(t); }, x, opt);
        CHECK(err < 1e-4);
    }
    SECTION("smul") {
        Rng wr(81);
        Tensor s = random_tensor({1}, wr);
        Tensor x = random_tensor({6}, rng);
        const double err = nn::grad_check([&](const Tensor& t) { return smooth_reduce(ad::smul(t, s), 9); }, x, opt);
        CHECK(err < 1e-4);
        const double err_s =
            nn::grad_check([&](const Tensor& t) { return smooth_reduce(ad::smul(x, t), 10); }, s, opt);
        CHECK(err_s < 1e-4);
    }
}

TEST_CASE("grad_check on a quadratic form is exact to rounding") {
    Rng rng(42);
    Tensor a = random_tensor({4, 4}, rng);
    Tensor x = random_tensor({4}, rng);
    const double err = nn::grad_check(
        [&](const Tensor& t) {
            Tensor ax = ad::matmul(a, t);
            Tensor q = ad::mul(t, ax);
            return ad::scale(ad::mean_over_axis(q, 0), 4.0);
        },
        x);
    CHECK(err < 1e-9);
}

TEST_CASE("adam_step") {
    SECTION("zero gradient leaves parameters unchanged") {
        nn::ParameterStore store;
        Tensor p = store.add("p", {3});
        p.values_mut() = {1.0, -2.0, 3.0};
        p.zero_grad();
        store.adam_step(0.1);
        CHECK(p.values() == std::vector<double>{1.0, -2.0, 3.0});
    }
    SECTION("single step from zero moments matches the closed form") {
        // Delta = -lr * sign(g) / (1 + eps/|g|)
        nn::ParameterStore store;
        Tensor p = store.add("p", {2});
        p.values_mut() = {0.5, 0.5};
        p.zero_grad();
        const double g0 = 0.3, g1 = -1.7, lr = 1e-2, eps = 1e-8;
        p.grad_mut() = {g0, g1};
        store.adam_step(lr, 0.9, 0.999, eps);
        const double d0 = -lr * 1.0 / (1.0 + eps / std::abs(g0));
        const double d1 = lr * 1.0 / (1.0 + eps / std::abs(g1));
        CHECK(p.values()[0] == Catch::Approx(0.5 + d0).epsilon(1e-12));
        CHECK(p.values()[1] == Catch::Approx(0.5 + d1).epsilon(1e-12));
    }
    SECTION("constant gradient converges to steps of lr magnitude") {
        nn::ParameterStore store;
        Tensor p = store.add("p", {1});
        p.values_mut() = {0.0};
        const double lr = 1e-3, g = 0.42;
        double prev = 0.0;
        double last_step = 0.0;
        for (int i = 0; i < 200; ++i) {
            p.zero_grad();
            p.grad_mut() = {g};
            store.adam_step(lr);
            last_step = p.values()[0] - prev;
            prev = p.values()[0];
        }
        CHECK(std::abs(last_step) == Catch::Approx(lr).epsilon(1e-3));
        CHECK(last_step < 0.0);  // descends against a positive gradient
    }
}
