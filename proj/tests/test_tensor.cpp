#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "frmlp/ops.hpp"
#include "frmlp/tensor.hpp"

using namespace frmlp;

TEST_CASE("shape bookkeeping") {
    Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.dims() == Shape{2, 3, 4});
    CHECK(t.dtype() == DType::F32);
    CHECK_THROWS_AS(Tensor::zeros({2, 0, 4}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({2, -1}), ShapeError);
}

TEST_CASE("grad of sum is ones") {
    Tensor x = Tensor::full({2, 3}, 1.5, DType::F64, true);
    Tensor loss = ops::sum(x);
    loss.backward();
    REQUIRE(x.has_grad());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad_at(i) == doctest::Approx(1.0));
}

TEST_CASE("grad of sum of squares is 2x") {
    Rng rng = make_rng(3);
    Tensor x = Tensor::randn({4, 5}, rng, 1.0, DType::F64, true);
    Tensor loss = ops::sum(ops::mul(x, x));
    loss.backward();
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(x.grad_at(i) == doctest::Approx(2.0 * x.value_at(i)).epsilon(1e-12));
}

TEST_CASE("grads accumulate when a tensor is used twice") {
    Tensor x = Tensor::full({3}, 2.0, DType::F64, true);
    Tensor loss = ops::sum(ops::add(x, x));
    loss.backward();
    for (std::int64_t i = 0; i < 3; ++i) CHECK(x.grad_at(i) == doctest::Approx(2.0));
}

TEST_CASE("backward validates its input") {
    Tensor x = Tensor::full({2, 2}, 1.0, DType::F32, true);
    Tensor y = ops::mul(x, x);
    CHECK_THROWS_AS(y.backward(), UsageError);  // non-scalar

    Tensor loss = ops::sum(y);
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), UsageError);  // repeated backward: documented policy
}

TEST_CASE("backward on a non-finite loss is rejected") {
    Tensor x = Tensor::full({1}, 1e30, DType::F32, true);
    Tensor loss = ops::square(ops::square(x));  // overflows to inf at f32
    CHECK_THROWS_AS(loss.backward(), DomainError);
}

TEST_CASE("gradients are finite after backward on a composite graph") {
    Rng rng = make_rng(11);
    Tensor x = Tensor::randn({3, 4}, rng, 1.0, DType::F32, true);
    Tensor y = ops::mean(ops::square(ops::sigmoid(ops::scale(x, 3.0))));
    y.backward();
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(std::isfinite(x.grad_at(i)));
}

TEST_CASE("separate graphs accumulate into leaves until zero_grad") {
    Tensor x = Tensor::full({2}, 1.0, DType::F64, true);
    ops::sum(x).backward();
    ops::sum(x).backward();  // a second, fresh graph
    CHECK(x.grad_at(0) == doctest::Approx(2.0));
    x.zero_grad();
    CHECK(!x.has_grad());
    ops::sum(x).backward();
    CHECK(x.grad_at(0) == doctest::Approx(1.0));
}

TEST_CASE("detach cuts the graph") {
    Tensor x = Tensor::full({2}, 3.0, DType::F64, true);
    Tensor d = ops::mul(x, x).detach();
    CHECK(!d.requires_grad());
    CHECK(d.value_at(0) == doctest::Approx(9.0));
}

TEST_CASE("fixed seed reproduces bitwise-identical tensors") {
    Rng a = make_rng(123, 7);
    Rng b = make_rng(123, 7);
    Tensor ta = Tensor::randn({64}, a);
    Tensor tb = Tensor::randn({64}, b);
    for (std::int64_t i = 0; i < 64; ++i) CHECK(ta.data<float>()[i] == tb.data<float>()[i]);

    Rng c = make_rng(123, 8);  // different stream diverges
    Tensor tc = Tensor::randn({64}, c);
    bool all_same = true;
    for (std::int64_t i = 0; i < 64; ++i)
        all_same = all_same && ta.data<float>()[i] == tc.data<float>()[i];
    CHECK(!all_same);
}

TEST_CASE("deterministic forward and gradient across runs") {
    auto run = [] {
        Rng rng = make_rng(99);
        Tensor x = Tensor::randn({4, 4}, rng, 1.0, DType::F32, true);
        Tensor w = Tensor::randn({4, 4}, rng, 1.0, DType::F32, true);
        Tensor loss = ops::sum(ops::gelu(ops::matmul(x, w)));
        loss.backward();
        std::vector<float> out;
        for (std::int64_t i = 0; i < x.numel(); ++i)
            out.push_back(static_cast<float>(x.grad_at(i)));
        out.push_back(static_cast<float>(loss.item()));
        return out;
    };
    const auto r1 = run();
    const auto r2 = run();
    CHECK(r1 == r2);  // bitwise equality
}

TEST_CASE("dtype conversion round trip") {
    Rng rng = make_rng(5);
    Tensor x = Tensor::randn({7}, rng, 1.0, DType::F32);
    Tensor y = x.to(DType::F64).to(DType::F32);
    for (std::int64_t i = 0; i < 7; ++i) CHECK(x.data<float>()[i] == y.data<float>()[i]);
    CHECK_THROWS_AS(x.data<double>(), UsageError);
}

TEST_CASE("item and value access guards") {
    Tensor s = Tensor::scalar(4.25);
    CHECK(s.item() == doctest::Approx(4.25));
    Tensor v = Tensor::zeros({3});
    CHECK_THROWS_AS(v.item(), UsageError);
    CHECK_THROWS_AS(v.value_at(3), UsageError);
}

TEST_CASE("no-grad mode skips graph construction") {
    Tensor x = Tensor::full({2}, 1.0, DType::F32, true);
    NoGradGuard ng;
    Tensor y = ops::sum(x);
    CHECK(!y.requires_grad());
}
