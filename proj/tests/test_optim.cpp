#include <catch2/catch_amalgamated.hpp>

#include "widin/optim.hpp"

using namespace widin;
using Catch::Matchers::WithinAbs;

TEST_CASE("sgd step arithmetic", "[optim]") {
    Tensor p = Tensor::row({1.0});
    Tensor g = Tensor::row({1.0});
    OptimState st = OptimState::sgd(0.002);
    sgd_step({&p}, {&g}, st);
    CHECK_THAT(p.at(0, 0), WithinAbs(0.998, 1e-15));
    CHECK(st.step == 1);

    Tensor zero = Tensor::row({0.0});
    sgd_step({&p}, {&zero}, st);
    CHECK_THAT(p.at(0, 0), WithinAbs(0.998, 1e-15));

    OptimState frozen = OptimState::sgd(0.0);
    Tensor q = Tensor::row({5.0});
    sgd_step({&q}, {&g}, frozen);
    CHECK(q.at(0, 0) == 5.0);
}

TEST_CASE("sgd rejects shape mismatch", "[optim]") {
    Tensor p(2, 2);
    Tensor g(2, 3);
    OptimState st = OptimState::sgd(0.1);
    CHECK_THROWS_AS(sgd_step({&p}, {&g}, st), ShapeError);
}

TEST_CASE("adamw first step has unit bias-corrected ratio", "[optim]") {
    Tensor p = Tensor::row({1.0});
    Tensor g = Tensor::row({1.0});
    OptimState st = OptimState::adamw(1e-4);
    st.weight_decay = 0.0;
    adamw_step({&p}, {&g}, st);
    // m_hat / sqrt(v_hat) == 1 on step one, so the update is lr/(1 + eps).
    CHECK_THAT(p.at(0, 0), WithinAbs(1.0 - 1e-4, 1e-11));
}

TEST_CASE("adamw zero gradient leaves params unchanged when decay off", "[optim]") {
    Tensor p = Tensor::row({0.7, -0.3});
    Tensor g = Tensor::row({0.0, 0.0});
    OptimState st = OptimState::adamw(1e-3);
    st.weight_decay = 0.0;
    const Tensor before = p;
    adamw_step({&p}, {&g}, st);
    adamw_step({&p}, {&g}, st);
    CHECK(p.data == before.data);
}

TEST_CASE("adamw decoupled weight decay applies without gradient", "[optim]") {
    Tensor p = Tensor::row({1.0});
    Tensor g = Tensor::row({0.0});
    OptimState st = OptimState::adamw(0.01);
    adamw_step({&p}, {&g}, st);
    CHECK_THAT(p.at(0, 0), WithinAbs(1.0 - 0.01 * 0.01, 1e-15));
}

TEST_CASE("optimizer runs are bitwise deterministic", "[optim]") {
    auto run = [] {
        Tensor p = Tensor::row({0.4, -1.2, 3.3});
        OptimState st = OptimState::adamw(3e-3);
        for (int i = 0; i < 25; ++i) {
            Tensor g = Tensor::row({0.1 * i, -0.2, 0.05 * i});
            adamw_step({&p}, {&g}, st);
        }
        return p;
    };
    CHECK(run().data == run().data);
}

TEST_CASE("step counter increases strictly", "[optim]") {
    Tensor p = Tensor::row({1.0});
    Tensor g = Tensor::row({0.5});
    OptimState st = OptimState::adamw(1e-4);
    for (int64_t i = 1; i <= 5; ++i) {
        adamw_step({&p}, {&g}, st);
        CHECK(st.step == i);
    }
}
