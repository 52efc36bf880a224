#include <catch2/catch_amalgamated.hpp>

#include "widin/world.hpp"

using namespace widin;
using Catch::Matchers::WithinAbs;

namespace {

// Solve A z = b for symmetric positive-definite A by Gaussian elimination
// with partial pivoting; test-side oracle only.
std::vector<double> gauss_solve(Tensor a, std::vector<double> b) {
    const int n = a.rows;
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a.at(r, col)) > std::abs(a.at(piv, col))) piv = r;
        if (piv != col) {
            for (int j = 0; j < n; ++j) std::swap(a.at(col, j), a.at(piv, j));
            std::swap(b[col], b[piv]);
        }
        const double d = a.at(col, col);
        for (int r = col + 1; r < n; ++r) {
            const double f = a.at(r, col) / d;
            for (int j = col; j < n; ++j) a.at(r, j) -= f * a.at(col, j);
            b[r] -= f * b[col];
        }
    }
    std::vector<double> z(n);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int j = r + 1; j < n; ++j) s -= a.at(r, j) * z[j];
        z[r] = s / a.at(r, r);
    }
    return z;
}

WorldSpec small_spec() {
    WorldSpec s;
    s.num_classes = 4;
    s.num_target_domains = 2;
    s.dim = 16;
    s.foreign_dim = 24;
    s.train_per_class = 6;
    s.test_per_class = 4;
    s.seed = 9;
    return s;
}

}  // namespace

TEST_CASE("world generation is deterministic in the seed", "[world]") {
    const auto w1 = generate_world(small_spec());
    const auto w2 = generate_world(small_spec());
    CHECK(checksum(w1->class_text()) == checksum(w2->class_text()));
    CHECK(w1->encoder().weights_checksum() == w2->encoder().weights_checksum());
    const Sample a = w1->make_sample(1, 2, 3, SplitRole::Test);
    const Sample b = w2->make_sample(1, 2, 3, SplitRole::Test);
    CHECK(a.x.data == b.x.data);
    CHECK(a.v.data == b.v.data);

    WorldSpec other = small_spec();
    other.seed = 10;
    const auto w3 = generate_world(other);
    CHECK(checksum(w1->class_text()) != checksum(w3->class_text()));
}

TEST_CASE("sampling is keyed by counters, not call order", "[world]") {
    const auto w = generate_world(small_spec());
    const Sample direct = w->make_sample(0, 1, 5, SplitRole::Test);
    (void)w->sample_split(1, 3, SplitRole::Test);  // unrelated sampling in between
    const Sample again = w->make_sample(0, 1, 5, SplitRole::Test);
    CHECK(direct.x.data == again.x.data);
}

TEST_CASE("degenerate world collapses to class prototypes", "[world]") {
    WorldSpec s = small_spec();
    s.sigma_class_map = 0.0;
    s.lambda_domain = 0.0;
    s.sigma_noise = 0.0;
    const auto w = generate_world(s);
    for (int c = 0; c < s.num_classes; ++c) {
        const Sample smp = w->make_sample(1, c, 0, SplitRole::Test);
        const Tensor expect = l2_normalized(row_of(w->class_text(), c));
        CHECK(smp.x.data == expect.data);
    }
}

TEST_CASE("zero-shot is solvable by construction in the clean world", "[world]") {
    WorldSpec s = small_spec();
    s.sigma_class_map = 0.0;
    s.lambda_domain = 0.0;
    s.sigma_noise = 0.0;
    const auto w = generate_world(s);
    for (const DatasetSplit& split : w->test_splits(3)) {
        for (const Sample& smp : split.samples) {
            const Tensor scores = matmul(smp.x, transpose(w->class_text()));
            CHECK(argmax_row(scores, 0) == smp.label);
        }
    }
}

TEST_CASE("split shapes and counts", "[world]") {
    WorldSpec s = small_spec();
    s.num_classes = 8;
    s.num_target_domains = 3;
    const auto w = generate_world(s);
    const DatasetSplit train = w->sample_split(0, 50, SplitRole::TrainSource);
    CHECK(train.size() == 400);
    CHECK(train.per_class_counts == std::vector<int>(8, 50));

    CHECK(w->test_splits().size() == 4);  // one source + three targets

    CHECK_THROWS_AS(w->sample_split(0, 0, SplitRole::TrainSource), Error);
    CHECK_THROWS_AS(w->sample_split(5, 3, SplitRole::Test), Error);
    CHECK_THROWS_AS(w->sample_split(1, 3, SplitRole::TrainSource), Error);
}

TEST_CASE("long-tail profile is monotone from max to min", "[world]") {
    WorldSpec s = small_spec();
    s.num_classes = 10;
    s.longtail_rho = 1.0;
    s.longtail_max = 100;
    s.longtail_min = 2;
    const auto w = generate_world(s);
    const std::vector<int> counts = w->longtail_counts();
    REQUIRE(counts.size() == 10);
    CHECK(counts.front() == 100);
    CHECK(counts.back() == 2);
    for (size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] <= counts[i - 1]);

    s.longtail_rho = 0.0;
    const auto balanced = generate_world(s);
    for (int c : balanced->longtail_counts()) CHECK(c == 100);
}

TEST_CASE("train and test streams never collide", "[world]") {
    const auto w = generate_world(small_spec());
    const DatasetSplit train = w->sample_split(0, 6, SplitRole::TrainSource);
    const DatasetSplit test = w->sample_split(0, 6, SplitRole::Test);
    for (size_t i = 0; i < train.size(); ++i)
        CHECK(train.samples[i].x.data != test.samples[i].x.data);
}

TEST_CASE("oracle decomposition returns the generative factors", "[world]") {
    const auto w = generate_world(small_spec());
    const Sample a = w->make_sample(1, 2, 0, SplitRole::Test);
    const Sample b = w->make_sample(2, 2, 1, SplitRole::Test);  // same class, other domain
    const Sample c = w->make_sample(1, 3, 2, SplitRole::Test);  // same domain, other class
    auto [ca, da] = w->oracle_decompose(a);
    auto [cb, db] = w->oracle_decompose(b);
    auto [cc, dc] = w->oracle_decompose(c);
    CHECK(ca.data == cb.data);
    CHECK(da.data == dc.data);
    CHECK(ca.data != cc.data);
    CHECK(da.data != db.data);

    WorldSpec zero = small_spec();
    zero.lambda_domain = 0.0;
    const auto wz = generate_world(zero);
    auto [czp, dzp] = wz->oracle_decompose(wz->make_sample(2, 1, 0, SplitRole::Test));
    for (double vv : dzp.data) CHECK(vv == 0.0);

    // a sample from a different world is foreign
    const auto w2 = generate_world(zero);
    CHECK_THROWS_AS(w->oracle_decompose(w2->make_sample(0, 0, 0, SplitRole::Test)), Error);
}

TEST_CASE("domain offsets have unit direction scaled by lambda", "[world]") {
    const auto w = generate_world(small_spec());
    for (int g = 0; g < w->spec().num_domains(); ++g)
        CHECK_THAT(norm(w->domain_offset(g)), WithinAbs(w->spec().lambda_domain, 1e-12));
}

TEST_CASE("foreign view is the stored linear map", "[world]") {
    const auto w = generate_world(small_spec());
    RngStream rng(3);
    const Tensor x1 = Tensor::gaussian(1, 16, rng);
    const Tensor x2 = Tensor::gaussian(1, 16, rng);

    // identity map is a no-op
    const Tensor vi = foreign_project(x1, Tensor::identity(16));
    CHECK(vi.data == x1.data);

    // linearity
    const Tensor lhs = w->foreign_view(add(scale(x1, 0.7), scale(x2, -1.3)));
    const Tensor rhs = add(scale(w->foreign_view(x1), 0.7), scale(w->foreign_view(x2), -1.3));
    for (size_t i = 0; i < lhs.size(); ++i) CHECK_THAT(lhs.data[i], WithinAbs(rhs.data[i], 1e-12));

    CHECK_THROWS_AS(w->foreign_view(Tensor::gaussian(1, 8, rng)), ShapeError);
}

TEST_CASE("foreign map has full column rank: least squares recovers x", "[world]") {
    const auto w = generate_world(small_spec());
    const Tensor& m = w->foreign_map();  // d x d_v
    RngStream rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = l2_normalized(Tensor::gaussian(1, 16, rng));
        const Tensor v = w->foreign_view(x);
        // x_hat = v M^T (M M^T)^{-1} via normal equations
        const Tensor mmt = matmul(m, transpose(m));
        const Tensor rhs = matmul(v, transpose(m));
        const std::vector<double> z = gauss_solve(mmt, rhs.data);
        const Tensor xhat(1, 16, z);
        CHECK(norm(sub(w->foreign_view(xhat), v)) < 1e-9);
        CHECK(norm(sub(xhat, x)) < 1e-9);
    }
}

TEST_CASE("world spec validation", "[world]") {
    WorldSpec s = small_spec();
    s.num_classes = 1;
    CHECK_THROWS_AS(generate_world(s), Error);
    s = small_spec();
    s.num_target_domains = 0;
    CHECK_THROWS_AS(generate_world(s), Error);
    s = small_spec();
    s.dim = 6;
    CHECK_THROWS_AS(generate_world(s), Error);
    s = small_spec();
    s.foreign_dim = 8;
    CHECK_THROWS_AS(generate_world(s), Error);
}
