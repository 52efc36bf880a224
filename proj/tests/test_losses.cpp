#include <catch2/catch_amalgamated.hpp>

#include "widin/gradcheck.hpp"
#include "widin/losses.hpp"

using namespace widin;
using Catch::Matchers::WithinAbs;

namespace {
Tensor unit_rows(int n, int d, uint64_t seed) {
    RngStream rng(derive_seed(seed, "losses.rows"));
    Tensor t = Tensor::gaussian(n, d, rng);
    for (int i = 0; i < n; ++i) set_row(t, i, l2_normalized(row_of(t, i)));
    return t;
}
}  // namespace

TEST_CASE("instance alignment: identical rows give 2 ln n", "[losses]") {
    for (int n : {2, 4, 7}) {
        const Tensor u = l2_normalized(Tensor::row({1.0, 2.0, -1.0, 0.5}));
        Tensor batch(n, 4);
        for (int i = 0; i < n; ++i) set_row(batch, i, u);
        const double loss = instance_alignment_loss(batch, batch, 0.07);
        CHECK_THAT(loss, WithinAbs(2.0 * std::log(double(n)), 1e-9));
    }
}

TEST_CASE("instance alignment: orthogonal rows match the closed form", "[losses]") {
    const int B = 4;
    const double tau = 0.07;
    Tensor eye = Tensor::identity(B);  // mutually orthogonal unit rows in R^4
    const double loss = instance_alignment_loss(eye, eye, tau);
    const double expect = 2.0 * std::log1p((B - 1) * std::exp(-1.0 / tau));
    CHECK_THAT(loss, WithinAbs(expect, 1e-9));
    CHECK(loss >= 0.0);
}

TEST_CASE("instance alignment is permutation invariant", "[losses]") {
    const Tensor X = unit_rows(5, 8, 1);
    const Tensor T = unit_rows(5, 8, 2);
    const double base = instance_alignment_loss(X, T, 0.07);
    const std::vector<int> perm = {3, 0, 4, 1, 2};
    Tensor Xp(5, 8), Tp(5, 8);
    for (int i = 0; i < 5; ++i) {
        set_row(Xp, i, row_of(X, perm[i]));
        set_row(Tp, i, row_of(T, perm[i]));
    }
    CHECK_THAT(instance_alignment_loss(Xp, Tp, 0.07), WithinAbs(base, 1e-12));
}

TEST_CASE("instance alignment rejects a batch of one in CT mode", "[losses]") {
    const Tensor one = unit_rows(1, 8, 3);
    CHECK_THROWS_AS(instance_alignment_loss(one, one, 0.07), DegenerateInput);
}

TEST_CASE("instance alignment modes", "[losses]") {
    const Tensor X = unit_rows(6, 8, 4);
    const Tensor T = unit_rows(6, 8, 5);
    // None contributes exactly zero
    CHECK(instance_alignment_loss(X, T, 0.07, AlignmentMode::None) == 0.0);
    // SupCT with all-distinct labels is exactly CT
    const std::vector<int> distinct = {0, 1, 2, 3, 4, 5};
    CHECK_THAT(instance_alignment_loss(X, T, 0.07, AlignmentMode::SupCT, &distinct),
               WithinAbs(instance_alignment_loss(X, T, 0.07), 1e-12));
    // SupCT needs labels
    CHECK_THROWS_AS(instance_alignment_loss(X, T, 0.07, AlignmentMode::SupCT), Error);
    // repeated labels change the positive sets
    const std::vector<int> shared = {0, 0, 1, 1, 2, 2};
    const double sup = instance_alignment_loss(X, T, 0.07, AlignmentMode::SupCT, &shared);
    CHECK(sup != instance_alignment_loss(X, T, 0.07));
    CHECK(sup > 0.0);
}

TEST_CASE("class alignment closed forms", "[losses]") {
    const double tau = 0.07;
    // C = 1: single-class softmax is certain
    {
        Tensor table(1, 4);
        set_row(table, 0, l2_normalized(Tensor::row({1, 1, 0, 0})));
        const Tensor t_x = unit_rows(1, 4, 6);
        CHECK(class_alignment_loss(t_x, table, 0, tau) == 0.0);
    }
    // equidistant from all classes: ln C
    {
        const int C = 5;
        Tensor table = Tensor::identity(C);
        Tensor t_x(1, C);
        t_x.fill(1.0 / std::sqrt(double(C)));
        CHECK_THAT(class_alignment_loss(t_x, table, 2, tau), WithinAbs(std::log(double(C)), 1e-9));
    }
    // exact match with the label row, orthogonal otherwise: ln(1 + e^{-1/tau})
    {
        Tensor table = Tensor::identity(2);
        const Tensor t_x = row_of(table, 1);
        CHECK_THAT(class_alignment_loss(t_x, table, 1, tau),
                   WithinAbs(std::log1p(std::exp(-1.0 / tau)), 1e-9));
    }
    // invalid label
    {
        Tensor table = Tensor::identity(3);
        const Tensor t_x = unit_rows(1, 3, 7);
        CHECK_THROWS_AS(class_alignment_loss(t_x, table, 3, tau), Error);
        CHECK_THROWS_AS(class_alignment_loss(t_x, table, -1, tau), Error);
    }
}

TEST_CASE("feature loss modes", "[losses]") {
    const Tensor a = Tensor::row({1.0, 0.0});
    const Tensor zero = Tensor::row({0.0, 0.0});
    // identical inputs: zero in both modes
    CHECK(feature_loss(a, a, FeatureLossMode::MSE) == 0.0);
    CHECK_THAT(feature_loss(a, a, FeatureLossMode::Direction), WithinAbs(0.0, 1e-12));
    // weighted MSE
    CHECK_THAT(feature_loss(a, zero, FeatureLossMode::MSE), WithinAbs(1.0, 1e-15));
    // direction mode ignores scale
    CHECK_THAT(feature_loss(scale(a, 3.0), a, FeatureLossMode::Direction), WithinAbs(0.0, 1e-12));
    // zero norm is an error in direction mode
    CHECK_THROWS_AS(feature_loss(a, zero, FeatureLossMode::Direction), DegenerateInput);
    CHECK_THROWS_AS(feature_loss(zero, a, FeatureLossMode::Direction), DegenerateInput);
}

TEST_CASE("disentangle target identities", "[losses]") {
    const Tensor x = unit_rows(1, 6, 8);
    const Tensor t = unit_rows(1, 6, 9);
    const Tensor t2 = unit_rows(1, 6, 10);
    // t_x == t_c: exactly x
    CHECK(disentangle_target(x, t, t, 1.0).data == x.data);
    // k == 0: exactly x
    CHECK(disentangle_target(x, t, t2, 0.0).data == x.data);
    // worked arithmetic example
    const Tensor xe = disentangle_target(Tensor::row({1.0, 0.0}), Tensor::row({0.6, 0.8}),
                                         Tensor::row({1.0, 0.0}), 1.0);
    CHECK_THAT(xe.at(0, 0), WithinAbs(1.4, 1e-15));
    CHECK_THAT(xe.at(0, 1), WithinAbs(-0.8, 1e-15));
    CHECK_THROWS_AS(disentangle_target(x, t, t2, -1.0), Error);
}

TEST_CASE("predict_invariant and classify reductions", "[losses]") {
    const int d = 6, C = 3;
    const Tensor x = unit_rows(1, d, 11);
    const Linear fd_zero = Linear::zeros(d, d);
    const Linear fc = Linear::init(d, C, 77);
    // zero disentangler: x_e' == x and classify == plain linear classifier
    CHECK(predict_invariant(fd_zero, x).data == x.data);
    const Classification c = classify(fd_zero, fc, x);
    const Tensor plain = fc.forward(x);
    CHECK(c.logits.data == plain.data);
    CHECK(c.label == argmax_row(plain, 0));
    // linear residual with zero bias scales linearly
    Linear fd = Linear::init(d, d, 78, 0.1, /*bias=*/false);
    const Tensor lhs = predict_invariant(fd, scale(x, 2.0));
    const Tensor rhs = scale(predict_invariant(fd, x), 2.0);
    for (size_t i = 0; i < lhs.size(); ++i) CHECK_THAT(lhs.data[i], WithinAbs(rhs.data[i], 1e-12));
    // adding a constant to all logits never changes the argmax
    Linear fc_shift = fc;
    for (auto& v : fc_shift.b.data) v += 5.0;
    CHECK(classify(fd_zero, fc_shift, x).label == c.label);
}

TEST_CASE("word_image basics", "[losses]") {
    const int d = 8;
    const Tensor x = unit_rows(1, d, 12);
    const ProjectorParams zero = ProjectorParams::zeros(d);
    for (double v : word_image(zero, x).data) CHECK(v == 0.0);
    const ProjectorParams fp = ProjectorParams::init(d, 5);
    CHECK(word_image(fp, x).data == word_image(fp, x).data);
    CHECK_THROWS_AS(word_image(fp, Tensor(1, 4)), ShapeError);
}

TEST_CASE("logit adjusted loss", "[losses]") {
    const Tensor logits = Tensor::row({2.0, -1.0, 0.5});
    // uniform priors: gradients match plain cross-entropy (constant offset)
    {
        const std::vector<double> uniform = {1.0 / 3, 1.0 / 3, 1.0 / 3};
        const Tensor margins = log_prior_margins(uniform, 1.0);
        auto adjusted = [&](Graph& g, const std::vector<int>& p) {
            return logit_adjusted_loss_node(g, p[0], 1, margins);
        };
        auto plain = [&](Graph& g, const std::vector<int>& p) {
            return g.softmax_xent(p[0], 1, 1.0);
        };
        Graph g1, g2;
        const int a1 = g1.leaf(logits, true);
        const int a2 = g2.leaf(logits, true);
        g1.backward(adjusted(g1, {a1}));
        g2.backward(plain(g2, {a2}));
        for (size_t i = 0; i < g1.grad(a1).size(); ++i)
            CHECK_THAT(g1.grad(a1).data[i], WithinAbs(g2.grad(a2).data[i], 1e-12));
        // values differ by the constant shift only
        CHECK_THAT(g1.value(3).at(0, 0) - g2.value(1).at(0, 0), WithinAbs(0.0, 1e-12));
    }
    // margin scale 0 reduces to plain cross-entropy
    {
        const std::vector<double> priors = {0.7, 0.2, 0.1};
        Graph g;
        const int l = g.leaf(logits);
        const double adj = g.value(logit_adjusted_loss_node(g, l, 0, log_prior_margins(priors, 0.0))).at(0, 0);
        Graph g2;
        const double plain = g2.value(g2.softmax_xent(g2.leaf(logits), 0, 1.0)).at(0, 0);
        CHECK_THAT(adj, WithinAbs(plain, 1e-12));
    }
    // two classes, priors (0.9, 0.1): rare class boosted by ln 9 at the margin
    {
        const Tensor margins = log_prior_margins({0.9, 0.1}, 1.0);
        CHECK_THAT(margins.at(0, 0) - margins.at(0, 1), WithinAbs(std::log(9.0), 1e-12));
    }
    CHECK_THROWS_AS(log_prior_margins({0.5, 0.0, 0.5}, 1.0), Error);
    CHECK_THROWS_AS(log_prior_margins({0.5, -0.1, 0.6}, 1.0), Error);
    CHECK_THROWS_AS(log_prior_margins({0.5, 0.2}, 1.0), Error);
}

TEST_CASE("alignment losses are differentiable", "[losses]") {
    // gradcheck through the full symmetric InfoNCE with respect to T
    const Tensor X = unit_rows(3, 5, 20);
    auto f = [&](Graph& g, const std::vector<int>& p) {
        const int x = g.leaf(X);
        return instance_alignment_loss_node(g, x, g.l2_normalize(p[0]), 0.3);
    };
    CHECK(gradcheck(f, {unit_rows(3, 5, 21)}, 1e-5) < 1e-6);

    const Tensor table = unit_rows(4, 5, 22);
    auto f2 = [&](Graph& g, const std::vector<int>& p) {
        return class_alignment_loss_node(g, g.l2_normalize(p[0]), g.leaf(table), 2, 0.3);
    };
    CHECK(gradcheck(f2, {unit_rows(1, 5, 23)}, 1e-5) < 1e-6);

    const Tensor target = unit_rows(2, 5, 24);
    auto f3 = [&](Graph& g, const std::vector<int>& p) {
        return feature_loss_node(g, p[0], target, FeatureLossMode::Direction);
    };
    CHECK(gradcheck(f3, {unit_rows(2, 5, 25)}, 1e-5) < 1e-6);
}
