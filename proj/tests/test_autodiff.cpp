#include <catch2/catch_amalgamated.hpp>

#include "g3dm/autodiff.hpp"
#include "g3dm/optim.hpp"
#include "g3dm/rng.hpp"

#include <cmath>

using namespace g3dm;
using namespace g3dm::ad;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

std::vector<std::int32_t> random_neighbors(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::int32_t> nb(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            std::int32_t v;
            do {
                v = static_cast<std::int32_t>(rng.below(n));
            } while (v == static_cast<std::int32_t>(i));
            nb[i * k + j] = v;
        }
    return nb;
}

}  // namespace

TEST_CASE("linear with identity weights and zero bias reproduces the input") {
    auto x = leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    Tensor w({3, 3});
    for (int i = 0; i < 3; ++i) w.at(i, i) = 1.0;
    auto y = linear(x, leaf(w), leaf(Tensor::vector(3)));
    for (std::size_t i = 0; i < 6; ++i) CHECK(y->value[i] == x->value[i]);
}

TEST_CASE("leaky rectifier applies the negative slope") {
    auto x = leaf(Tensor({2}, {-1.0, 2.0}));
    auto y = leaky_relu(x, 0.2);
    CHECK(y->value[0] == Catch::Approx(-0.2));
    CHECK(y->value[1] == Catch::Approx(2.0));
}

TEST_CASE("concat along columns produces the summed width") {
    Rng rng(1);
    auto a = leaf(random_tensor(rng, {2, 3}));
    auto b = leaf(random_tensor(rng, {2, 5}));
    auto y = concat_cols({a, b});
    REQUIRE(y->value.shape() == std::vector<std::size_t>{2, 8});
    CHECK(y->value.at(0, 0) == a->value.at(0, 0));
    CHECK(y->value.at(1, 3) == b->value.at(1, 0));
}

TEST_CASE("shape mismatch raises an error naming the node") {
    auto x = leaf(Tensor({2, 3}));
    auto w = leaf(Tensor({4, 5}));
    CHECK_THROWS_WITH(linear(x, w, leaf(Tensor::vector(5)), "embed.head1"),
                      Catch::Matchers::ContainsSubstring("embed.head1"));
}

TEST_CASE("backward of a sum is a tensor of ones") {
    Rng rng(2);
    auto x = leaf(random_tensor(rng, {3, 4}));
    auto root = sum(x);
    backward(root);
    for (std::size_t i = 0; i < x->grad.size(); ++i) CHECK(x->grad[i] == 1.0);
}

TEST_CASE("backward of a column max with unique maxima is one-hot") {
    auto x = leaf(Tensor({3, 2}, {1, 9, 5, 2, 3, 4}));
    auto root = sum(max_pool_rows(x));
    backward(root);
    CHECK(x->grad.at(0, 0) == 0.0);
    CHECK(x->grad.at(1, 0) == 1.0);  // 5 is the column-0 max
    CHECK(x->grad.at(0, 1) == 1.0);  // 9 is the column-1 max
    CHECK(x->grad.at(2, 1) == 0.0);
}

TEST_CASE("max ties route gradient to the lowest index") {
    auto x = leaf(Tensor({3, 1}, {7.0, 7.0, 7.0}));
    auto root = sum(max_pool_rows(x));
    backward(root);
    CHECK(x->grad[0] == 1.0);
    CHECK(x->grad[1] == 0.0);
    CHECK(x->grad[2] == 0.0);
}

TEST_CASE("backward rejects a non-scalar root") {
    auto x = leaf(Tensor({2, 2}));
    auto y = leaky_relu(x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("finite_difference_check validates epsilon bounds") {
    auto x = leaf(Tensor({2}, {1.0, 2.0}));
    auto root = sum(x);
    CHECK_THROWS_AS(finite_difference_check(root, 1e-8), std::invalid_argument);
    CHECK_THROWS_AS(finite_difference_check(root, 1e-3), std::invalid_argument);
    CHECK_NOTHROW(finite_difference_check(root, 1e-5));
}

TEST_CASE("finite differences confirm a single linear layer") {
    Rng rng(3);
    auto x = leaf(random_tensor(rng, {4, 5}));
    auto w = leaf(random_tensor(rng, {5, 3}));
    auto b = leaf(random_tensor(rng, {3}));
    auto root = sum(leaky_relu(linear(x, w, b)));
    CHECK(finite_difference_check(root, 1e-5) <= 1e-7);
}

TEST_CASE("finite differences exclude coordinates at a max tie") {
    // Two coincident rows force a tie in the column max.
    auto x = leaf(Tensor({2, 2}, {0.5, 0.5, 0.5, 0.25}));
    auto root = sum(max_pool_rows(x));
    CHECK(finite_difference_check(root, 1e-5) <= 1e-7);
    backward(root);
    CHECK(x->grad.at(0, 0) == 1.0);  // tie in column 0 resolved to row 0
    CHECK(x->grad.at(1, 0) == 0.0);
}

TEST_CASE("every op passes finite differences on randomized shapes") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 100);
        const std::size_t m = 2 + rng.below(4);
        const std::size_t k = 2 + rng.below(4);
        const std::size_t c = 2 + rng.below(4);

        DYNAMIC_SECTION("seed " << seed) {
            auto x = leaf(random_tensor(rng, {m, k}));
            auto w = leaf(random_tensor(rng, {k, c}));
            auto b = leaf(random_tensor(rng, {c}));

            // linear -> leaky -> slice/concat mix
            auto lin = linear(x, w, b);
            auto act = leaky_relu(lin);
            auto cat = concat_cols({act, lin});
            auto sl = slice_cols(cat, 1, c + 1);
            CHECK(finite_difference_check(sum(sl), 1e-5) <= 1e-4);

            // matmul both modes
            auto a2 = leaf(random_tensor(rng, {m, k}));
            auto b2 = leaf(random_tensor(rng, {k, c}));
            CHECK(finite_difference_check(sum(matmul(a2, b2)), 1e-5) <= 1e-4);
            auto b3 = leaf(random_tensor(rng, {c, k}));
            CHECK(finite_difference_check(sum(matmul(a2, b3, true)), 1e-5) <= 1e-4);

            // add/sub/add_rowvec/affine/scale_vec/tanh/hinge/mod_2pi
            auto u = leaf(random_tensor(rng, {m, c}));
            auto v = leaf(random_tensor(rng, {m, c}));
            auto rv = leaf(random_tensor(rng, {c}));
            std::vector<double> sv;
            for (std::size_t i = 0; i < c; ++i) sv.push_back(rng.uniform(0.5, 2.0));
            auto mix = tanh_op(add_rowvec(sub(add(u, v), v), rv));
            mix = scale_vec_const(mix, sv);
            mix = affine_const(mix, 1.7, -0.3);
            auto kinked = hinge(mix);
            CHECK(finite_difference_check(sum(kinked), 1e-5) <= 1e-4);
            CHECK(finite_difference_check(sum(mod_2pi(affine_const(u, 4.0, 0.0))), 1e-5) <= 1e-4);

            // edge features -> max aggregate -> pools
            const std::size_t n_nodes = 4 + rng.below(3);
            const std::size_t kk = 1 + rng.below(3);
            auto feats = leaf(random_tensor(rng, {n_nodes, c}));
            auto ef = edge_features(feats, random_neighbors(rng, n_nodes, kk), kk);
            auto agg = max_aggregate(ef, kk);
            auto pooled = concat_cols({max_pool_rows(agg), mean_pool_rows(agg)});
            CHECK(finite_difference_check(sum(pooled), 1e-5) <= 1e-4);

            // batch norm, training and inference modes; a nonlinearity after
            // the norm keeps the column sums from vanishing identically
            auto bx = leaf(random_tensor(rng, {m + 2, c}));
            auto gamma = leaf(random_tensor(rng, {c}, 0.5, 1.5));
            auto beta = leaf(random_tensor(rng, {c}));
            CHECK(finite_difference_check(
                      sum(leaky_relu(batch_norm_rows(bx, gamma, beta, true))), 1e-5) <= 1e-4);
            auto rm = leaf(random_tensor(rng, {c}));
            auto rvar = leaf(random_tensor(rng, {c}, 0.5, 2.0));
            CHECK(finite_difference_check(
                      sum(leaky_relu(batch_norm_rows(bx, gamma, beta, false, rm, rvar))), 1e-5) <=
                  1e-4);

            // l2 distance and scalar mean
            auto e1 = leaf(random_tensor(rng, {1, c}));
            auto e2 = leaf(random_tensor(rng, {1, c}));
            auto d = l2_dist(e1, e2);
            CHECK(finite_difference_check(mean_scalars({d, sum(e1)}), 1e-5) <= 1e-4);

            // euler angles -> rotation matrix, weighted to break symmetry
            auto ang = leaf(random_tensor(rng, {3}, -1.5, 1.5));
            std::vector<double> wts;
            for (int i = 0; i < 9; ++i) wts.push_back(rng.uniform(-1.0, 1.0));
            CHECK(finite_difference_check(sum(scale_vec_const(euler_to_matrix(ang), wts)), 1e-5) <=
                  1e-4);
        }
    }
}

TEST_CASE("forward and backward are deterministic") {
    auto build = [] {
        Rng rng(77);
        auto x = leaf(random_tensor(rng, {5, 4}));
        auto w = leaf(random_tensor(rng, {4, 6}));
        auto b = leaf(random_tensor(rng, {6}));
        auto root = sum(max_pool_rows(leaky_relu(linear(x, w, b))));
        backward(root);
        return std::pair{root->value[0], x->grad};
    };
    auto [v1, g1] = build();
    auto [v2, g2] = build();
    CHECK(v1 == v2);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("feature normalization standardizes each column in training mode") {
    Rng rng(9);
    auto x = leaf(random_tensor(rng, {64, 7}, -5.0, 3.0));
    auto gamma = leaf(Tensor({7}, std::vector<double>(7, 1.0)));
    auto beta = leaf(Tensor::vector(7));
    auto y = batch_norm_rows(x, gamma, beta, true);
    for (std::size_t j = 0; j < 7; ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < 64; ++i) mean += y->value.at(i, j);
        mean /= 64.0;
        for (std::size_t i = 0; i < 64; ++i) {
            const double d = y->value.at(i, j) - mean;
            var += d * d;
        }
        var /= 64.0;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(var == Catch::Approx(1.0).margin(1e-3));
    }
}

TEST_CASE("adam leaves parameters unchanged under zero gradient and zero decay") {
    ParamSet p;
    p.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
    std::unordered_map<std::string, Tensor> grads{{"w", Tensor({3})}};
    AdamState st;
    AdamHyper hy;
    hy.weight_decay = 0.0;
    const ParamSet q = adam_update(p, grads, st, hy);
    for (std::size_t i = 0; i < 3; ++i) CHECK(q.get("w")[i] == p.get("w")[i]);
}

TEST_CASE("adam ignores entries without a gradient") {
    ParamSet p;
    p.add("w", Tensor({2}, {1.0, 2.0}));
    p.add("bn.running_mean", Tensor({2}, {0.3, 0.4}));
    std::unordered_map<std::string, Tensor> grads{{"w", Tensor({2}, {1.0, 1.0})}};
    AdamState st;
    const ParamSet q = adam_update(p, grads, st, AdamHyper{});
    CHECK(q.get("bn.running_mean")[0] == 0.3);
    CHECK(q.get("w")[0] != 1.0);
}

TEST_CASE("adam descends on a quadratic") {
    ParamSet p;
    p.add("w", Tensor({1}, {1.0}));
    AdamState st;
    AdamHyper hy;
    hy.weight_decay = 0.0;
    std::unordered_map<std::string, Tensor> grads;
    grads["w"] = Tensor({1}, {2.0});  // d/dw of w^2 at w=1
    const ParamSet q = adam_update(p, grads, st, hy);
    CHECK(q.get("w")[0] < 1.0);
}

TEST_CASE("adam converges on a 2-d quadratic in 200 steps") {
    ParamSet p;
    p.add("w", Tensor({2}, {1.0, -0.8}));
    AdamState st;
    AdamHyper hy;
    hy.lr = 0.05;
    hy.weight_decay = 0.0;
    for (int step = 0; step < 200; ++step) {
        std::unordered_map<std::string, Tensor> grads;
        Tensor g({2});
        g[0] = 2.0 * p.get("w")[0];
        g[1] = 2.0 * p.get("w")[1];
        grads["w"] = g;
        p = adam_update(p, grads, st, hy);
    }
    const double norm = std::hypot(p.get("w")[0], p.get("w")[1]);
    CHECK(norm < 1e-2);
}

TEST_CASE("adam rejects NaN gradients naming the parameter") {
    ParamSet p;
    p.add("stn.head5.weight", Tensor({1}, {1.0}));
    std::unordered_map<std::string, Tensor> grads;
    grads["stn.head5.weight"] = Tensor({1}, {std::nan("")});
    AdamState st;
    CHECK_THROWS_WITH(adam_update(p, grads, st, AdamHyper{}),
                      Catch::Matchers::ContainsSubstring("stn.head5.weight"));
}

TEST_CASE("a step with zero weight decay only changes parameters with nonzero gradients") {
    Rng rng(13);
    ParamSet p;
    p.add("used", random_tensor(rng, {4}));
    p.add("unused", random_tensor(rng, {4}));
    std::unordered_map<std::string, Tensor> grads;
    grads["used"] = random_tensor(rng, {4});
    grads["unused"] = Tensor({4});  // identically zero
    AdamState st;
    AdamHyper hy;
    hy.weight_decay = 0.0;
    const ParamSet q = adam_update(p, grads, st, hy);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(q.get("unused")[i] == p.get("unused")[i]);
        CHECK(q.get("used")[i] != p.get("used")[i]);
    }
}
