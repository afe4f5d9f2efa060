#include <catch2/catch_amalgamated.hpp>

#include "g3dm/graphnet.hpp"
#include "g3dm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace g3dm;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.k = 3;
    cfg.input_dim = 6;
    cfg.edgeconv_widths = {8, 8, 8, 8, 8};
    cfg.stn_mlp_widths = {16, 16, 8, 8, 6};
    cfg.embed_mlp_widths = {16, 256};
    cfg.normalization = true;
    return cfg;
}

Template3D random_template(Rng& rng, int n, const char* id = "t") {
    Template3D t;
    t.template_id = id;
    t.finger_id = "f";
    t.pose_label = "front";
    for (int i = 0; i < n; ++i) {
        Minutia3D m;
        m.p = {rng.uniform(-150, 150), rng.uniform(-150, 150), rng.uniform(-80, 80)};
        m.o = scale_orientation({rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kPi)}, 25.0);
        t.minutiae.push_back(m);
    }
    return t;
}

// O(N^2) reference: the k nearest by (squared distance, index).
std::vector<std::int32_t> brute_force_knn(const Tensor& feats, std::size_t k) {
    const std::size_t n = feats.rows(), c = feats.cols();
    std::vector<std::int32_t> table(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::int32_t>> all;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = 0.0;
            for (std::size_t cc = 0; cc < c; ++cc) {
                const double d = feats.at(i, cc) - feats.at(j, cc);
                d2 += d * d;
            }
            all.push_back({d2, static_cast<std::int32_t>(j)});
        }
        std::sort(all.begin(), all.end());
        for (std::size_t j = 0; j < k; ++j) table[i * k + j] = all[j].second;
    }
    return table;
}

PaddedSet manual_set(const Tensor& feats) {
    PaddedSet s;
    s.features = feats;
    s.valid.assign(feats.rows(), 1);
    return s;
}

}  // namespace

TEST_CASE("knn_graph on three collinear points") {
    Tensor feats({3, 1}, {0.0, 1.0, 3.0});
    const auto edges = knn_graph(manual_set(feats), 1);
    REQUIRE(edges.size() == 3);
    CHECK((edges[0].from == 0 && edges[0].to == 1));
    CHECK((edges[1].from == 1 && edges[1].to == 0));
    CHECK((edges[2].from == 2 && edges[2].to == 1));
}

TEST_CASE("knn_graph nearest neighbors of the two mutually closest points are symmetric") {
    Rng rng(4);
    Tensor feats({8, 2});
    for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = rng.uniform(-1, 1);
    const auto edges = knn_graph(manual_set(feats), 1);
    // Find the globally closest pair; with k=1 both endpoints must pick each other.
    double best = 1e30;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = i + 1; j < 8; ++j) {
            const double dx = feats.at(i, 0) - feats.at(j, 0);
            const double dy = feats.at(i, 1) - feats.at(j, 1);
            if (dx * dx + dy * dy < best) {
                best = dx * dx + dy * dy;
                bi = i;
                bj = j;
            }
        }
    CHECK(edges[bi].to == static_cast<std::int32_t>(bj));
    CHECK(edges[bj].to == static_cast<std::int32_t>(bi));
}

TEST_CASE("knn_graph matches the brute-force oracle on random points") {
    Rng rng(5);
    Tensor feats({100, 3});
    for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = rng.uniform(-10, 10);
    const auto edges = knn_graph(manual_set(feats), 10);
    const auto want = brute_force_knn(feats, 10);
    REQUIRE(edges.size() == want.size());
    for (std::size_t i = 0; i < edges.size(); ++i) {
        CHECK(edges[i].from == static_cast<std::int32_t>(i / 10));
        CHECK(edges[i].to == want[i]);
    }
}

TEST_CASE("knn_graph refuses sets with too few valid nodes") {
    Tensor feats({3, 1}, {0.0, 1.0, 2.0});
    CHECK_THROWS_AS(knn_graph(manual_set(feats), 3), std::invalid_argument);
}

TEST_CASE("knn_graph never touches padding rows") {
    Rng rng(6);
    Template3D t = random_template(rng, 12);
    PaddedSet s = PaddedSet::from_template(t, 30);
    const auto edges = knn_graph(s, 5);
    REQUIRE(edges.size() == 12 * 5);
    for (const auto& e : edges) {
        CHECK(s.valid[static_cast<std::size_t>(e.from)] == 1);
        CHECK(s.valid[static_cast<std::size_t>(e.to)] == 1);
        CHECK(e.from != e.to);
    }
}

TEST_CASE("init_params is deterministic per seed") {
    const auto cfg = tiny_config();
    const ParamSet a = init_params(cfg, NetKind::Embedder, 99);
    const ParamSet b = init_params(cfg, NetKind::Embedder, 99);
    const ParamSet c = init_params(cfg, NetKind::Embedder, 100);
    REQUIRE(a.size() == b.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.names()[i] == b.names()[i]);
        for (std::size_t j = 0; j < a.at(i).size(); ++j) {
            CHECK(a.at(i)[j] == b.at(i)[j]);
            if (a.at(i)[j] != c.at(i)[j]) any_diff = true;
        }
    }
    CHECK(any_diff);
}

TEST_CASE("a freshly initialized network produces finite embeddings") {
    Rng rng(7);
    const auto cfg = tiny_config();
    const ParamSet p = init_params(cfg, NetKind::Embedder, 1);
    const Template3D t = random_template(rng, 20);
    const Embedding e = embed(PaddedSet::from_template(t, 40), p, cfg);
    REQUIRE(e.size() == 256);
    for (double v : e) CHECK(std::isfinite(v));
}

TEST_CASE("edge function with identity first block reproduces node features") {
    // Weight [I; 0] picks the x_i half of [x_i || x_j - x_i]; with positive
    // inputs the rectifier is inactive and max over one neighbor is x_i.
    const std::size_t c = 3;
    Tensor x({4, c});
    Rng rng(8);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.5, 2.0);
    Tensor w({2 * c, c});
    for (std::size_t i = 0; i < c; ++i) w.at(i, i) = 1.0;

    auto xn = ad::leaf(x);
    auto ef = ad::edge_features(xn, brute_force_knn(x, 1), 1);
    auto h = ad::leaky_relu(ad::linear(ef, ad::leaf(w), ad::leaf(Tensor::vector(c))), 0.2);
    auto out = ad::max_aggregate(h, 1);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(out->value[i] == Catch::Approx(x[i]));
}

TEST_CASE("edge convolution output is constant across nodes for all-equal inputs") {
    const std::size_t c = 4;
    Tensor x({5, c});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.7;
    Rng rng(9);
    Tensor w({2 * c, c});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1, 1);
    // All points coincide, so any neighbor table is equivalent.
    std::vector<std::int32_t> nb{1, 2, 3, 4, 0};
    auto out = ad::max_aggregate(
        ad::leaky_relu(
            ad::linear(ad::edge_features(ad::leaf(x), nb, 1), ad::leaf(w),
                       ad::leaf(Tensor::vector(c))),
            0.2),
        1);
    for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 0; j < c; ++j)
            CHECK(out->value.at(i, j) == Catch::Approx(out->value.at(0, j)).margin(1e-12));
}

TEST_CASE("embedding is invariant to the amount of zero padding") {
    Rng rng(10);
    const NetworkConfig cfg;  // paper-default widths
    const ParamSet p = init_params(cfg, NetKind::Embedder, 3);
    const Template3D t = random_template(rng, 37);
    const Embedding e200 = embed(PaddedSet::from_template(t, 200), p, cfg);
    const Embedding e400 = embed(PaddedSet::from_template(t, 400), p, cfg);
    for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(e200[i] - e400[i]) <= 1e-9);
}

TEST_CASE("embedding is invariant to minutiae order") {
    Rng rng(11);
    const NetworkConfig cfg;
    const ParamSet p = init_params(cfg, NetKind::Embedder, 4);
    Template3D t = random_template(rng, 31);
    const Embedding e1 = embed(PaddedSet::from_template(t, 200), p, cfg);

    std::vector<Minutia3D> shuffled = t.minutiae;
    rng.shuffle(shuffled);
    Template3D u = t;
    u.minutiae = shuffled;
    const Embedding e2 = embed(PaddedSet::from_template(u, 200), p, cfg);
    for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(e1[i] - e2[i]) <= 1e-9);
}

TEST_CASE("a four-minutiae template embeds to a finite vector") {
    Rng rng(12);
    const auto cfg = tiny_config();
    const ParamSet p = init_params(cfg, NetKind::Embedder, 5);
    const Template3D t = random_template(rng, 4);
    const Embedding e = embed(PaddedSet::from_template(t, 200), p, cfg);
    REQUIRE(e.size() == 256);
    for (double v : e) CHECK(std::isfinite(v));
}

TEST_CASE("embed refuses templates below four minutiae") {
    Rng rng(13);
    Template3D t = random_template(rng, 4);
    t.minutiae.resize(3);
    CHECK_THROWS_AS(PaddedSet::from_template(t, 200), std::invalid_argument);
}

TEST_CASE("zero-initialized pose head predicts the identity pose") {
    Rng rng(14);
    const auto cfg = tiny_config();
    const ParamSet p = init_params(cfg, NetKind::SpatialTransformer, 6);
    const Template3D t = random_template(rng, 25);
    const Pose pose = spatial_transform(PaddedSet::from_template(t, 40), p, cfg);
    CHECK(pose.t.x == 0.0);
    CHECK(pose.t.y == 0.0);
    CHECK(pose.t.z == 0.0);
    CHECK(pose.euler.x == 0.0);
    CHECK(pose.euler.y == 0.0);
    CHECK(pose.euler.z == 0.0);
}

TEST_CASE("predicted angles always stay inside the configured bounds") {
    Rng rng(15);
    auto cfg = tiny_config();
    ParamSet p = init_params(cfg, NetKind::SpatialTransformer, 7);
    // Blow up the final layer so tanh saturates; bounds must still hold.
    Tensor& w = p.get("head5.weight");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-40.0, 40.0);
    for (int it = 0; it < 25; ++it) {
        const Template3D t = random_template(rng, 10 + static_cast<int>(rng.below(30)));
        const Pose pose = spatial_transform(PaddedSet::from_template(t, 64), p, cfg);
        CHECK(std::abs(pose.euler.x) <= cfg.angle_bounds[0]);
        CHECK(std::abs(pose.euler.y) <= cfg.angle_bounds[1]);
        CHECK(std::abs(pose.euler.z) <= cfg.angle_bounds[2]);
    }
}

TEST_CASE("pose prediction is invariant to minutiae order") {
    Rng rng(16);
    auto cfg = tiny_config();
    ParamSet p = init_params(cfg, NetKind::SpatialTransformer, 8);
    Tensor& w = p.get("head5.weight");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.01, 0.01);

    Template3D t = random_template(rng, 22);
    const Pose a = spatial_transform(PaddedSet::from_template(t, 64), p, cfg);
    rng.shuffle(t.minutiae);
    const Pose b = spatial_transform(PaddedSet::from_template(t, 64), p, cfg);
    CHECK(a.t.x == Catch::Approx(b.t.x).margin(1e-9));
    CHECK(a.t.y == Catch::Approx(b.t.y).margin(1e-9));
    CHECK(a.t.z == Catch::Approx(b.t.z).margin(1e-9));
    CHECK(a.euler.x == Catch::Approx(b.euler.x).margin(1e-9));
    CHECK(a.euler.y == Catch::Approx(b.euler.y).margin(1e-9));
    CHECK(a.euler.z == Catch::Approx(b.euler.z).margin(1e-9));
}

TEST_CASE("correct_and_embed with an identity transformer equals plain embedding") {
    Rng rng(17);
    const auto cfg = tiny_config();
    const ParamSet stn = init_params(cfg, NetKind::SpatialTransformer, 9);
    const ParamSet emb = init_params(cfg, NetKind::Embedder, 10);
    const Template3D t = random_template(rng, 18);
    const Embedding via_matcher = correct_and_embed(t, stn, emb, cfg);
    const Embedding direct = embed(PaddedSet::from_template(t, 200), emb, cfg);
    for (std::size_t i = 0; i < 256; ++i)
        CHECK(via_matcher[i] == Catch::Approx(direct[i]).margin(1e-12));
}

TEST_CASE("gradients flow end to end through both networks") {
    Rng rng(18);
    auto cfg = tiny_config();
    cfg.normalization = false;  // keep the finite-difference graph small and smooth
    ParamSet stn = init_params(cfg, NetKind::SpatialTransformer, 11);
    ParamSet emb = init_params(cfg, NetKind::Embedder, 12);
    // A non-zero pose head so the pose path carries signal.
    Tensor& w = stn.get("head5.weight");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.05, 0.05);

    // Unit-scale coordinates keep the central differences well conditioned.
    Template3D t;
    t.template_id = "fd";
    t.finger_id = "fd";
    for (int i = 0; i < 8; ++i) {
        Minutia3D m;
        m.p = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        m.o = scale_orientation({rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kPi)}, 1.0);
        t.minutiae.push_back(m);
    }
    auto stn_bound = BoundParams::bind(stn);
    auto emb_bound = BoundParams::bind(emb);
    auto g = build_matcher_graph(PaddedSet::template_features(t), stn_bound, emb_bound, cfg,
                                 true, OrientationMode::AsPrinted);
    std::vector<double> weights;
    for (std::size_t i = 0; i < 256; ++i) weights.push_back(rng.uniform(-1.0, 1.0));
    auto root = ad::sum(ad::scale_vec_const(g.embedding, weights));
    CHECK(ad::finite_difference_check(root, 1e-5) <= 1e-4);
}

TEST_CASE("each layer recomputes its neighbor graph in the previous feature space") {
    Rng rng(19);
    const auto cfg = tiny_config();
    const ParamSet p = init_params(cfg, NetKind::Embedder, 13);
    const Template3D t = random_template(rng, 26);
    auto bound = BoundParams::bind(p);
    auto g = build_embed_graph(PaddedSet::template_features(t), bound, cfg, false);

    REQUIRE(g.trace.edge_tables.size() == 5);
    REQUIRE(g.trace.layer_inputs.size() == 5);
    bool tables_differ = false;
    for (std::size_t l = 0; l < 5; ++l) {
        // Reference recomputation with the independent brute-force oracle.
        const auto want = brute_force_knn(g.trace.layer_inputs[l], g.trace.k_eff);
        REQUIRE(g.trace.edge_tables[l].size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(g.trace.edge_tables[l][i] == want[i]);
        if (l > 0 && g.trace.edge_tables[l] != g.trace.edge_tables[l - 1]) tables_differ = true;
    }
    // Dynamic graphs: at least one layer rewired relative to its predecessor.
    CHECK(tables_differ);
}
