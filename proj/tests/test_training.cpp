#include <catch2/catch_amalgamated.hpp>

#include "g3dm/synthgen.hpp"
#include "g3dm/training.hpp"

#include <algorithm>
#include <cmath>

using namespace g3dm;

namespace {

Embedding along_x(double d) {
    Embedding e(8, 0.0);
    e[0] = d;
    return e;
}

NetworkConfig micro_config() {
    NetworkConfig cfg;
    cfg.k = 4;
    cfg.input_dim = 6;
    cfg.edgeconv_widths = {6, 6, 6, 6, 8};
    cfg.stn_mlp_widths = {16, 12, 8, 8, 6};
    cfg.embed_mlp_widths = {16, 256};
    cfg.normalization = true;
    return cfg;
}

// Lifted contact impressions for a handful of synthetic identities.
std::vector<Template3D> tiny_corpus(std::size_t identities, std::uint64_t seed) {
    ContactParams params;
    params.minutiae_count = 20;
    params.impressions = 2;
    std::vector<Template3D> out;
    for (std::size_t i = 0; i < identities; ++i) {
        const auto imps = generate_contact_set(seed + i, params, "id" + std::to_string(i));
        for (const auto& imp : imps) {
            Template3D t;
            t.template_id = imp.set_id;
            t.finger_id = imp.identity_id;
            t.pose_label = "contact";
            t.yaw_deg = 0.0;
            t.minutiae = spherical_lift(imp.minutiae, kDefaultSphereC);
            out.push_back(std::move(t));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("triplet loss reduces to the margin when all embeddings coincide") {
    const Embedding e(16, 0.3);
    CHECK(triplet_loss(e, e, e, 0.25) == Catch::Approx(0.25));
}

TEST_CASE("triplet loss clamps to zero when the negative is far enough") {
    const Embedding a = along_x(0.0);
    CHECK(triplet_loss(a, along_x(0.2), along_x(1.0), 0.3) == Catch::Approx(0.0));
}

TEST_CASE("triplet loss adds distances and margin when the negative is close") {
    const Embedding a = along_x(0.0);
    CHECK(triplet_loss(a, along_x(1.0), along_x(0.2), 0.3) == Catch::Approx(1.1));
}

TEST_CASE("triplet loss is never negative and vanishes exactly on the margin condition") {
    Rng rng(1);
    for (int it = 0; it < 200; ++it) {
        Embedding a(8), p(8), n(8);
        for (int i = 0; i < 8; ++i) {
            a[i] = rng.uniform(-1, 1);
            p[i] = rng.uniform(-1, 1);
            n[i] = rng.uniform(-1, 1);
        }
        const double gamma = rng.uniform(0.01, 0.5);
        const double loss = triplet_loss(a, p, n, gamma);
        CHECK(loss >= 0.0);
        double dap = 0.0, dan = 0.0;
        for (int i = 0; i < 8; ++i) {
            dap += (a[i] - p[i]) * (a[i] - p[i]);
            dan += (a[i] - n[i]) * (a[i] - n[i]);
        }
        if (std::sqrt(dap) + gamma <= std::sqrt(dan))
            CHECK(loss == 0.0);
        else
            CHECK(loss > 0.0);
    }
}

TEST_CASE("mining picks the single non-matching pool element") {
    std::vector<LabeledEmbedding> anchors{{along_x(0.0), "f1"}};
    std::vector<LabeledEmbedding> pool{{along_x(0.1), "f1"}, {along_x(5.0), "f2"}};
    const auto idx = mine_hard_negatives(anchors, pool);
    CHECK(idx[0] == 1);
}

TEST_CASE("mining matches an exhaustive search on random batches") {
    Rng rng(2);
    for (int batch = 0; batch < 100; ++batch) {
        std::vector<LabeledEmbedding> anchors, pool;
        const int n = 8;
        for (int i = 0; i < n; ++i) {
            Embedding ea(4), ep(4);
            for (int d = 0; d < 4; ++d) {
                ea[d] = rng.uniform(-1, 1);
                ep[d] = rng.uniform(-1, 1);
            }
            const std::string finger = "f" + std::to_string(rng.below(4));
            anchors.push_back({ea, finger});
            pool.push_back({ep, "f" + std::to_string(rng.below(4))});
        }
        // Skip batches where some anchor has no non-match (the op would throw).
        bool feasible = true;
        for (const auto& a : anchors) {
            bool any = false;
            for (const auto& p : pool) any |= (p.finger_id != a.finger_id);
            feasible &= any;
        }
        if (!feasible) continue;

        const auto got = mine_hard_negatives(anchors, pool);
        for (int i = 0; i < n; ++i) {
            double best = 1e300;
            std::size_t want = 0;
            for (std::size_t j = 0; j < pool.size(); ++j) {
                if (pool[j].finger_id == anchors[static_cast<std::size_t>(i)].finger_id) continue;
                double d2 = 0.0;
                for (int d = 0; d < 4; ++d) {
                    const double diff =
                        anchors[static_cast<std::size_t>(i)].e[static_cast<std::size_t>(d)] -
                        pool[j].e[static_cast<std::size_t>(d)];
                    d2 += diff * diff;
                }
                if (d2 < best) {
                    best = d2;
                    want = j;
                }
            }
            CHECK(got[static_cast<std::size_t>(i)] == want);
        }
    }
}

TEST_CASE("mining breaks exact ties by the lowest index") {
    std::vector<LabeledEmbedding> anchors{{along_x(0.0), "f1"}};
    std::vector<LabeledEmbedding> pool{{along_x(1.0), "f2"}, {along_x(-1.0), "f3"}};
    CHECK(mine_hard_negatives(anchors, pool)[0] == 0);
}

TEST_CASE("mining fails when every pool element matches the anchor") {
    std::vector<LabeledEmbedding> anchors{{along_x(0.0), "f1"}};
    std::vector<LabeledEmbedding> pool{{along_x(1.0), "f1"}};
    CHECK_THROWS_AS(mine_hard_negatives(anchors, pool), std::runtime_error);
}

namespace {

Template3D box_template(int n, Rng& rng) {
    Template3D t;
    t.template_id = "aug";
    t.finger_id = "aug";
    for (int i = 0; i < n; ++i) {
        Minutia3D m;
        m.p = {rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100)};
        m.o = scale_orientation({rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kPi)}, 25.0);
        t.minutiae.push_back(m);
    }
    return t;
}

}  // namespace

TEST_CASE("augment with zero ranges and zero drop is the identity") {
    Rng data_rng(3);
    const Template3D t = box_template(12, data_rng);
    AugmentBranch branch;  // all zeros, no rotation
    Rng rng(4);
    const Template3D u = augment(t, branch, rng);
    REQUIRE(u.minutiae.size() == t.minutiae.size());
    for (std::size_t i = 0; i < t.minutiae.size(); ++i) {
        CHECK(u.minutiae[i].p.x == t.minutiae[i].p.x);
        CHECK(u.minutiae[i].p.z == t.minutiae[i].p.z);
        CHECK(u.minutiae[i].o.y == t.minutiae[i].o.y);
    }
}

TEST_CASE("augment drops exactly the floor of the configured fraction") {
    Rng data_rng(5);
    const Template3D t = box_template(40, data_rng);
    AugmentBranch branch;
    branch.drop_fraction = 0.25;
    Rng rng(6);
    CHECK(augment(t, branch, rng).minutiae.size() == 30);
}

TEST_CASE("augment is deterministic under a fixed stream") {
    Rng data_rng(7);
    const Template3D t = box_template(24, data_rng);
    AugmentPolicy policy;
    Rng r1(8), r2(8);
    const Template3D a = augment(t, policy.small_gap, r1);
    const Template3D b = augment(t, policy.small_gap, r2);
    REQUIRE(a.minutiae.size() == b.minutiae.size());
    for (std::size_t i = 0; i < a.minutiae.size(); ++i) {
        CHECK(a.minutiae[i].p.x == b.minutiae[i].p.x);
        CHECK(a.minutiae[i].o.z == b.minutiae[i].o.z);
    }
}

TEST_CASE("augment preserves pairwise distances and orientation norms") {
    Rng data_rng(9);
    const Template3D t = box_template(15, data_rng);
    AugmentPolicy policy;
    AugmentBranch branch = policy.small_gap;
    branch.drop_fraction = 0.0;
    Rng rng(10);
    for (int it = 0; it < 10; ++it) {
        const Template3D u = augment(t, branch, rng);
        REQUIRE(u.minutiae.size() == t.minutiae.size());
        for (std::size_t i = 0; i < t.minutiae.size(); ++i) {
            CHECK(u.minutiae[i].o.norm() ==
                  Catch::Approx(t.minutiae[i].o.norm()).epsilon(1e-9));
            for (std::size_t j = i + 1; j < t.minutiae.size(); ++j) {
                const double before = (t.minutiae[i].p - t.minutiae[j].p).norm();
                const double after = (u.minutiae[i].p - u.minutiae[j].p).norm();
                CHECK(after == Catch::Approx(before).margin(1e-9));
            }
        }
    }
}

TEST_CASE("augment fails when dropping leaves too few minutiae") {
    Rng data_rng(11);
    const Template3D t = box_template(5, data_rng);
    AugmentBranch branch;
    branch.drop_fraction = 0.4;  // floor(0.4*5) = 2 dropped -> 3 left
    Rng rng(12);
    CHECK_THROWS_AS(augment(t, branch, rng), std::runtime_error);
}

TEST_CASE("build_epoch expands pairs by their class multiplicity") {
    std::vector<GenuinePair> pairs;
    for (std::size_t i = 0; i < 10; ++i) pairs.push_back({i, i + 10, "small"});
    PairWeightTable table;
    Rng rng(13);
    CHECK(build_epoch(pairs, table, rng).size() == 30);
}

TEST_CASE("build_epoch with unit multiplicities is a permutation of the input") {
    std::vector<GenuinePair> pairs;
    for (std::size_t i = 0; i < 7; ++i) pairs.push_back({i, i + 7, "small"});
    PairWeightTable table;
    table.multiplicity = {{"small", 1}};
    Rng rng(14);
    const auto seq = build_epoch(pairs, table, rng);
    REQUIRE(seq.size() == 7);
    std::vector<std::size_t> seen;
    for (const auto& p : seq) seen.push_back(p.a);
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < 7; ++i) CHECK(seen[i] == i);
}

TEST_CASE("build_epoch is deterministic per seed and rejects unknown classes") {
    std::vector<GenuinePair> pairs{{0, 1, "small"}, {2, 3, "mid"}, {4, 5, "large"}};
    PairWeightTable table;
    Rng r1(15), r2(15);
    const auto a = build_epoch(pairs, table, r1);
    const auto b = build_epoch(pairs, table, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].a == b[i].a);

    pairs.push_back({6, 7, "sideways"});
    Rng r3(15);
    CHECK_THROWS_AS(build_epoch(pairs, table, r3), std::invalid_argument);
}

TEST_CASE("pair classification buckets yaw gaps") {
    PairWeightTable table;
    CHECK(table.classify(0.0, 10.0) == "small");
    CHECK(table.classify(0.0, 40.0) == "mid");
    CHECK(table.classify(-20.0, 30.0) == "large");
}

TEST_CASE("training with zero learning rate leaves parameters unchanged") {
    const auto cfg = micro_config();
    const auto templates = tiny_corpus(4, 900);
    PairWeightTable table;
    const auto pairs = genuine_pairs(templates, table);
    REQUIRE(!pairs.empty());

    TrainConfig tcfg;
    tcfg.stage = TrainConfig::Stage::Pretrain;
    tcfg.batch_size = 4;
    tcfg.epochs = 1;
    tcfg.adam.lr = 0.0;
    tcfg.adam.weight_decay = 0.0;
    tcfg.seed = 7;

    const ParamSet init = init_params(cfg, NetKind::Embedder, 21);
    const TrainResult res =
        train(templates, pairs, cfg, tcfg, AugmentPolicy{}, table, init);
    for (std::size_t i = 0; i < init.size(); ++i) {
        const std::string& name = init.names()[i];
        if (name.find(".bn.running_") != std::string::npos) continue;  // statistics, not weights
        for (std::size_t j = 0; j < init.at(i).size(); ++j)
            CHECK(res.embed_params.get(name)[j] == init.at(i)[j]);
    }
}

TEST_CASE("training is deterministic per seed") {
    const auto cfg = micro_config();
    const auto templates = tiny_corpus(4, 901);
    PairWeightTable table;
    const auto pairs = genuine_pairs(templates, table);

    TrainConfig tcfg;
    tcfg.batch_size = 4;
    tcfg.epochs = 2;
    tcfg.seed = 11;

    const ParamSet init = init_params(cfg, NetKind::Embedder, 22);
    const TrainResult r1 = train(templates, pairs, cfg, tcfg, AugmentPolicy{}, table, init);
    const TrainResult r2 = train(templates, pairs, cfg, tcfg, AugmentPolicy{}, table, init);
    REQUIRE(r1.trace.size() == r2.trace.size());
    CHECK(r1.trace.back().mean_loss == r2.trace.back().mean_loss);
    for (std::size_t i = 0; i < r1.embed_params.size(); ++i)
        for (std::size_t j = 0; j < r1.embed_params.at(i).size(); ++j)
            CHECK(r1.embed_params.at(i)[j] == r2.embed_params.at(i)[j]);
}

TEST_CASE("a short pretraining run reduces the triplet loss") {
    const auto cfg = micro_config();
    const auto templates = tiny_corpus(6, 902);
    PairWeightTable table;
    const auto pairs = genuine_pairs(templates, table);

    TrainConfig tcfg;
    tcfg.batch_size = 6;
    tcfg.epochs = 4;
    tcfg.seed = 3;

    const ParamSet init = init_params(cfg, NetKind::Embedder, 23);
    const TrainResult res = train(templates, pairs, cfg, tcfg, AugmentPolicy{}, table, init);
    REQUIRE(res.trace.size() == 4);
    CHECK_FALSE(res.aborted_on_nan);
    CHECK(res.trace.back().mean_loss <= res.trace.front().mean_loss);
}

TEST_CASE("finetuning trains the transformer and embedder jointly") {
    auto cfg = micro_config();
    const auto templates = tiny_corpus(4, 903);
    PairWeightTable table;
    const auto pairs = genuine_pairs(templates, table);

    TrainConfig tcfg;
    tcfg.stage = TrainConfig::Stage::Finetune;
    tcfg.batch_size = 4;
    tcfg.epochs = 1;
    tcfg.seed = 5;

    const ParamSet embed_init = init_params(cfg, NetKind::Embedder, 24);
    const ParamSet stn_init = init_params(cfg, NetKind::SpatialTransformer, 25);
    const TrainResult res =
        train(templates, pairs, cfg, tcfg, AugmentPolicy{}, table, embed_init, &stn_init);
    REQUIRE(res.stn_params.has_value());
    // The transformer's trainable layers moved.
    bool stn_changed = false;
    for (std::size_t i = 0; i < stn_init.size(); ++i) {
        const std::string& name = stn_init.names()[i];
        if (name.find(".bn.running_") != std::string::npos) continue;
        for (std::size_t j = 0; j < stn_init.at(i).size(); ++j)
            if (res.stn_params->get(name)[j] != stn_init.at(i)[j]) stn_changed = true;
    }
    CHECK(stn_changed);
}

TEST_CASE("train_dual requires same-orientation pairs and counts them correctly") {
    const auto cfg = micro_config();
    // Build a 3-pose corpus: yaws 0/10/40 per finger.
    std::vector<Template3D> templates;
    Rng rng(904);
    for (int f = 0; f < 3; ++f) {
        for (double yaw : {0.0, 10.0, 40.0}) {
            Template3D t = box_template(12, rng);
            t.template_id = "f" + std::to_string(f) + "_y" + std::to_string(int(yaw));
            t.finger_id = "f" + std::to_string(f);
            t.yaw_deg = yaw;
            templates.push_back(t);
        }
    }
    PairWeightTable table;
    const auto pairs = genuine_pairs(templates, table);
    // Counting oracle: per finger one <=10-degree pair (0,10); (0,40) and
    // (10,40) land in the mid bucket.
    std::size_t small_count = 0;
    for (const auto& p : pairs) small_count += (p.pose_class == "small");
    CHECK(small_count == 3);
    CHECK(pairs.size() == 9);

    // A corpus whose only pairs are cross-pose has no same-orientation pairs.
    std::vector<GenuinePair> cross_only;
    for (const auto& p : pairs)
        if (p.pose_class != "small") cross_only.push_back(p);
    TrainConfig tcfg;
    tcfg.batch_size = 2;
    tcfg.epochs = 1;
    tcfg.stage = TrainConfig::Stage::Finetune;
    const ParamSet embed_init = init_params(cfg, NetKind::Embedder, 26);
    const ParamSet stn_init = init_params(cfg, NetKind::SpatialTransformer, 27);
    CHECK_THROWS_AS(train_dual(templates, cross_only, cfg, tcfg, AugmentPolicy{}, table,
                               embed_init, stn_init),
                    std::runtime_error);
}
