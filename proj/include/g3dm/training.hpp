#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "g3dm/autodiff.hpp"
#include "g3dm/geometry.hpp"
#include "g3dm/graphnet.hpp"
#include "g3dm/optim.hpp"
#include "g3dm/rng.hpp"

namespace g3dm {

// ---------------------------------------------------------------------------
// Loss and mining

// max(||a-p|| - ||a-n|| + gamma, 0)
inline double triplet_loss(const Embedding& a, const Embedding& p, const Embedding& n,
                           double gamma) {
    if (a.size() != p.size() || a.size() != n.size())
        throw std::invalid_argument("triplet_loss: embedding dimensions differ");
    double dap = 0.0, dan = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dap += (a[i] - p[i]) * (a[i] - p[i]);
        dan += (a[i] - n[i]) * (a[i] - n[i]);
    }
    return std::max(std::sqrt(dap) - std::sqrt(dan) + gamma, 0.0);
}

struct LabeledEmbedding {
    Embedding e;
    std::string finger_id;
};

// For each anchor, the pool element with minimal L2 distance among
// different-finger entries (ties to the lowest pool index).
inline std::vector<std::size_t> mine_hard_negatives(const std::vector<LabeledEmbedding>& anchors,
                                                    const std::vector<LabeledEmbedding>& pool) {
    std::vector<std::size_t> out;
    out.reserve(anchors.size());
    for (const auto& a : anchors) {
        double best = 0.0;
        long best_idx = -1;
        for (std::size_t j = 0; j < pool.size(); ++j) {
            if (pool[j].finger_id == a.finger_id) continue;
            double d2 = 0.0;
            for (std::size_t i = 0; i < a.e.size(); ++i)
                d2 += (a.e[i] - pool[j].e[i]) * (a.e[i] - pool[j].e[i]);
            if (best_idx < 0 || d2 < best) {
                best = d2;
                best_idx = static_cast<long>(j);
            }
        }
        if (best_idx < 0)
            throw std::runtime_error("mine_hard_negatives: anchor " + a.finger_id +
                                     " has no non-matching pool element");
        out.push_back(static_cast<std::size_t>(best_idx));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentBranch {
    bool rotate = false;
    double rot_range_x = 0.0;  // radians, first printed Euler slot
    double rot_range_y = 0.0;  // radians, middle slot (the large yaw range)
    double rot_range_z = 0.0;  // radians, last slot
    double translation_range = 0.0;  // px, all axes
    double drop_fraction = 0.0;
};

// Two branches keyed by pose-gap class; the defaults are the finetuning
// policy: heavy rotation for small-gap pairs, translation-only for the rest.
struct AugmentPolicy {
    AugmentBranch small_gap{true, 30.0 * kPi / 180.0, 90.0 * kPi / 180.0, 30.0 * kPi / 180.0,
                            300.0, 0.25};
    AugmentBranch large_gap{false, 0.0, 0.0, 0.0, 100.0, 1.0 / 6.0};

    void validate() const {
        for (const AugmentBranch* b : {&small_gap, &large_gap}) {
            if (b->drop_fraction < 0.0 || b->drop_fraction >= 1.0)
                throw std::invalid_argument("AugmentPolicy: drop fraction must be in [0, 1)");
            if (b->rot_range_x < 0 || b->rot_range_y < 0 || b->rot_range_z < 0 ||
                b->translation_range < 0)
                throw std::invalid_argument("AugmentPolicy: ranges must be symmetric about 0");
        }
    }
};

namespace detail {

inline Vec3 template_centroid(const Template3D& tpl) {
    Vec3 c{};
    for (const auto& m : tpl.minutiae) c = c + m.p;
    return c * (1.0 / static_cast<double>(tpl.minutiae.size()));
}

inline std::vector<std::size_t> sample_drop_survivors(std::size_t n, double drop_fraction,
                                                      Rng& rng) {
    std::vector<std::size_t> keep(n);
    for (std::size_t i = 0; i < n; ++i) keep[i] = i;
    rng.shuffle(keep);
    const std::size_t n_drop =
        static_cast<std::size_t>(drop_fraction * static_cast<double>(n));
    keep.resize(n - n_drop);
    std::sort(keep.begin(), keep.end());
    return keep;
}

}  // namespace detail

// Random rigid rotation (printed Euler matrices, rotate-only orientations,
// about the template centroid), random translation, and uniform minutia
// dropping. Deterministic under a fixed rng stream.
inline Template3D augment(const Template3D& tpl, const AugmentBranch& branch, Rng& rng) {
    const double tr = branch.translation_range;
    const Vec3 t{rng.uniform(-tr, tr), rng.uniform(-tr, tr), rng.uniform(-tr, tr)};

    Template3D moved = tpl;
    if (branch.rotate) {
        Pose pose;
        pose.euler = {rng.uniform(-branch.rot_range_x, branch.rot_range_x),
                      rng.uniform(-branch.rot_range_y, branch.rot_range_y),
                      rng.uniform(-branch.rot_range_z, branch.rot_range_z)};
        const Vec3 centroid = detail::template_centroid(tpl);
        for (auto& m : moved.minutiae) m.p = m.p - centroid;
        moved = apply_pose(moved, pose, OrientationMode::RotateOnly);
        for (auto& m : moved.minutiae) m.p = m.p + centroid;
    }
    for (auto& m : moved.minutiae) m.p = m.p + t;

    const std::size_t n = moved.minutiae.size();
    for (int attempt = 0; attempt < 10; ++attempt) {
        const auto keep = detail::sample_drop_survivors(n, branch.drop_fraction, rng);
        if (keep.size() < kMinMinutiae) continue;
        Template3D out = moved;
        out.minutiae.clear();
        for (std::size_t idx : keep) out.minutiae.push_back(moved.minutiae[idx]);
        return out;
    }
    throw std::runtime_error("augment: template " + tpl.template_id +
                             " too small after dropping");
}

// 2D counterpart for the planar baseline: in-plane rotation about the
// centroid (drawn from the branch's first rotation slot), xy translation,
// and the same dropping rule. Operates on z=0 templates whose orientations
// encode the 2D angle.
inline Template3D augment_2d(const Template3D& tpl, const AugmentBranch& branch, Rng& rng) {
    const double rot = branch.rotate ? rng.uniform(-branch.rot_range_x, branch.rot_range_x) : 0.0;
    const double tr = branch.translation_range;
    const double tx = rng.uniform(-tr, tr), ty = rng.uniform(-tr, tr);
    const Vec3 centroid = detail::template_centroid(tpl);

    const double c = std::cos(rot), s = std::sin(rot);
    Template3D moved = tpl;
    for (auto& m : moved.minutiae) {
        const double x = m.p.x - centroid.x, y = m.p.y - centroid.y;
        m.p.x = c * x - s * y + centroid.x + tx;
        m.p.y = s * x + c * y + centroid.y + ty;
        const double ang = normalize_angle(std::atan2(m.o.y, m.o.x) + rot);
        const double norm = std::hypot(m.o.x, m.o.y);
        m.o.x = norm * std::cos(ang);
        m.o.y = norm * std::sin(ang);
    }

    const std::size_t n = moved.minutiae.size();
    for (int attempt = 0; attempt < 10; ++attempt) {
        const auto keep = detail::sample_drop_survivors(n, branch.drop_fraction, rng);
        if (keep.size() < kMinMinutiae) continue;
        Template3D out = moved;
        out.minutiae.clear();
        for (std::size_t idx : keep) out.minutiae.push_back(moved.minutiae[idx]);
        return out;
    }
    throw std::runtime_error("augment_2d: template " + tpl.template_id +
                             " too small after dropping");
}

// ---------------------------------------------------------------------------
// Pair weighting and epochs

// Multiplicity per pose-gap class name; the defaults mirror the yaw-gap
// buckets (<=10 degrees, 10-45, >45) with weights 3/6/3.
struct PairWeightTable {
    std::map<std::string, std::size_t> multiplicity{{"small", 3}, {"mid", 6}, {"large", 3}};
    double small_gap_max_deg = 10.0;
    double mid_gap_max_deg = 45.0;

    void validate() const {
        for (const auto& [name, mult] : multiplicity)
            if (mult < 1)
                throw std::invalid_argument("PairWeightTable: multiplicity for " + name +
                                            " must be >= 1");
    }

    std::string classify(double yaw_a_deg, double yaw_b_deg) const {
        const double gap = std::abs(yaw_a_deg - yaw_b_deg);
        if (gap <= small_gap_max_deg) return "small";
        if (gap <= mid_gap_max_deg) return "mid";
        return "large";
    }
};

struct GenuinePair {
    std::size_t a = 0;  // template indices into the dataset
    std::size_t b = 0;
    std::string pose_class;
};

// Expands each pair by its class multiplicity and shuffles deterministically.
inline std::vector<GenuinePair> build_epoch(const std::vector<GenuinePair>& pairs,
                                            const PairWeightTable& table, Rng& rng) {
    table.validate();
    std::vector<GenuinePair> out;
    for (const auto& p : pairs) {
        auto it = table.multiplicity.find(p.pose_class);
        if (it == table.multiplicity.end())
            throw std::invalid_argument("build_epoch: unknown pose class '" + p.pose_class + "'");
        for (std::size_t i = 0; i < it->second; ++i) out.push_back(p);
    }
    rng.shuffle(out);
    return out;
}

// Genuine pairs (same finger) across a template list, classified by yaw gap.
inline std::vector<GenuinePair> genuine_pairs(const std::vector<Template3D>& templates,
                                              const PairWeightTable& table) {
    std::vector<GenuinePair> pairs;
    for (std::size_t i = 0; i < templates.size(); ++i)
        for (std::size_t j = i + 1; j < templates.size(); ++j)
            if (templates[i].finger_id == templates[j].finger_id)
                pairs.push_back(
                    {i, j, table.classify(templates[i].yaw_deg, templates[j].yaw_deg)});
    return pairs;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    enum class Stage { Pretrain, Finetune };
    Stage stage = Stage::Pretrain;
    double gamma = 0.2;
    std::size_t batch_size = 128;  // 64 for finetuning
    std::size_t epochs = 80;       // 100 for finetuning
    std::size_t n_pad = 200;       // 400 for finetuning
    AdamHyper adam;
    bool augment_enabled = true;  // applies to the finetune stage only
    double bn_momentum = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(gamma > 0.0)) throw std::invalid_argument("TrainConfig: gamma must be > 0");
        if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    }
};

struct LossTraceRow {
    std::size_t epoch = 0;
    std::string stage;
    double mean_loss = 0.0;
    double active_triplet_fraction = 0.0;
};

struct TrainResult {
    ParamSet embed_params;
    std::optional<ParamSet> stn_params;  // finetune stage only
    std::vector<LossTraceRow> trace;
    bool aborted_on_nan = false;
    std::size_t skipped_anchors = 0;  // anchors without a usable in-batch negative
};

namespace detail {

// Momentum update of running statistics from one step's batch statistics
// (one normalization op per EdgeConv layer).
inline void update_running_stats(
    ParamSet& params, const std::vector<std::shared_ptr<ad::BatchNormRowsOp>>& bn_ops,
    double momentum) {
    for (std::size_t l = 0; l < bn_ops.size(); ++l) {
        const std::string base = "ec" + std::to_string(l + 1) + ".bn.";
        Tensor& rm = params.get(base + "running_mean");
        Tensor& rv = params.get(base + "running_var");
        const auto& bn = bn_ops[l];
        for (std::size_t j = 0; j < rm.size(); ++j) {
            rm[j] = (1.0 - momentum) * rm[j] + momentum * bn->batch_mean[j];
            rv[j] = (1.0 - momentum) * rv[j] + momentum * bn->batch_var[j];
        }
    }
}

inline Tensor features_for(const Template3D& tpl, const NetworkConfig& cfg) {
    return cfg.input_dim == 6 ? PaddedSet::template_features(tpl)
                              : PaddedSet::template_features_2d(tpl);
}

}  // namespace detail

// Metric-learning loop over genuine pairs with batch-hard negatives mined
// from the batch's second elements. Pretraining drives the embedder alone;
// finetuning runs the spatial transformer and embedder jointly.
inline TrainResult train(const std::vector<Template3D>& templates,
                         const std::vector<GenuinePair>& pairs, const NetworkConfig& cfg,
                         const TrainConfig& tcfg, const AugmentPolicy& policy,
                         const PairWeightTable& table, const ParamSet& embed_init,
                         const ParamSet* stn_init = nullptr) {
    cfg.validate();
    tcfg.validate();
    policy.validate();
    const bool finetune = tcfg.stage == TrainConfig::Stage::Finetune;
    if (finetune && stn_init == nullptr)
        throw std::invalid_argument("train: finetune stage requires transformer parameters");
    if (pairs.empty()) throw std::invalid_argument("train: no genuine pairs");

    TrainResult result;
    result.embed_params = embed_init;
    ParamSet stn_params;
    if (finetune) stn_params = *stn_init;

    AdamState embed_state, stn_state;
    Rng master(tcfg.seed);

    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng rng_epoch = master.fork(epoch + 1);
        const auto seq = build_epoch(pairs, table, rng_epoch);

        double loss_sum = 0.0;
        std::size_t loss_count = 0, active = 0;
        for (std::size_t start = 0; start < seq.size(); start += tcfg.batch_size) {
            const std::size_t end = std::min(seq.size(), start + tcfg.batch_size);
            if (end - start < 2) continue;

            auto embed_bound = BoundParams::bind(result.embed_params);
            BoundParams stn_bound;
            if (finetune) stn_bound = BoundParams::bind(stn_params);

            // Feature tensors for the batch: anchors first, positives after.
            const std::size_t n_pairs = end - start;
            std::vector<Tensor> features(2 * n_pairs);
            std::vector<std::string> fingers(n_pairs);
            for (std::size_t s = start; s < end; ++s) {
                const GenuinePair& pr = seq[s];
                for (std::size_t side = 0; side < 2; ++side) {
                    const Template3D& base = templates[side == 0 ? pr.a : pr.b];
                    Template3D aug;
                    const Template3D* use = &base;
                    if (finetune && tcfg.augment_enabled) {
                        const AugmentBranch& branch =
                            pr.pose_class == "small" ? policy.small_gap : policy.large_gap;
                        aug = (cfg.input_dim == 6) ? augment(base, branch, rng_epoch)
                                                   : augment_2d(base, branch, rng_epoch);
                        use = &aug;
                    }
                    features[(side == 0 ? 0 : n_pairs) + (s - start)] =
                        detail::features_for(*use, cfg);
                    if (side == 0) fingers[s - start] = base.finger_id;
                }
            }

            std::vector<ad::NodePtr> anchor_nodes, positive_nodes;
            std::vector<std::shared_ptr<ad::BatchNormRowsOp>> embed_bn, stn_bn;
            if (finetune) {
                auto batch = build_matcher_batch(features, stn_bound, embed_bound, cfg, true);
                embed_bn = std::move(batch.embed_bn_ops);
                stn_bn = std::move(batch.stn_bn_ops);
                anchor_nodes.assign(batch.embeddings.begin(),
                                    batch.embeddings.begin() + static_cast<long>(n_pairs));
                positive_nodes.assign(batch.embeddings.begin() + static_cast<long>(n_pairs),
                                      batch.embeddings.end());
            } else {
                auto batch = build_embed_batch(features, embed_bound, cfg, true);
                embed_bn = std::move(batch.bn_ops);
                anchor_nodes.assign(batch.embeddings.begin(),
                                    batch.embeddings.begin() + static_cast<long>(n_pairs));
                positive_nodes.assign(batch.embeddings.begin() + static_cast<long>(n_pairs),
                                      batch.embeddings.end());
            }

            // Batch-hard negatives over the positives' current values.
            std::vector<ad::NodePtr> losses;
            for (std::size_t i = 0; i < anchor_nodes.size(); ++i) {
                double best = 0.0;
                long best_idx = -1;
                const Tensor& ea = anchor_nodes[i]->value;
                for (std::size_t j = 0; j < positive_nodes.size(); ++j) {
                    if (fingers[j] == fingers[i]) continue;
                    const Tensor& en = positive_nodes[j]->value;
                    double d2 = 0.0;
                    for (std::size_t d = 0; d < ea.size(); ++d)
                        d2 += (ea[d] - en[d]) * (ea[d] - en[d]);
                    if (best_idx < 0 || d2 < best) {
                        best = d2;
                        best_idx = static_cast<long>(j);
                    }
                }
                if (best_idx < 0) {
                    ++result.skipped_anchors;
                    continue;
                }
                auto dap = ad::l2_dist(anchor_nodes[i], positive_nodes[i]);
                auto dan = ad::l2_dist(anchor_nodes[i],
                                       positive_nodes[static_cast<std::size_t>(best_idx)]);
                auto loss = ad::hinge(ad::affine_const(ad::sub(dap, dan), 1.0, tcfg.gamma));
                if (loss->value[0] > 0.0) ++active;
                losses.push_back(loss);
            }
            if (losses.empty()) continue;

            auto batch_loss = ad::mean_scalars(losses);
            if (!std::isfinite(batch_loss->value[0])) {
                result.aborted_on_nan = true;
                if (finetune) result.stn_params = stn_params;
                return result;
            }
            loss_sum += batch_loss->value[0] * static_cast<double>(losses.size());
            loss_count += losses.size();

            ad::backward(batch_loss);
            result.embed_params = adam_update(result.embed_params, embed_bound.grads(),
                                              embed_state, tcfg.adam);
            if (cfg.normalization)
                detail::update_running_stats(result.embed_params, embed_bn, tcfg.bn_momentum);
            if (finetune) {
                stn_params = adam_update(stn_params, stn_bound.grads(), stn_state, tcfg.adam);
                if (cfg.normalization)
                    detail::update_running_stats(stn_params, stn_bn, tcfg.bn_momentum);
            }
        }

        LossTraceRow row;
        row.epoch = epoch + 1;
        row.stage = finetune ? "finetune" : "pretrain";
        row.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        row.active_triplet_fraction =
            loss_count ? static_cast<double>(active) / static_cast<double>(loss_count) : 0.0;
        result.trace.push_back(row);
    }

    if (finetune) result.stn_params = stn_params;
    return result;
}

// Trains the dual networks: A on the full weighted pair list, B only on
// same-orientation pairs (yaw gap inside the smallest bucket). Both start
// from the same pretrained embedder.
struct DualResult {
    TrainResult all_pose;
    TrainResult same_pose;
};

inline DualResult train_dual(const std::vector<Template3D>& templates,
                             const std::vector<GenuinePair>& pairs, const NetworkConfig& cfg,
                             const TrainConfig& tcfg, const AugmentPolicy& policy,
                             const PairWeightTable& table, const ParamSet& embed_init,
                             const ParamSet& stn_init) {
    std::vector<GenuinePair> same;
    for (const auto& p : pairs)
        if (p.pose_class == "small") same.push_back(p);
    if (same.empty())
        throw std::runtime_error("train_dual: no same-orientation pairs in the dataset");

    DualResult out;
    out.all_pose = train(templates, pairs, cfg, tcfg, policy, table, embed_init, &stn_init);
    TrainConfig same_cfg = tcfg;
    same_cfg.seed = tcfg.seed ^ 0x9e3779b97f4a7c15ULL;
    out.same_pose = train(templates, same, cfg, same_cfg, policy, table, embed_init, &stn_init);
    return out;
}

}  // namespace g3dm
