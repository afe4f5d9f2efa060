#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "g3dm/autodiff.hpp"
#include "g3dm/geometry.hpp"
#include "g3dm/optim.hpp"
#include "g3dm/rng.hpp"
#include "g3dm/tensor.hpp"

namespace g3dm {

using Embedding = std::vector<double>;  // 256 floats

inline constexpr std::size_t kEmbeddingDim = 256;

// Architecture of one network (spatial transformer or graph embedder). The
// defaults follow the printed description: five EdgeConv layers starting at
// 6->64 whose outputs concatenate to 1024 channels, residual connections on
// the first and third layers, two MLP layers down to the 256-d embedding and
// five MLP layers down to the 6-dof pose.
struct NetworkConfig {
    std::size_t k = 20;
    std::size_t input_dim = 6;  // 6 for 3D minutiae, 3 for the 2D baseline
    std::vector<std::size_t> edgeconv_widths = {64, 64, 128, 256, 512};
    std::vector<std::size_t> stn_mlp_widths = {512, 256, 128, 64, 6};
    std::vector<std::size_t> embed_mlp_widths = {512, 256};
    std::vector<std::size_t> residual_layers = {1, 3};  // 1-based layer indices
    bool normalization = true;
    // Bounds for the squashed Euler angles; the middle slot is the
    // y-equivalent axis which carries the large yaw range.
    std::array<double, 3> angle_bounds = {kPi / 2, kPi, kPi / 2};

    std::size_t concat_width() const {
        return std::accumulate(edgeconv_widths.begin(), edgeconv_widths.end(), std::size_t{0});
    }
    std::size_t pooled_width() const { return 2 * concat_width(); }
    std::size_t pose_dim() const { return input_dim == 6 ? 6 : 3; }

    void validate() const {
        if (input_dim != 6 && input_dim != 3)
            throw std::invalid_argument("NetworkConfig: input_dim must be 6 or 3");
        if (edgeconv_widths.size() != 5)
            throw std::invalid_argument("NetworkConfig: expected 5 EdgeConv widths");
        if (embed_mlp_widths.size() != 2 || embed_mlp_widths.back() != kEmbeddingDim)
            throw std::invalid_argument(
                "NetworkConfig: embedding head must be 2 layers ending in 256");
        if (stn_mlp_widths.size() != 5 || stn_mlp_widths.back() != pose_dim())
            throw std::invalid_argument(
                "NetworkConfig: pose head must be 5 layers ending in the pose dimension");
        if (k < 1) throw std::invalid_argument("NetworkConfig: k must be >= 1");
        for (std::size_t r : residual_layers)
            if (r < 1 || r > 5)
                throw std::invalid_argument("NetworkConfig: residual layer index out of range");
        for (double b : angle_bounds)
            if (!(b > 0.0) || b > kPi)
                throw std::invalid_argument("NetworkConfig: angle bounds must lie in (0, pi]");
    }
};

// Fixed-size batch container: features padded with zero rows to n_pad, with a
// validity mask. Padding never participates in kNN, aggregation, or pooling.
struct PaddedSet {
    Tensor features;                  // n_pad x input_dim
    std::vector<std::uint8_t> valid;  // n_pad flags

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto v : valid) n += (v != 0);
        return n;
    }

    static PaddedSet from_features(const Tensor& compact, std::size_t n_pad) {
        const std::size_t n = compact.rows();
        if (n < kMinMinutiae)
            throw std::invalid_argument("PaddedSet: need at least " +
                                        std::to_string(kMinMinutiae) + " minutiae, got " +
                                        std::to_string(n));
        if (n_pad < n) n_pad = n;
        PaddedSet s;
        s.features = Tensor({n_pad, compact.cols()});
        s.valid.assign(n_pad, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(compact.row(i), compact.row(i) + compact.cols(), s.features.row(i));
            s.valid[i] = 1;
        }
        return s;
    }

    static PaddedSet from_template(const Template3D& tpl, std::size_t n_pad) {
        return from_features(template_features(tpl), n_pad);
    }

    static PaddedSet from_template_2d(const Template3D& tpl, std::size_t n_pad) {
        return from_features(template_features_2d(tpl), n_pad);
    }

    // N x 6 rows (x, y, z, dx, dy, dz).
    static Tensor template_features(const Template3D& tpl) {
        Tensor t({tpl.minutiae.size(), 6});
        for (std::size_t i = 0; i < tpl.minutiae.size(); ++i) {
            const Minutia3D& m = tpl.minutiae[i];
            double* r = t.row(i);
            r[0] = m.p.x; r[1] = m.p.y; r[2] = m.p.z;
            r[3] = m.o.x; r[4] = m.o.y; r[5] = m.o.z;
        }
        return t;
    }

    // N x 3 rows (x, y, theta) for the 2D-minutiae baseline.
    static Tensor template_features_2d(const Template3D& tpl) {
        Tensor t({tpl.minutiae.size(), 3});
        for (std::size_t i = 0; i < tpl.minutiae.size(); ++i) {
            const Minutia3D& m = tpl.minutiae[i];
            double* r = t.row(i);
            r[0] = m.p.x;
            r[1] = m.p.y;
            r[2] = normalize_angle(std::atan2(m.o.y, m.o.x));
        }
        return t;
    }

    // Valid rows, in order, as a compact matrix.
    Tensor compact() const {
        Tensor out({valid_count(), features.cols()});
        std::size_t r = 0;
        for (std::size_t i = 0; i < valid.size(); ++i) {
            if (!valid[i]) continue;
            std::copy(features.row(i), features.row(i) + features.cols(), out.row(r++));
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// k-nearest-neighbor graph

namespace detail {

// Neighbor table over compact features: for each row, the k nearest other
// rows by Euclidean distance (ties by lowest index). Size N*k, row-major.
inline std::vector<std::int32_t> knn_table(const Tensor& feats, std::size_t k) {
    const std::size_t n = feats.rows(), c = feats.cols();
    if (n <= k)
        throw std::invalid_argument("knn_graph: need more than k=" + std::to_string(k) +
                                    " valid nodes, got " + std::to_string(n));
    std::vector<std::int32_t> table(n * k);
    std::vector<std::pair<double, std::int32_t>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = feats.row(i);
        std::size_t w = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double* xj = feats.row(j);
            double d2 = 0.0;
            for (std::size_t cc = 0; cc < c; ++cc) {
                const double d = xi[cc] - xj[cc];
                d2 += d * d;
            }
            cand[w++] = {d2, static_cast<std::int32_t>(j)};
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end());
        for (std::size_t j = 0; j < k; ++j) table[i * k + j] = cand[j].second;
    }
    return table;
}

}  // namespace detail

struct KnnEdge {
    std::int32_t from;
    std::int32_t to;
};

// Edges in padded index space: k out-edges per valid node, no edge touching a
// padding row, self excluded.
inline std::vector<KnnEdge> knn_graph(const PaddedSet& set, std::size_t k) {
    const Tensor compact = set.compact();
    std::vector<std::int32_t> row_to_padded;
    row_to_padded.reserve(compact.rows());
    for (std::size_t i = 0; i < set.valid.size(); ++i)
        if (set.valid[i]) row_to_padded.push_back(static_cast<std::int32_t>(i));

    const auto table = detail::knn_table(compact, k);
    std::vector<KnnEdge> edges;
    edges.reserve(table.size());
    for (std::size_t i = 0; i < compact.rows(); ++i)
        for (std::size_t j = 0; j < k; ++j)
            edges.push_back({row_to_padded[i],
                             row_to_padded[static_cast<std::size_t>(table[i * k + j])]});
    return edges;
}

// ---------------------------------------------------------------------------
// Parameters

enum class NetKind { Embedder, SpatialTransformer };

namespace detail {

inline std::size_t edgeconv_input_width(const NetworkConfig& cfg, std::size_t layer) {
    return layer == 0 ? cfg.input_dim : cfg.edgeconv_widths[layer - 1];
}

inline bool layer_has_residual(const NetworkConfig& cfg, std::size_t layer) {
    for (std::size_t r : cfg.residual_layers)
        if (r == layer + 1) return true;
    return false;
}

}  // namespace detail

// Fan-in-scaled random initialization; the pose head's final layer starts at
// zero so an untrained transformer predicts the identity pose.
inline ParamSet init_params(const NetworkConfig& cfg, NetKind kind, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ParamSet p;
    auto dense = [&rng](std::size_t fan_in, std::size_t fan_out, bool zero) {
        Tensor w({fan_in, fan_out});
        if (!zero) {
            const double stddev = std::sqrt(2.0 / (1.0 + 0.2 * 0.2) / static_cast<double>(fan_in));
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
        }
        return w;
    };

    for (std::size_t l = 0; l < 5; ++l) {
        const std::size_t cin = detail::edgeconv_input_width(cfg, l);
        const std::size_t cout = cfg.edgeconv_widths[l];
        const std::string base = "ec" + std::to_string(l + 1);
        p.add(base + ".weight", dense(2 * cin, cout, false));
        p.add(base + ".bias", Tensor::vector(cout));
        if (cfg.normalization) {
            Tensor gamma({cout});
            gamma.fill(1.0);
            Tensor rv({cout});
            rv.fill(1.0);
            p.add(base + ".bn.gamma", gamma);
            p.add(base + ".bn.beta", Tensor::vector(cout));
            p.add(base + ".bn.running_mean", Tensor::vector(cout));
            p.add(base + ".bn.running_var", rv);
        }
        if (detail::layer_has_residual(cfg, l) && cin != cout)
            p.add(base + ".proj.weight", dense(cin, cout, false));
    }

    const auto& head = (kind == NetKind::Embedder) ? cfg.embed_mlp_widths : cfg.stn_mlp_widths;
    std::size_t in = cfg.pooled_width();
    for (std::size_t h = 0; h < head.size(); ++h) {
        const std::string base = "head" + std::to_string(h + 1);
        const bool zero =
            (kind == NetKind::SpatialTransformer) && (h + 1 == head.size());
        p.add(base + ".weight", dense(in, head[h], zero));
        p.add(base + ".bias", Tensor::vector(head[h]));
        in = head[h];
    }
    return p;
}

// Parameter tensors wrapped as shared graph leaves. One binding can back any
// number of per-template graphs; gradients then accumulate in one place.
struct BoundParams {
    std::unordered_map<std::string, ad::NodePtr> leaves;
    std::vector<std::string> order;

    static BoundParams bind(const ParamSet& p) {
        BoundParams b;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const std::string& name = p.names()[i];
            b.leaves.emplace(name, ad::leaf(p.at(i), name));
            b.order.push_back(name);
        }
        return b;
    }

    const ad::NodePtr& at(const std::string& name) const {
        auto it = leaves.find(name);
        if (it == leaves.end())
            throw std::out_of_range("BoundParams: no parameter named " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return leaves.count(name) != 0; }

    // Gradients (after a backward pass) keyed by parameter name.
    std::unordered_map<std::string, Tensor> grads() const {
        std::unordered_map<std::string, Tensor> g;
        for (const auto& name : order) {
            const auto& leafn = leaves.at(name);
            if (leafn->grad.size() == leafn->value.size()) g.emplace(name, leafn->grad);
        }
        return g;
    }
};

// ---------------------------------------------------------------------------
// Graph construction

struct BackboneTrace {
    std::vector<std::vector<std::int32_t>> edge_tables;  // per layer, N*k_eff
    std::vector<Tensor> layer_inputs;                    // features each layer's kNN ran on
    std::size_t k_eff = 0;
};

// Per-template pooled descriptors plus the batch-level normalization ops
// (one per layer in training mode, for running-stat updates).
struct BackboneBatch {
    std::vector<ad::NodePtr> pooled;
    std::vector<BackboneTrace> traces;
    std::vector<std::shared_ptr<ad::BatchNormRowsOp>> bn_ops;
};

namespace detail {

// Shared EdgeConv trunk over a batch of templates: five dynamic-graph layers
// per template with feature normalization computed across the whole batch's
// edge rows, then channel concat and max+mean pooling per template.
inline BackboneBatch build_backbone_batch(const std::vector<ad::NodePtr>& inputs,
                                          const BoundParams& p, const NetworkConfig& cfg,
                                          bool training) {
    const std::size_t batch = inputs.size();
    BackboneBatch out;
    out.traces.resize(batch);

    std::vector<std::size_t> k_eff(batch);
    for (std::size_t t = 0; t < batch; ++t) {
        k_eff[t] = std::min(cfg.k, inputs[t]->value.rows() - 1);
        out.traces[t].k_eff = k_eff[t];
    }

    std::vector<ad::NodePtr> current = inputs;
    std::vector<std::vector<ad::NodePtr>> layer_outputs(batch);
    for (std::size_t l = 0; l < 5; ++l) {
        const std::string base = "ec" + std::to_string(l + 1);
        // Dynamic graph: neighbors recomputed per template in its current
        // feature space.
        std::vector<ad::NodePtr> edge_feats(batch);
        for (std::size_t t = 0; t < batch; ++t) {
            auto table = knn_table(current[t]->value, k_eff[t]);
            out.traces[t].edge_tables.push_back(table);
            out.traces[t].layer_inputs.push_back(current[t]->value);
            edge_feats[t] = ad::edge_features(current[t], std::move(table), k_eff[t]);
        }
        ad::NodePtr all = batch == 1 ? edge_feats[0] : ad::concat_rows(edge_feats);
        all = ad::linear(all, p.at(base + ".weight"), p.at(base + ".bias"), base);
        if (cfg.normalization) {
            auto bn = ad::batch_norm_rows(all, p.at(base + ".bn.gamma"),
                                          p.at(base + ".bn.beta"), training,
                                          training ? nullptr : p.at(base + ".bn.running_mean"),
                                          training ? nullptr : p.at(base + ".bn.running_var"),
                                          base + ".bn");
            if (training)
                out.bn_ops.push_back(std::static_pointer_cast<ad::BatchNormRowsOp>(bn));
            all = bn;
        }
        all = ad::leaky_relu(all, 0.2);

        std::size_t row = 0;
        for (std::size_t t = 0; t < batch; ++t) {
            const std::size_t rows_t = edge_feats[t]->value.rows();
            ad::NodePtr h = batch == 1 ? all : ad::slice_rows(all, row, rows_t);
            row += rows_t;
            auto agg = ad::max_aggregate(h, k_eff[t]);
            if (layer_has_residual(cfg, l)) {
                if (edgeconv_input_width(cfg, l) == cfg.edgeconv_widths[l])
                    agg = ad::add(agg, current[t]);
                else
                    agg = ad::add(agg, ad::matmul(current[t], p.at(base + ".proj.weight"),
                                                  false, base + ".proj"));
            }
            layer_outputs[t].push_back(agg);
            current[t] = agg;
        }
    }

    out.pooled.resize(batch);
    for (std::size_t t = 0; t < batch; ++t) {
        auto cat = ad::concat_cols(layer_outputs[t], "edgeconv_concat");
        out.pooled[t] =
            ad::concat_cols({ad::max_pool_rows(cat), ad::mean_pool_rows(cat)}, "pooled");
    }
    return out;
}

inline ad::NodePtr build_mlp_head(ad::NodePtr x, const BoundParams& p,
                                  const std::vector<std::size_t>& widths) {
    for (std::size_t h = 0; h < widths.size(); ++h) {
        const std::string base = "head" + std::to_string(h + 1);
        x = ad::linear(x, p.at(base + ".weight"), p.at(base + ".bias"), base);
        if (h + 1 < widths.size()) x = ad::leaky_relu(x, 0.2);
    }
    return x;
}

}  // namespace detail

struct EmbedGraph {
    ad::NodePtr input;      // N x input_dim leaf over valid rows
    ad::NodePtr embedding;  // 1 x 256
    BackboneTrace trace;
};

// Batch of embedding graphs sharing parameter leaves and batch-level
// normalization statistics.
struct EmbedBatch {
    std::vector<ad::NodePtr> inputs;
    std::vector<ad::NodePtr> embeddings;
    std::vector<BackboneTrace> traces;
    std::vector<std::shared_ptr<ad::BatchNormRowsOp>> bn_ops;
};

inline EmbedBatch build_embed_batch(const std::vector<Tensor>& features,
                                    const BoundParams& params, const NetworkConfig& cfg,
                                    bool training) {
    EmbedBatch g;
    for (const Tensor& f : features) g.inputs.push_back(ad::leaf(f, "input"));
    auto backbone = detail::build_backbone_batch(g.inputs, params, cfg, training);
    g.traces = std::move(backbone.traces);
    g.bn_ops = std::move(backbone.bn_ops);
    for (const auto& pooled : backbone.pooled)
        g.embeddings.push_back(detail::build_mlp_head(pooled, params, cfg.embed_mlp_widths));
    return g;
}

inline EmbedGraph build_embed_graph(const Tensor& compact_features, const BoundParams& params,
                                    const NetworkConfig& cfg, bool training) {
    auto batch = build_embed_batch({compact_features}, params, cfg, training);
    EmbedGraph g;
    g.input = batch.inputs[0];
    g.embedding = batch.embeddings[0];
    g.trace = std::move(batch.traces[0]);
    return g;
}

struct PoseGraph {
    ad::NodePtr input;
    ad::NodePtr translation;  // 1 x 3 (or 1 x 2 in 2D mode)
    ad::NodePtr angles;       // 1 x 3 bounded Euler angles (1 x 1 in 2D mode)
    BackboneTrace trace;
};

namespace detail {

inline void split_pose_head(const ad::NodePtr& raw, const NetworkConfig& cfg,
                            ad::NodePtr& translation, ad::NodePtr& angles) {
    if (cfg.input_dim == 6) {
        translation = ad::slice_cols(raw, 0, 3);
        auto ang = ad::tanh_op(ad::slice_cols(raw, 3, 6));
        angles = ad::scale_vec_const(
            ang, {cfg.angle_bounds[0], cfg.angle_bounds[1], cfg.angle_bounds[2]});
    } else {
        translation = ad::slice_cols(raw, 0, 2);
        // In-plane rotation; bounded by the yaw-equivalent slot.
        angles = ad::scale_vec_const(ad::tanh_op(ad::slice_cols(raw, 2, 3)),
                                     {cfg.angle_bounds[1]});
    }
}

}  // namespace detail

inline PoseGraph build_pose_graph(const Tensor& compact_features, const BoundParams& params,
                                  const NetworkConfig& cfg, bool training) {
    PoseGraph g;
    g.input = ad::leaf(compact_features, "input");
    auto backbone = detail::build_backbone_batch({g.input}, params, cfg, training);
    g.trace = std::move(backbone.traces[0]);
    auto raw = detail::build_mlp_head(backbone.pooled[0], params, cfg.stn_mlp_widths);
    detail::split_pose_head(raw, cfg, g.translation, g.angles);
    return g;
}

// 2x2 rotation from a scalar angle (standard proper rotation).
class Rot2Op final : public ad::Node {
public:
    const char* kind() const override { return "rot2"; }

    void compute() override {
        const Tensor& a = inputs[0]->value;
        if (a.size() != 1) fail("needs a single angle");
        if (value.rows() != 2 || value.cols() != 2) value = Tensor({2, 2});
        const double c = std::cos(a[0]), s = std::sin(a[0]);
        value[0] = c; value[1] = -s;
        value[2] = s; value[3] = c;
    }

    void backprop() override {
        const Tensor& a = inputs[0]->value;
        const double c = std::cos(a[0]), s = std::sin(a[0]);
        inputs[0]->grad[0] +=
            grad[0] * (-s) + grad[1] * (-c) + grad[2] * c + grad[3] * (-s);
    }
};

inline ad::NodePtr rot2(ad::NodePtr angle) {
    auto n = std::make_shared<Rot2Op>();
    n->inputs = {std::move(angle)};
    n->compute();
    return n;
}

namespace detail {

// Pose application in-graph: positions become p R^T + t; orientations follow
// the as-printed rule (translated too) or rotate-only. The 2D baseline uses
// the proper planar rotation and wraps the angle feature.
inline ad::NodePtr apply_pose_node(const ad::NodePtr& input, const ad::NodePtr& translation,
                                   const ad::NodePtr& angles, const NetworkConfig& cfg,
                                   OrientationMode mode) {
    if (cfg.input_dim == 6) {
        auto rot = ad::euler_to_matrix(angles);
        auto pos = ad::slice_cols(input, 0, 3);
        auto ori = ad::slice_cols(input, 3, 6);
        auto pos_t = ad::add_rowvec(ad::matmul(pos, rot, true), translation);
        ad::NodePtr ori_t = ad::matmul(ori, rot, true);
        if (mode == OrientationMode::AsPrinted) ori_t = ad::add_rowvec(ori_t, translation);
        return ad::concat_cols({pos_t, ori_t}, "corrected");
    }
    auto rot = rot2(angles);
    auto pos = ad::slice_cols(input, 0, 2);
    auto ang = ad::slice_cols(input, 2, 3);
    auto pos_t = ad::add_rowvec(ad::matmul(pos, rot, true), translation);
    auto ang_t = ad::mod_2pi(ad::add_rowvec(ang, angles));
    return ad::concat_cols({pos_t, ang_t}, "corrected");
}

}  // namespace detail

struct MatcherGraph {
    ad::NodePtr input;      // leaf shared by both networks
    PoseGraph pose;
    ad::NodePtr corrected;  // pose-corrected features
    ad::NodePtr embedding;  // 1 x 256
    BackboneTrace embed_trace;
};

// Batch of full matcher graphs: both backbones normalize across the batch.
struct MatcherBatch {
    std::vector<ad::NodePtr> inputs;
    std::vector<ad::NodePtr> embeddings;
    std::vector<std::shared_ptr<ad::BatchNormRowsOp>> stn_bn_ops;
    std::vector<std::shared_ptr<ad::BatchNormRowsOp>> embed_bn_ops;
};

inline MatcherBatch build_matcher_batch(const std::vector<Tensor>& features,
                                        const BoundParams& stn_params,
                                        const BoundParams& embed_params,
                                        const NetworkConfig& cfg, bool training,
                                        OrientationMode mode = OrientationMode::AsPrinted) {
    MatcherBatch g;
    for (const Tensor& f : features) g.inputs.push_back(ad::leaf(f, "input"));

    auto stn_backbone = detail::build_backbone_batch(g.inputs, stn_params, cfg, training);
    g.stn_bn_ops = std::move(stn_backbone.bn_ops);

    std::vector<ad::NodePtr> corrected(features.size());
    for (std::size_t t = 0; t < features.size(); ++t) {
        auto raw = detail::build_mlp_head(stn_backbone.pooled[t], stn_params,
                                          cfg.stn_mlp_widths);
        ad::NodePtr translation, angles;
        detail::split_pose_head(raw, cfg, translation, angles);
        corrected[t] = detail::apply_pose_node(g.inputs[t], translation, angles, cfg, mode);
    }

    auto embed_backbone = detail::build_backbone_batch(corrected, embed_params, cfg, training);
    g.embed_bn_ops = std::move(embed_backbone.bn_ops);
    for (const auto& pooled : embed_backbone.pooled)
        g.embeddings.push_back(detail::build_mlp_head(pooled, embed_params,
                                                      cfg.embed_mlp_widths));
    return g;
}

// Full matcher forward pass: spatial transformer -> pose application ->
// graph embedder, all differentiable end to end.
inline MatcherGraph build_matcher_graph(const Tensor& compact_features,
                                        const BoundParams& stn_params,
                                        const BoundParams& embed_params,
                                        const NetworkConfig& cfg, bool training,
                                        OrientationMode mode = OrientationMode::AsPrinted) {
    MatcherGraph g;
    g.pose = build_pose_graph(compact_features, stn_params, cfg, training);
    g.input = g.pose.input;
    g.corrected =
        detail::apply_pose_node(g.input, g.pose.translation, g.pose.angles, cfg, mode);
    auto backbone = detail::build_backbone_batch({g.corrected}, embed_params, cfg, training);
    g.embed_trace = std::move(backbone.traces[0]);
    g.embedding =
        detail::build_mlp_head(backbone.pooled[0], embed_params, cfg.embed_mlp_widths);
    return g;
}

// ---------------------------------------------------------------------------
// Value-level entry points (inference mode)

inline Embedding embed(const PaddedSet& set, const ParamSet& params, const NetworkConfig& cfg) {
    cfg.validate();
    if (set.valid_count() < kMinMinutiae)
        throw std::invalid_argument("embed: fewer than " + std::to_string(kMinMinutiae) +
                                    " valid minutiae");
    auto bound = BoundParams::bind(params);
    auto g = build_embed_graph(set.compact(), bound, cfg, false);
    const Tensor& e = g.embedding->value;
    return Embedding(e.data(), e.data() + e.size());
}

inline Pose spatial_transform(const PaddedSet& set, const ParamSet& params,
                              const NetworkConfig& cfg) {
    cfg.validate();
    if (cfg.input_dim != 6)
        throw std::invalid_argument("spatial_transform: 3D configuration required");
    if (set.valid_count() < kMinMinutiae)
        throw std::invalid_argument("spatial_transform: fewer than 4 valid minutiae");
    auto bound = BoundParams::bind(params);
    auto g = build_pose_graph(set.compact(), bound, cfg, false);
    Pose pose;
    pose.t = {g.translation->value[0], g.translation->value[1], g.translation->value[2]};
    pose.euler = {g.angles->value[0], g.angles->value[1], g.angles->value[2]};
    return pose;
}

inline Embedding correct_and_embed(const Template3D& tpl, const ParamSet& stn_params,
                                   const ParamSet& embed_params, const NetworkConfig& cfg,
                                   OrientationMode mode = OrientationMode::AsPrinted) {
    cfg.validate();
    if (tpl.minutiae.size() < kMinMinutiae)
        throw std::invalid_argument("correct_and_embed: template " + tpl.template_id +
                                    " has fewer than 4 minutiae");
    const Tensor feats = (cfg.input_dim == 6) ? PaddedSet::template_features(tpl)
                                              : PaddedSet::template_features_2d(tpl);
    auto stn_bound = BoundParams::bind(stn_params);
    auto embed_bound = BoundParams::bind(embed_params);
    auto g = build_matcher_graph(feats, stn_bound, embed_bound, cfg, false, mode);
    const Tensor& e = g.embedding->value;
    return Embedding(e.data(), e.data() + e.size());
}

}  // namespace g3dm
