#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "g3dm/geometry.hpp"
#include "g3dm/graphnet.hpp"
#include "g3dm/tensor.hpp"
#include "g3dm/textio.hpp"

namespace g3dm {

// ---------------------------------------------------------------------------
// Scores

// Similarity in [0, 1]: (1 + cosine)/2 over L2-normalized embeddings.
// Monotone in the L2 distance between the normalized vectors, so ranking
// metrics are unaffected by the mapping.
inline double match_score(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) throw std::invalid_argument("match_score: dimensions differ");
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("match_score: zero-norm embedding");
    const double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(0.5 * (1.0 + cosine), 0.0, 1.0);
}

// Dual-network fusion, branch arithmetic exactly as printed: the all-pose
// score s1 blends in only when the same-pose score s2 reaches 0.7.
inline double fuse_dual(double s1, double s2) {
    if (s1 < 0.0 || s1 > 1.0 || s2 < 0.0 || s2 > 1.0)
        throw std::invalid_argument("fuse_dual: scores must lie in [0, 1]");
    return s2 >= 0.7 ? 0.6 * s1 + 0.4 * s2 : s2;
}

// Fusion with an external matcher's native-scale score: s3/1000 + s/300,
// where s is the internal score expressed on its nominal 0-300 scale.
inline double fuse_external(double s3, double s_internal_300) {
    if (s3 < 0.0) throw std::invalid_argument("fuse_external: external score must be >= 0");
    return s3 / 1000.0 + s_internal_300 / 300.0;
}

// ---------------------------------------------------------------------------
// Metrics

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

struct RatePoint {
    double threshold;
    double fmr;
    double fnmr;
};

namespace detail {

// FMR/FNMR at every candidate threshold (union of scores plus a sentinel
// above the maximum), thresholds ascending. Decision rule: score >= t.
inline std::vector<RatePoint> rate_sweep(const std::vector<double>& genuine,
                                         const std::vector<double>& impostor) {
    std::vector<double> thresholds;
    thresholds.reserve(genuine.size() + impostor.size() + 1);
    thresholds.insert(thresholds.end(), genuine.begin(), genuine.end());
    thresholds.insert(thresholds.end(), impostor.begin(), impostor.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.push_back(thresholds.back() + 1.0);  // everything rejected

    std::vector<double> gen = genuine, imp = impostor;
    std::sort(gen.begin(), gen.end());
    std::sort(imp.begin(), imp.end());

    std::vector<RatePoint> points;
    points.reserve(thresholds.size());
    for (double t : thresholds) {
        const auto imp_ge = imp.end() - std::lower_bound(imp.begin(), imp.end(), t);
        const auto gen_lt = std::lower_bound(gen.begin(), gen.end(), t) - gen.begin();
        points.push_back({t, static_cast<double>(imp_ge) / static_cast<double>(imp.size()),
                          static_cast<double>(gen_lt) / static_cast<double>(gen.size())});
    }
    return points;
}

}  // namespace detail

// Equal error rate: threshold sweep over the union of scores with linear
// interpolation between the bracketing thresholds at the FMR/FNMR crossing.
inline EerResult compute_eer(const std::vector<double>& genuine,
                             const std::vector<double>& impostor) {
    if (genuine.empty() || impostor.empty())
        throw std::invalid_argument("compute_eer: both score lists must be non-empty");
    const auto points = detail::rate_sweep(genuine, impostor);

    // FMR falls and FNMR rises with t; find the first sign change.
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = points[i].fnmr - points[i].fmr;
        if (d < 0.0) continue;
        if (i == 0 || d == 0.0) return {points[i].fmr, points[i].threshold};
        const auto& p0 = points[i - 1];
        const auto& p1 = points[i];
        const double denom = (p1.fnmr - p0.fnmr) - (p1.fmr - p0.fmr);
        const double lambda = denom != 0.0 ? (p0.fmr - p0.fnmr) / denom : 0.0;
        return {p0.fmr + lambda * (p1.fmr - p0.fmr),
                p0.threshold + lambda * (p1.threshold - p0.threshold)};
    }
    return {points.back().fmr, points.back().threshold};
}

// All-vs-all or probe-vs-gallery scores with identity labels.
struct ScoreMatrix {
    std::vector<std::string> probe_ids;
    std::vector<std::string> gallery_ids;
    std::vector<std::string> probe_fingers;
    std::vector<std::string> gallery_fingers;
    Tensor scores;                       // probes x gallery, in [0, 1]
    std::vector<std::uint8_t> missing;   // entries scored 0 by the protocol
    bool symmetric = false;              // probe set == gallery set (all-vs-all)

    bool genuine(std::size_t p, std::size_t g) const {
        return probe_fingers[p] == gallery_fingers[g];
    }
};

struct CmcResult {
    std::vector<double> hit_rate;  // index r-1 = CMC(r)
    double rank1 = 0.0;
    std::size_t excluded_probes = 0;  // probes with no genuine gallery entry
};

// Identification accuracy: per probe, galleries sorted by descending score
// (ties by gallery index); CMC(r) is the fraction whose genuine entry ranks
// in the top r.
inline CmcResult compute_cmc(const ScoreMatrix& matrix) {
    const std::size_t g_count = matrix.gallery_ids.size();
    CmcResult out;
    out.hit_rate.assign(g_count, 0.0);
    std::size_t counted = 0;

    std::vector<std::size_t> order(g_count);
    for (std::size_t p = 0; p < matrix.probe_ids.size(); ++p) {
        bool has_genuine = false;
        for (std::size_t g = 0; g < g_count; ++g) has_genuine |= matrix.genuine(p, g);
        if (!has_genuine) {
            ++out.excluded_probes;
            continue;
        }
        ++counted;
        for (std::size_t g = 0; g < g_count; ++g) order[g] = g;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return matrix.scores.at(p, a) > matrix.scores.at(p, b);
        });
        for (std::size_t r = 0; r < g_count; ++r) {
            if (matrix.genuine(p, order[r])) {
                out.hit_rate[r] += 1.0;
                break;
            }
        }
    }
    if (counted) {
        double cum = 0.0;
        for (std::size_t r = 0; r < g_count; ++r) {
            cum += out.hit_rate[r];
            out.hit_rate[r] = cum / static_cast<double>(counted);
        }
        out.rank1 = out.hit_rate[0];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Protocols

struct ProtocolSpec {
    enum class Mode { AllVsAll, Identification };
    Mode mode = Mode::AllVsAll;
};

struct MetricsReport {
    std::string protocol;
    std::size_t n_templates = 0;
    std::size_t n_pairs = 0;
    std::size_t n_genuine = 0;
    std::size_t n_impostor = 0;
    std::size_t failed_templates = 0;
    std::size_t excluded_probes = 0;
    double eer = 0.0;
    double eer_threshold = 0.0;
    double rank1 = 0.0;
    std::vector<RatePoint> det;        // threshold, fmr, fnmr
    std::vector<double> cmc;           // rank r-1 -> hit rate
};

using Matcher = std::function<std::optional<Embedding>(const Template3D&)>;

namespace detail {

inline std::size_t eval_threads() {
    if (const char* env = std::getenv("G3DM_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1)
            return std::min<std::size_t>(static_cast<std::size_t>(v),
                                         std::max(1u, std::thread::hardware_concurrency()));
    }
    return 1;
}

// Deterministic parallel map: fixed work partition, results into
// preassigned slots.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t threads = std::min(eval_threads(), n == 0 ? std::size_t{1} : n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// Gallery rule: the least-|yaw| impression per finger, ties by template_id.
inline std::vector<std::size_t> pick_gallery(const std::vector<Template3D>& templates) {
    std::vector<std::size_t> gallery;
    std::vector<std::string> fingers;
    for (std::size_t i = 0; i < templates.size(); ++i) {
        auto it = std::find(fingers.begin(), fingers.end(), templates[i].finger_id);
        if (it == fingers.end()) {
            fingers.push_back(templates[i].finger_id);
            gallery.push_back(i);
            continue;
        }
        std::size_t& cur = gallery[static_cast<std::size_t>(it - fingers.begin())];
        const double a = std::abs(templates[i].yaw_deg);
        const double b = std::abs(templates[cur].yaw_deg);
        if (a < b || (a == b && templates[i].template_id < templates[cur].template_id)) cur = i;
    }
    return gallery;
}

}  // namespace detail

struct ProtocolResult {
    MetricsReport report;
    ScoreMatrix matrix;
};

// Score for template pair (i, j) plus a flag marking entries the protocol
// zeroes out (failed embeddings, missing external rows).
using PairScorer = std::function<std::pair<double, bool>(std::size_t, std::size_t)>;

// Protocol driver over an arbitrary pair scorer: fills the score matrix and
// assembles EER, Rank-1, and curve points.
inline ProtocolResult run_protocol_scored(const std::vector<Template3D>& templates,
                                          const ProtocolSpec& spec, const PairScorer& score_of,
                                          std::size_t failed_templates = 0) {
    if (templates.empty()) throw std::invalid_argument("run_protocol: empty dataset");

    ProtocolResult out;
    out.report.n_templates = templates.size();
    out.report.failed_templates = failed_templates;

    ScoreMatrix& m = out.matrix;
    if (spec.mode == ProtocolSpec::Mode::AllVsAll) {
        out.report.protocol = "all-vs-all";
        const std::size_t n = templates.size();
        for (const auto& t : templates) {
            m.probe_ids.push_back(t.template_id);
            m.probe_fingers.push_back(t.finger_id);
        }
        m.gallery_ids = m.probe_ids;
        m.gallery_fingers = m.probe_fingers;
        m.symmetric = true;
        m.scores = Tensor({n, n});
        m.missing.assign(n * n, 0);
        for (std::size_t i = 0; i < n; ++i) m.scores.at(i, i) = 1.0;

        std::vector<double> genuine, impostor;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const auto [s, miss] = score_of(i, j);
                m.scores.at(i, j) = s;
                m.scores.at(j, i) = s;
                if (miss) {
                    m.missing[i * n + j] = 1;
                    m.missing[j * n + i] = 1;
                }
                (templates[i].finger_id == templates[j].finger_id ? genuine : impostor)
                    .push_back(s);
            }
        }
        out.report.n_pairs = n * (n - 1) / 2;
        out.report.n_genuine = genuine.size();
        out.report.n_impostor = impostor.size();
        if (!genuine.empty() && !impostor.empty()) {
            const EerResult eer = compute_eer(genuine, impostor);
            out.report.eer = eer.eer;
            out.report.eer_threshold = eer.threshold;
            out.report.det = detail::rate_sweep(genuine, impostor);
        }
        // Identification view: each template probes all the others.
        CmcResult cmc;
        cmc.hit_rate.assign(n - 1, 0.0);
        std::size_t counted = 0;
        std::vector<std::size_t> order;
        for (std::size_t p = 0; p < n; ++p) {
            order.clear();
            bool has_genuine = false;
            for (std::size_t g = 0; g < n; ++g) {
                if (g == p) continue;
                order.push_back(g);
                has_genuine |= templates[p].finger_id == templates[g].finger_id;
            }
            if (!has_genuine) {
                ++cmc.excluded_probes;
                continue;
            }
            ++counted;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return m.scores.at(p, a) > m.scores.at(p, b);
            });
            for (std::size_t r = 0; r < order.size(); ++r) {
                if (templates[p].finger_id == templates[order[r]].finger_id) {
                    cmc.hit_rate[r] += 1.0;
                    break;
                }
            }
        }
        if (counted) {
            double cum = 0.0;
            for (auto& h : cmc.hit_rate) {
                cum += h;
                h = cum / static_cast<double>(counted);
            }
            cmc.rank1 = cmc.hit_rate[0];
        }
        out.report.rank1 = cmc.rank1;
        out.report.cmc = cmc.hit_rate;
        out.report.excluded_probes = cmc.excluded_probes;
    } else {
        out.report.protocol = "identification";
        const auto gallery = detail::pick_gallery(templates);
        std::vector<std::uint8_t> in_gallery(templates.size(), 0);
        for (std::size_t g : gallery) in_gallery[g] = 1;

        std::vector<std::size_t> probes;
        for (std::size_t i = 0; i < templates.size(); ++i)
            if (!in_gallery[i]) probes.push_back(i);
        if (probes.empty())
            throw std::invalid_argument("run_protocol: identification needs probe templates");

        for (std::size_t p : probes) {
            m.probe_ids.push_back(templates[p].template_id);
            m.probe_fingers.push_back(templates[p].finger_id);
        }
        for (std::size_t g : gallery) {
            m.gallery_ids.push_back(templates[g].template_id);
            m.gallery_fingers.push_back(templates[g].finger_id);
        }
        m.scores = Tensor({probes.size(), gallery.size()});
        m.missing.assign(probes.size() * gallery.size(), 0);

        std::vector<double> genuine, impostor;
        for (std::size_t pi = 0; pi < probes.size(); ++pi) {
            for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
                const auto [s, miss] = score_of(probes[pi], gallery[gi]);
                m.scores.at(pi, gi) = s;
                if (miss) m.missing[pi * gallery.size() + gi] = 1;
                (m.probe_fingers[pi] == m.gallery_fingers[gi] ? genuine : impostor).push_back(s);
            }
        }
        out.report.n_pairs = probes.size() * gallery.size();
        out.report.n_genuine = genuine.size();
        out.report.n_impostor = impostor.size();
        if (!genuine.empty() && !impostor.empty()) {
            const EerResult eer = compute_eer(genuine, impostor);
            out.report.eer = eer.eer;
            out.report.eer_threshold = eer.threshold;
            out.report.det = detail::rate_sweep(genuine, impostor);
        }
        const CmcResult cmc = compute_cmc(m);
        out.report.rank1 = cmc.rank1;
        out.report.cmc = cmc.hit_rate;
        out.report.excluded_probes = cmc.excluded_probes;
    }
    return out;
}

// Runs the full protocol from a matcher: embeds every template (failures are
// marked and scored 0) and scores pairs by embedding similarity.
inline ProtocolResult run_protocol(const std::vector<Template3D>& templates,
                                   const ProtocolSpec& spec, const Matcher& matcher) {
    if (templates.empty()) throw std::invalid_argument("run_protocol: empty dataset");
    std::vector<std::optional<Embedding>> embeddings(templates.size());
    detail::parallel_for(templates.size(),
                         [&](std::size_t i) { embeddings[i] = matcher(templates[i]); });
    std::size_t failed = 0;
    for (const auto& e : embeddings)
        if (!e) ++failed;
    const PairScorer scorer = [&embeddings](std::size_t i,
                                            std::size_t j) -> std::pair<double, bool> {
        if (!embeddings[i] || !embeddings[j]) return {0.0, true};
        return {match_score(*embeddings[i], *embeddings[j]), false};
    };
    return run_protocol_scored(templates, spec, scorer, failed);
}

// ---------------------------------------------------------------------------
// Curves

namespace detail {

struct SvgAxes {
    double x0, x1, y0, y1;  // data ranges
    bool log_x = false;
};

inline std::string render_svg(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<std::pair<double, double>>& pts,
                              const SvgAxes& ax) {
    const double w = 640, h = 480, ml = 70, mr = 20, mt = 40, mb = 50;
    auto xmap = [&](double x) {
        if (ax.log_x) x = std::log10(std::max(x, ax.x0));
        const double lo = ax.log_x ? std::log10(ax.x0) : ax.x0;
        const double hi = ax.log_x ? std::log10(ax.x1) : ax.x1;
        return ml + (x - lo) / (hi - lo) * (w - ml - mr);
    };
    auto ymap = [&](double y) { return h - mb - (y - ax.y0) / (ax.y1 - ax.y0) * (h - mt - mb); };

    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n";
    s << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
    s << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">" << title << "</text>\n";
    s << "<line x1=\"" << num9(ml) << "\" y1=\"" << num9(h - mb) << "\" x2=\"" << num9(w - mr)
      << "\" y2=\"" << num9(h - mb) << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << num9(ml) << "\" y1=\"" << num9(mt) << "\" x2=\"" << num9(ml)
      << "\" y2=\"" << num9(h - mb) << "\" stroke=\"black\"/>\n";
    s << "<text x=\"320\" y=\"470\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">" << x_label << "</text>\n";
    s << "<text x=\"18\" y=\"240\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 18 240)\">" << y_label << "</text>\n";
    s << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i) s << ' ';
        s << num9(xmap(pts[i].first)) << ',' << num9(ymap(pts[i].second));
    }
    s << "\"/>\n</svg>\n";
    return s.str();
}

}  // namespace detail

// Writes det/roc/cmc point CSVs and matching self-contained SVGs (the DET
// gets a log-scaled FMR axis) into the given directory.
inline void emit_curves(const MetricsReport& report, const std::string& dir) {
    const std::string base = dir.empty() ? std::string(".") : dir;

    std::ostringstream det_csv;
    det_csv << "threshold,fmr,fnmr\n";
    std::vector<std::pair<double, double>> det_pts, roc_pts;
    for (const auto& p : report.det) {
        det_csv << num9(p.threshold) << ',' << num9(p.fmr) << ',' << num9(p.fnmr) << '\n';
        det_pts.push_back({std::max(p.fmr, 1e-4), p.fnmr});
        roc_pts.push_back({p.fmr, 1.0 - p.fnmr});
    }
    write_text_file(base + "/det.csv", det_csv.str());
    write_text_file(base + "/det.svg",
                    detail::render_svg("DET", "FMR (log scale)", "FNMR", det_pts,
                                       {1e-4, 1.0, 0.0, 1.0, true}));

    std::ostringstream roc_csv;
    roc_csv << "fmr,tpr\n";
    for (const auto& p : roc_pts) roc_csv << num9(p.first) << ',' << num9(p.second) << '\n';
    write_text_file(base + "/roc.csv", roc_csv.str());
    write_text_file(base + "/roc.svg",
                    detail::render_svg("ROC", "FMR", "TPR", roc_pts, {0.0, 1.0, 0.0, 1.0, false}));

    std::ostringstream cmc_csv;
    cmc_csv << "rank,hit_rate\n";
    std::vector<std::pair<double, double>> cmc_pts;
    for (std::size_t r = 0; r < report.cmc.size(); ++r) {
        cmc_csv << (r + 1) << ',' << num9(report.cmc[r]) << '\n';
        cmc_pts.push_back({static_cast<double>(r + 1), report.cmc[r]});
    }
    write_text_file(base + "/cmc.csv", cmc_csv.str());
    const double rmax = cmc_pts.empty() ? 1.0 : static_cast<double>(cmc_pts.size());
    write_text_file(base + "/cmc.svg",
                    detail::render_svg("CMC", "Rank", "Hit rate", cmc_pts,
                                       {1.0, std::max(rmax, 2.0), 0.0, 1.0, false}));
}

}  // namespace g3dm
