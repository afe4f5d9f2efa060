#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "g3dm/evaluation.hpp"
#include "g3dm/geometry.hpp"
#include "g3dm/optim.hpp"
#include "g3dm/textio.hpp"
#include "g3dm/training.hpp"

namespace g3dm::io {

namespace detail {

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Templates (JSON Lines, one object per template)

inline std::string template_to_json_line(const Template3D& tpl) {
    std::ostringstream s;
    s << "{\"template_id\":\"" << detail::json_escape(tpl.template_id) << "\",\"finger_id\":\""
      << detail::json_escape(tpl.finger_id) << "\",\"pose_label\":\""
      << detail::json_escape(tpl.pose_label) << "\",\"yaw\":" << num9(tpl.yaw_deg)
      << ",\"minutiae\":[";
    for (std::size_t i = 0; i < tpl.minutiae.size(); ++i) {
        const Minutia3D& m = tpl.minutiae[i];
        if (i) s << ',';
        s << '[' << num9(m.p.x) << ',' << num9(m.p.y) << ',' << num9(m.p.z) << ',' << num9(m.o.x)
          << ',' << num9(m.o.y) << ',' << num9(m.o.z) << ']';
    }
    s << "]}";
    return s.str();
}

inline void save_templates(const std::vector<Template3D>& templates, const std::string& path) {
    std::ostringstream s;
    for (const auto& t : templates) s << template_to_json_line(t) << '\n';
    write_text_file(path, s.str());
}

// Parses and validates templates; each minutia orientation must have norm
// alpha (1e-6 relative) unless the record carries its own "alpha" override.
inline std::vector<Template3D> load_templates(const std::string& path,
                                              double alpha = kDefaultAlpha) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_templates: cannot read " + path);

    std::vector<Template3D> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("load_templates: " + path + " line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        auto fail = [&](const std::string& msg) -> std::runtime_error {
            return std::runtime_error("load_templates: " + path + " line " +
                                      std::to_string(line_no) + ": " + msg);
        };
        if (!j.is_object() || !j.contains("template_id") || !j.contains("finger_id") ||
            !j.contains("minutiae"))
            throw fail("expected object with template_id, finger_id, minutiae");

        Template3D t;
        t.template_id = j.at("template_id").get<std::string>();
        t.finger_id = j.at("finger_id").get<std::string>();
        t.pose_label = j.value("pose_label", std::string{});
        t.yaw_deg = j.value("yaw", 0.0);
        const double expect_norm = j.value("alpha", alpha);

        for (const auto& row : j.at("minutiae")) {
            if (!row.is_array() || row.size() != 6)
                throw fail("minutia rows must have exactly 6 numbers");
            Minutia3D m;
            m.p = {row[0].get<double>(), row[1].get<double>(), row[2].get<double>()};
            m.o = {row[3].get<double>(), row[4].get<double>(), row[5].get<double>()};
            if (!std::isfinite(m.p.x) || !std::isfinite(m.p.y) || !std::isfinite(m.p.z) ||
                !std::isfinite(m.o.x) || !std::isfinite(m.o.y) || !std::isfinite(m.o.z))
                throw fail("non-finite minutia in template " + t.template_id);
            const double n = m.o.norm();
            if (std::abs(n - expect_norm) > 1e-6 * std::max(1.0, expect_norm))
                throw fail("orientation norm " + num9(n) + " != alpha " + num9(expect_norm) +
                           " in template " + t.template_id);
            t.minutiae.push_back(m);
        }
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2D minutiae sets (JSON Lines, one object per impression)

struct MinutiaSet2D {
    std::string set_id;
    std::string identity_id;
    std::vector<Minutia2D> minutiae;
};

inline void save_minutiae_2d(const std::vector<MinutiaSet2D>& sets, const std::string& path) {
    std::ostringstream s;
    for (const auto& set : sets) {
        s << "{\"set_id\":\"" << detail::json_escape(set.set_id) << "\",\"identity_id\":\""
          << detail::json_escape(set.identity_id) << "\",\"minutiae\":[";
        for (std::size_t i = 0; i < set.minutiae.size(); ++i) {
            if (i) s << ',';
            s << '[' << num9(set.minutiae[i].x) << ',' << num9(set.minutiae[i].y) << ','
              << num9(set.minutiae[i].theta) << ']';
        }
        s << "]}\n";
    }
    write_text_file(path, s.str());
}

inline std::vector<MinutiaSet2D> load_minutiae_2d(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_minutiae_2d: cannot read " + path);
    std::vector<MinutiaSet2D> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("load_minutiae_2d: " + path + " line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        MinutiaSet2D set;
        set.set_id = j.at("set_id").get<std::string>();
        set.identity_id = j.at("identity_id").get<std::string>();
        for (const auto& row : j.at("minutiae")) {
            if (!row.is_array() || row.size() != 3)
                throw std::runtime_error("load_minutiae_2d: " + path + " line " +
                                         std::to_string(line_no) +
                                         ": minutia rows must have exactly 3 numbers");
            set.minutiae.push_back(
                {row[0].get<double>(), row[1].get<double>(), normalize_angle(row[2].get<double>())});
        }
        out.push_back(std::move(set));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Grids (CSV, header "width,height", rows i,j,...)

inline void save_gradient_grid(const GradientGrid& g, const std::string& path) {
    std::ostringstream s;
    s << "width,height\n" << g.width << ',' << g.height << "\ni,j,g_x,g_y,mask\n";
    for (std::size_t j = 0; j < g.height; ++j)
        for (std::size_t i = 0; i < g.width; ++i) {
            const std::size_t c = g.idx(i, j);
            s << i << ',' << j << ',' << num9(g.gx[c]) << ',' << num9(g.gy[c]) << ','
              << (g.mask[c] ? 1 : 0) << '\n';
        }
    write_text_file(path, s.str());
}

inline void save_depth_grid(const DepthGrid& g, const std::string& path) {
    std::ostringstream s;
    s << "width,height\n" << g.width << ',' << g.height << "\ni,j,z,mask\n";
    for (std::size_t j = 0; j < g.height; ++j)
        for (std::size_t i = 0; i < g.width; ++i) {
            const std::size_t c = g.idx(i, j);
            s << i << ',' << j << ',' << num9(g.z[c]) << ',' << (g.mask[c] ? 1 : 0) << '\n';
        }
    write_text_file(path, s.str());
}

namespace detail {

struct GridHeader {
    std::size_t width = 0, height = 0;
    std::ifstream in;
};

inline GridHeader open_grid(const std::string& path, const char* columns) {
    GridHeader h;
    h.in.open(path, std::ios::binary);
    if (!h.in) throw std::runtime_error("grid load: cannot read " + path);
    std::string line;
    if (!std::getline(h.in, line) || line != "width,height")
        throw std::runtime_error("grid load: " + path + ": expected 'width,height' header");
    if (!std::getline(h.in, line) ||
        std::sscanf(line.c_str(), "%zu,%zu", &h.width, &h.height) != 2 || h.width == 0 ||
        h.height == 0)
        throw std::runtime_error("grid load: " + path + ": bad dimensions line");
    if (!std::getline(h.in, line) || line != columns)
        throw std::runtime_error("grid load: " + path + ": expected column header '" +
                                 columns + "'");
    return h;
}

}  // namespace detail

inline GradientGrid load_gradient_grid(const std::string& path, double scale = 1.0) {
    auto h = detail::open_grid(path, "i,j,g_x,g_y,mask");
    GradientGrid g = GradientGrid::make(h.width, h.height, scale);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(h.in, line)) {
        if (line.empty()) continue;
        std::size_t i, j;
        double gx, gy;
        int mask;
        if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%d", &i, &j, &gx, &gy, &mask) != 5 ||
            i >= g.width || j >= g.height)
            throw std::runtime_error("grid load: " + path + ": malformed row '" + line + "'");
        const std::size_t c = g.idx(i, j);
        g.gx[c] = gx;
        g.gy[c] = gy;
        g.mask[c] = mask ? 1 : 0;
        ++rows;
    }
    if (rows != g.width * g.height)
        throw std::runtime_error("grid load: " + path + ": expected " +
                                 std::to_string(g.width * g.height) + " rows, got " +
                                 std::to_string(rows));
    return g;
}

inline DepthGrid load_depth_grid(const std::string& path, double scale = 1.0) {
    auto h = detail::open_grid(path, "i,j,z,mask");
    DepthGrid g = DepthGrid::make(h.width, h.height, scale);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(h.in, line)) {
        if (line.empty()) continue;
        std::size_t i, j;
        double z;
        int mask;
        if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%d", &i, &j, &z, &mask) != 4 || i >= g.width ||
            j >= g.height)
            throw std::runtime_error("grid load: " + path + ": malformed row '" + line + "'");
        const std::size_t c = g.idx(i, j);
        g.z[c] = z;
        g.mask[c] = mask ? 1 : 0;
        ++rows;
    }
    if (rows != g.width * g.height)
        throw std::runtime_error("grid load: " + path + ": row count mismatch");
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoints (binary, magic "G3DM", 32-bit little-endian float payload)

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string context;

    void need(std::size_t n) {
        if (pos + n > buf.size())
            throw std::runtime_error("checkpoint: truncated file" +
                                     (context.empty() ? "" : " at " + context));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline void save_checkpoint(const ParamSet& params, const std::string& config_echo,
                            const std::string& path) {
    std::string out;
    out += "G3DM";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(config_echo.size()));
    out += config_echo;
    detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (std::size_t t = 0; t < params.size(); ++t) {
        const std::string& name = params.names()[t];
        const Tensor& tensor = params.at(t);
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(tensor.shape().size()));
        for (std::size_t e : tensor.shape()) detail::put_u64(out, e);
        for (std::size_t i = 0; i < tensor.size(); ++i)
            detail::put_f32(out, static_cast<float>(tensor[i]));
    }
    write_text_file(path, out);
}

struct Checkpoint {
    ParamSet params;
    std::string config_echo;
    std::uint32_t version = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    const std::string buf = read_text_file(path);
    detail::Reader r{buf};
    if (r.bytes(4) != "G3DM")
        throw std::runtime_error("checkpoint: bad magic in " + path);
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(ck.version) + " in " + path);
    ck.config_echo = r.bytes(r.u32());
    const std::uint32_t count = r.u32();
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string name = r.bytes(r.u32());
        r.context = "tensor " + name;
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape;
        std::size_t total = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<std::size_t>(r.u64()));
            total *= shape.back();
        }
        Tensor tensor(shape);
        for (std::size_t i = 0; i < total; ++i) tensor[i] = static_cast<double>(r.f32());
        ck.params.add(name, std::move(tensor));
        r.context.clear();
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Dataset manifests (JSON)

struct ManifestRecord {
    std::string template_id;
    std::string finger_id;
    std::string pose_label;
    double yaw_deg = 0.0;
    std::string template_path;       // relative to the manifest
    std::string gradient_grid_path;  // optional
    std::string depth_grid_path;     // optional
    double grid_scale = 1.0;
};

struct DatasetManifest {
    std::string name;
    double alpha = kDefaultAlpha;
    std::vector<ManifestRecord> records;
};

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ostringstream s;
    s << "{\n  \"name\": \"" << detail::json_escape(m.name) << "\",\n  \"alpha\": "
      << num9(m.alpha) << ",\n  \"records\": [\n";
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        const auto& r = m.records[i];
        s << "    {\"template_id\": \"" << detail::json_escape(r.template_id)
          << "\", \"finger_id\": \"" << detail::json_escape(r.finger_id)
          << "\", \"pose_label\": \"" << detail::json_escape(r.pose_label)
          << "\", \"yaw_deg\": " << num9(r.yaw_deg) << ", \"template_path\": \""
          << detail::json_escape(r.template_path) << "\"";
        if (!r.gradient_grid_path.empty())
            s << ", \"gradient_grid_path\": \"" << detail::json_escape(r.gradient_grid_path)
              << "\", \"depth_grid_path\": \"" << detail::json_escape(r.depth_grid_path)
              << "\", \"grid_scale\": " << num9(r.grid_scale);
        s << '}' << (i + 1 < m.records.size() ? "," : "") << '\n';
    }
    s << "  ]\n}\n";
    write_text_file(path, s.str());
}

// Loads and validates a manifest: unique template ids, every referenced file
// present (paths resolved relative to the manifest's directory).
inline DatasetManifest load_manifest(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("load_manifest: " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.name = j.value("name", std::string{});
    m.alpha = j.value("alpha", kDefaultAlpha);
    const auto base = std::filesystem::path(path).parent_path();
    std::set<std::string> ids;
    for (const auto& rec : j.at("records")) {
        ManifestRecord r;
        r.template_id = rec.at("template_id").get<std::string>();
        r.finger_id = rec.at("finger_id").get<std::string>();
        r.pose_label = rec.value("pose_label", std::string{});
        r.yaw_deg = rec.value("yaw_deg", 0.0);
        r.template_path = rec.at("template_path").get<std::string>();
        r.gradient_grid_path = rec.value("gradient_grid_path", std::string{});
        r.depth_grid_path = rec.value("depth_grid_path", std::string{});
        r.grid_scale = rec.value("grid_scale", 1.0);
        if (!ids.insert(r.template_id).second)
            throw std::runtime_error("load_manifest: duplicate template_id " + r.template_id);
        for (const std::string* p : {&r.template_path, &r.gradient_grid_path,
                                     &r.depth_grid_path}) {
            if (p->empty()) continue;
            if (!std::filesystem::exists(base / *p))
                throw std::runtime_error("load_manifest: missing file " + (base / *p).string() +
                                         " referenced by " + r.template_id);
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

// All templates of a manifest, in record order.
inline std::vector<Template3D> load_manifest_templates(const std::string& manifest_path,
                                                       const DatasetManifest& m) {
    const auto base = std::filesystem::path(manifest_path).parent_path();
    std::vector<Template3D> out;
    for (const auto& r : m.records) {
        auto batch = load_templates((base / r.template_path).string(), m.alpha);
        for (auto& t : batch) {
            if (t.template_id == r.template_id) {
                t.yaw_deg = r.yaw_deg;
                t.pose_label = r.pose_label;
                out.push_back(std::move(t));
            }
        }
    }
    if (out.size() != m.records.size())
        throw std::runtime_error("load_manifest_templates: template files do not cover "
                                 "every manifest record");
    return out;
}

// ---------------------------------------------------------------------------
// Score CSV and embeddings CSV

struct ScoreRow {
    std::string probe_id;
    std::string gallery_id;
    double score = 0.0;
};

inline void save_scores(const std::vector<ScoreRow>& rows, const std::string& path) {
    std::ostringstream s;
    s << "probe_id,gallery_id,score\n";
    for (const auto& r : rows)
        s << r.probe_id << ',' << r.gallery_id << ',' << num9(r.score) << '\n';
    write_text_file(path, s.str());
}

inline std::vector<ScoreRow> load_scores(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_scores: cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "probe_id,gallery_id,score")
        throw std::runtime_error("load_scores: " + path + ": bad header");
    std::vector<ScoreRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw std::runtime_error("load_scores: " + path + " line " +
                                     std::to_string(line_no) + ": malformed row");
        ScoreRow r;
        r.probe_id = line.substr(0, c1);
        r.gallery_id = line.substr(c1 + 1, c2 - c1 - 1);
        try {
            r.score = std::stod(line.substr(c2 + 1));
        } catch (const std::exception&) {
            throw std::runtime_error("load_scores: " + path + " line " +
                                     std::to_string(line_no) + ": bad score value");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void save_embeddings(const std::vector<std::pair<std::string, Embedding>>& embeddings,
                            const std::string& path) {
    std::ostringstream s;
    s << "template_id,dim\n";
    for (const auto& [id, e] : embeddings) {
        s << id << ',' << e.size();
        for (double v : e) s << ',' << num9(v);
        s << '\n';
    }
    write_text_file(path, s.str());
}

inline std::vector<std::pair<std::string, Embedding>> load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_embeddings: cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "template_id,dim")
        throw std::runtime_error("load_embeddings: " + path + ": bad header");
    std::vector<std::pair<std::string, Embedding>> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id, field;
        std::getline(row, id, ',');
        std::getline(row, field, ',');
        const std::size_t dim = static_cast<std::size_t>(std::stoul(field));
        Embedding e;
        e.reserve(dim);
        while (std::getline(row, field, ',')) e.push_back(std::stod(field));
        if (e.size() != dim)
            throw std::runtime_error("load_embeddings: " + path + ": row for " + id +
                                     " has " + std::to_string(e.size()) + " values, expected " +
                                     std::to_string(dim));
        out.push_back({id, std::move(e)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss trace CSV and report JSON

inline void save_loss_trace(const std::vector<LossTraceRow>& rows, const std::string& path) {
    std::ostringstream s;
    s << "epoch,stage,mean_loss,active_triplet_fraction\n";
    for (const auto& r : rows)
        s << r.epoch << ',' << r.stage << ',' << num9(r.mean_loss) << ','
          << num9(r.active_triplet_fraction) << '\n';
    write_text_file(path, s.str());
}

inline void save_report(const MetricsReport& r, const std::string& path) {
    std::ostringstream s;
    s << "{\n";
    s << "  \"protocol\": \"" << detail::json_escape(r.protocol) << "\",\n";
    s << "  \"n_templates\": " << r.n_templates << ",\n";
    s << "  \"n_pairs\": " << r.n_pairs << ",\n";
    s << "  \"n_genuine\": " << r.n_genuine << ",\n";
    s << "  \"n_impostor\": " << r.n_impostor << ",\n";
    s << "  \"failed_templates\": " << r.failed_templates << ",\n";
    s << "  \"excluded_probes\": " << r.excluded_probes << ",\n";
    s << "  \"eer\": " << num9(r.eer) << ",\n";
    s << "  \"eer_threshold\": " << num9(r.eer_threshold) << ",\n";
    s << "  \"rank1\": " << num9(r.rank1) << ",\n";
    s << "  \"det\": [";
    for (std::size_t i = 0; i < r.det.size(); ++i) {
        if (i) s << ',';
        s << '[' << num9(r.det[i].threshold) << ',' << num9(r.det[i].fmr) << ','
          << num9(r.det[i].fnmr) << ']';
    }
    s << "],\n  \"cmc\": [";
    for (std::size_t i = 0; i < r.cmc.size(); ++i) {
        if (i) s << ',';
        s << num9(r.cmc[i]);
    }
    s << "]\n}\n";
    write_text_file(path, s.str());
}

inline MetricsReport load_report(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("load_report: " + path + ": " + e.what());
    }
    MetricsReport r;
    r.protocol = j.value("protocol", std::string{});
    r.n_templates = j.value("n_templates", std::size_t{0});
    r.n_pairs = j.value("n_pairs", std::size_t{0});
    r.n_genuine = j.value("n_genuine", std::size_t{0});
    r.n_impostor = j.value("n_impostor", std::size_t{0});
    r.failed_templates = j.value("failed_templates", std::size_t{0});
    r.excluded_probes = j.value("excluded_probes", std::size_t{0});
    r.eer = j.value("eer", 0.0);
    r.eer_threshold = j.value("eer_threshold", 0.0);
    r.rank1 = j.value("rank1", 0.0);
    if (j.contains("det"))
        for (const auto& p : j.at("det"))
            r.det.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    if (j.contains("cmc"))
        for (const auto& v : j.at("cmc")) r.cmc.push_back(v.get<double>());
    return r;
}

}  // namespace g3dm::io
