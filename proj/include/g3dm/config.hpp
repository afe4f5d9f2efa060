#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "g3dm/graphnet.hpp"
#include "g3dm/textio.hpp"
#include "g3dm/training.hpp"

namespace g3dm {

// ---------------------------------------------------------------------------
// Minimal TOML subset: [section.sub] headers, key = value lines, values of
// type bool / integer / float / "string" / homogeneous array, # comments.

struct TomlValue {
    enum class Kind { Bool, Int, Float, String, NumArray, StrArray };
    Kind kind = Kind::Int;
    bool b = false;
    long long i = 0;
    double f = 0.0;
    std::string s;
    std::vector<double> nums;
    std::vector<std::string> strs;
    std::size_t line = 0;
};

namespace detail_toml {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

inline TomlValue parse_scalar(const std::string& raw, std::size_t line_no,
                              const std::string& key) {
    TomlValue v;
    v.line = line_no;
    const std::string s = trim(raw);
    if (s.empty()) throw std::runtime_error("config line " + std::to_string(line_no) +
                                            ": empty value for " + key);
    if (s == "true" || s == "false") {
        v.kind = TomlValue::Kind::Bool;
        v.b = (s == "true");
        return v;
    }
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"')
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": unterminated string for " + key);
        v.kind = TomlValue::Kind::String;
        v.s = s.substr(1, s.size() - 2);
        return v;
    }
    // Number: integer when it parses fully without '.', 'e', or 'E'.
    try {
        std::size_t used = 0;
        if (s.find_first_of(".eE") == std::string::npos) {
            v.i = std::stoll(s, &used);
            if (used == s.size()) {
                v.kind = TomlValue::Kind::Int;
                v.f = static_cast<double>(v.i);
                return v;
            }
        }
        v.f = std::stod(s, &used);
        if (used == s.size()) {
            v.kind = TomlValue::Kind::Float;
            return v;
        }
    } catch (const std::exception&) {
    }
    throw std::runtime_error("config line " + std::to_string(line_no) +
                             ": cannot parse value '" + s + "' for " + key);
}

}  // namespace detail_toml

inline std::map<std::string, TomlValue> parse_toml(const std::string& text) {
    std::map<std::string, TomlValue> out;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? eol : eol - pos);
        pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
        ++line_no;
        line = detail_toml::trim(detail_toml::strip_comment(line));
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": malformed section header");
            section = detail_toml::trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": empty section name");
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected key = value");
        const std::string key = detail_toml::trim(line.substr(0, eq));
        const std::string full_key = section.empty() ? key : section + "." + key;
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
        if (out.count(full_key))
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": duplicate key " + full_key);

        std::string value = detail_toml::trim(line.substr(eq + 1));
        if (!value.empty() && value.front() == '[') {
            if (value.back() != ']')
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": unterminated array for " + full_key);
            TomlValue v;
            v.line = line_no;
            const std::string inner = detail_toml::trim(value.substr(1, value.size() - 2));
            bool strings = false;
            if (!inner.empty()) {
                std::size_t start = 0;
                while (start <= inner.size()) {
                    std::size_t comma = inner.find(',', start);
                    const std::string item = detail_toml::trim(
                        inner.substr(start, comma == std::string::npos ? comma : comma - start));
                    if (!item.empty()) {
                        const TomlValue sv = detail_toml::parse_scalar(item, line_no, full_key);
                        if (sv.kind == TomlValue::Kind::String) {
                            strings = true;
                            v.strs.push_back(sv.s);
                        } else if (sv.kind == TomlValue::Kind::Int ||
                                   sv.kind == TomlValue::Kind::Float) {
                            v.nums.push_back(sv.f);
                        } else {
                            throw std::runtime_error("config line " + std::to_string(line_no) +
                                                     ": unsupported array element for " +
                                                     full_key);
                        }
                    }
                    if (comma == std::string::npos) break;
                    start = comma + 1;
                }
            }
            if (strings && !v.nums.empty())
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": mixed array types for " + full_key);
            v.kind = strings ? TomlValue::Kind::StrArray : TomlValue::Kind::NumArray;
            out.emplace(full_key, std::move(v));
        } else {
            out.emplace(full_key, detail_toml::parse_scalar(value, line_no, full_key));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run configuration (defaults carry the published training recipe)

struct RunConfig {
    double alpha = kDefaultAlpha;
    double sphere_c = kDefaultSphereC;

    NetworkConfig network;

    double gamma = 0.2;
    std::size_t pretrain_batch = 128;
    std::size_t finetune_batch = 64;
    std::size_t pretrain_epochs = 80;
    std::size_t finetune_epochs = 100;
    std::size_t pretrain_pad = 200;
    std::size_t finetune_pad = 400;
    AdamHyper adam;  // lr 0.001, betas 0.9/0.999, weight decay 5e-4
    bool augment_enabled = true;
    double bn_momentum = 0.1;
    std::uint64_t seed = 0;

    AugmentPolicy augment;
    PairWeightTable pair_weights;

    TrainConfig pretrain_config() const {
        TrainConfig t;
        t.stage = TrainConfig::Stage::Pretrain;
        t.gamma = gamma;
        t.batch_size = pretrain_batch;
        t.epochs = pretrain_epochs;
        t.n_pad = pretrain_pad;
        t.adam = adam;
        t.augment_enabled = augment_enabled;
        t.bn_momentum = bn_momentum;
        t.seed = seed;
        return t;
    }

    TrainConfig finetune_config() const {
        TrainConfig t = pretrain_config();
        t.stage = TrainConfig::Stage::Finetune;
        t.batch_size = finetune_batch;
        t.epochs = finetune_epochs;
        t.n_pad = finetune_pad;
        return t;
    }

    void validate() const {
        if (!(alpha > 0.0)) throw std::runtime_error("config: geometry.alpha must be > 0");
        if (!(sphere_c > 0.0)) throw std::runtime_error("config: geometry.sphere_c must be > 0");
        if (!(gamma > 0.0)) throw std::runtime_error("config: train.gamma must be > 0");
        if (pretrain_batch < 2 || finetune_batch < 2)
            throw std::runtime_error("config: batch sizes must be >= 2");
        if (pretrain_epochs < 1 || finetune_epochs < 1)
            throw std::runtime_error("config: epochs must be >= 1");
        if (!(bn_momentum > 0.0 && bn_momentum <= 1.0))
            throw std::runtime_error("config: train.bn_momentum must lie in (0, 1]");
        network.validate();
        augment.validate();
        pair_weights.validate();
    }
};

namespace detail_cfg {

class KeyReader {
public:
    explicit KeyReader(std::map<std::string, TomlValue> values) : values_(std::move(values)) {}

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    double number(const std::string& key, double fallback) {
        auto v = take(key);
        if (!v) return fallback;
        if (v->kind != TomlValue::Kind::Int && v->kind != TomlValue::Kind::Float)
            throw std::runtime_error("config: " + key + " must be a number");
        return v->f;
    }

    long long integer(const std::string& key, long long fallback) {
        auto v = take(key);
        if (!v) return fallback;
        if (v->kind != TomlValue::Kind::Int)
            throw std::runtime_error("config: " + key + " must be an integer");
        return v->i;
    }

    bool boolean(const std::string& key, bool fallback) {
        auto v = take(key);
        if (!v) return fallback;
        if (v->kind != TomlValue::Kind::Bool)
            throw std::runtime_error("config: " + key + " must be true or false");
        return v->b;
    }

    std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
        auto v = take(key);
        if (!v) return fallback;
        if (v->kind != TomlValue::Kind::NumArray)
            throw std::runtime_error("config: " + key + " must be an array of numbers");
        return v->nums;
    }

    void finish() const {
        for (const auto& [key, value] : values_)
            if (!consumed_.count(key))
                throw std::runtime_error("config: unknown key " + key + " (line " +
                                         std::to_string(value.line) + ")");
    }

private:
    std::optional<TomlValue> take(const std::string& key) {
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        consumed_.insert(key);
        return it->second;
    }

    std::map<std::string, TomlValue> values_;
    std::set<std::string> consumed_;
};

inline std::vector<std::size_t> widths(KeyReader& r, const std::string& key,
                                       std::vector<std::size_t> fallback) {
    std::vector<double> def(fallback.begin(), fallback.end());
    const auto nums = r.numbers(key, def);
    std::vector<std::size_t> out;
    for (double v : nums) {
        if (v < 1 || v != std::floor(v))
            throw std::runtime_error("config: " + key + " entries must be positive integers");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

}  // namespace detail_cfg

// Parses a TOML configuration; omitted keys take the published defaults,
// unknown keys are rejected with their location.
inline RunConfig parse_config(const std::string& text) {
    detail_cfg::KeyReader r(parse_toml(text));
    RunConfig c;

    c.alpha = r.number("geometry.alpha", c.alpha);
    c.sphere_c = r.number("geometry.sphere_c", c.sphere_c);

    c.network.k = static_cast<std::size_t>(r.integer("network.k", static_cast<long long>(c.network.k)));
    c.network.input_dim = static_cast<std::size_t>(
        r.integer("network.input_dim", static_cast<long long>(c.network.input_dim)));
    c.network.edgeconv_widths =
        detail_cfg::widths(r, "network.edgeconv_widths", c.network.edgeconv_widths);
    c.network.stn_mlp_widths =
        detail_cfg::widths(r, "network.stn_mlp_widths", c.network.stn_mlp_widths);
    c.network.embed_mlp_widths =
        detail_cfg::widths(r, "network.embed_mlp_widths", c.network.embed_mlp_widths);
    c.network.residual_layers =
        detail_cfg::widths(r, "network.residual_layers", c.network.residual_layers);
    c.network.normalization = r.boolean("network.normalization", c.network.normalization);
    {
        const auto bounds = r.numbers("network.angle_bounds",
                                      {c.network.angle_bounds[0], c.network.angle_bounds[1],
                                       c.network.angle_bounds[2]});
        if (bounds.size() != 3)
            throw std::runtime_error("config: network.angle_bounds must have 3 entries");
        c.network.angle_bounds = {bounds[0], bounds[1], bounds[2]};
    }

    c.gamma = r.number("train.gamma", c.gamma);
    c.pretrain_batch = static_cast<std::size_t>(
        r.integer("train.pretrain_batch", static_cast<long long>(c.pretrain_batch)));
    c.finetune_batch = static_cast<std::size_t>(
        r.integer("train.finetune_batch", static_cast<long long>(c.finetune_batch)));
    c.pretrain_epochs = static_cast<std::size_t>(
        r.integer("train.pretrain_epochs", static_cast<long long>(c.pretrain_epochs)));
    c.finetune_epochs = static_cast<std::size_t>(
        r.integer("train.finetune_epochs", static_cast<long long>(c.finetune_epochs)));
    c.pretrain_pad = static_cast<std::size_t>(
        r.integer("train.pretrain_pad", static_cast<long long>(c.pretrain_pad)));
    c.finetune_pad = static_cast<std::size_t>(
        r.integer("train.finetune_pad", static_cast<long long>(c.finetune_pad)));
    c.adam.lr = r.number("train.lr", c.adam.lr);
    c.adam.beta1 = r.number("train.beta1", c.adam.beta1);
    c.adam.beta2 = r.number("train.beta2", c.adam.beta2);
    c.adam.weight_decay = r.number("train.weight_decay", c.adam.weight_decay);
    c.augment_enabled = r.boolean("train.augment", c.augment_enabled);
    c.bn_momentum = r.number("train.bn_momentum", c.bn_momentum);
    c.seed = static_cast<std::uint64_t>(r.integer("train.seed", static_cast<long long>(c.seed)));

    auto read_branch = [&](const std::string& prefix, AugmentBranch& b) {
        b.rot_range_x = r.number(prefix + ".rot_x_deg", b.rot_range_x * 180.0 / kPi) * kPi / 180.0;
        b.rot_range_y = r.number(prefix + ".rot_y_deg", b.rot_range_y * 180.0 / kPi) * kPi / 180.0;
        b.rot_range_z = r.number(prefix + ".rot_z_deg", b.rot_range_z * 180.0 / kPi) * kPi / 180.0;
        b.translation_range = r.number(prefix + ".translation", b.translation_range);
        b.drop_fraction = r.number(prefix + ".drop_fraction", b.drop_fraction);
        b.rotate = b.rot_range_x > 0.0 || b.rot_range_y > 0.0 || b.rot_range_z > 0.0;
    };
    read_branch("augment.small_gap", c.augment.small_gap);
    read_branch("augment.large_gap", c.augment.large_gap);

    c.pair_weights.small_gap_max_deg =
        r.number("pair_weights.small_gap_max_deg", c.pair_weights.small_gap_max_deg);
    c.pair_weights.mid_gap_max_deg =
        r.number("pair_weights.mid_gap_max_deg", c.pair_weights.mid_gap_max_deg);
    for (const char* cls : {"small", "mid", "large"}) {
        const long long m = r.integer(std::string("pair_weights.") + cls,
                                      static_cast<long long>(c.pair_weights.multiplicity[cls]));
        if (m < 1) throw std::runtime_error("config: pair_weights." + std::string(cls) +
                                            " must be >= 1");
        c.pair_weights.multiplicity[cls] = static_cast<std::size_t>(m);
    }

    r.finish();
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

}  // namespace g3dm
