#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "g3dm/geometry.hpp"
#include "g3dm/rng.hpp"

namespace g3dm {

// Ellipsoid finger surface, semi-axes in pixels: width (x), height along the
// finger (y), depth toward the camera (z).
struct SurfaceParams {
    double ax = 300.0;
    double ay = 450.0;
    double az = 260.0;
};

struct FingerParams {
    SurfaceParams surface;
    std::size_t minutiae_count = 40;
    double min_spacing = 14.0;     // px between minutiae on the surface
    double min_normal_z = 0.35;    // camera-facing cap: unit-normal z at samples
};

// Ground-truth synthetic finger: minutiae live on the canonical (unrotated)
// surface with unit orientations in the lift-convention tangent plane
// (perpendicular to (g_x, g_y, 1)).
struct SyntheticFinger {
    std::string finger_id;
    SurfaceParams surface;
    std::uint64_t seed = 0;

    struct CanonicalMinutia {
        Vec3 p;       // on the surface, world coordinates (surface center at origin)
        Vec3 o_unit;  // unit tangent direction
    };
    std::vector<CanonicalMinutia> minutiae;
};

struct ObservationSpec {
    double yaw_deg = 0.0;
    double dropout = 0.0;            // per-minutia drop probability, [0, 0.5]
    double position_jitter = 0.0;    // px, isotropic Gaussian
    double orientation_jitter = 0.0; // radians on the observed 2D angle
    std::uint64_t seed = 0;

    // Rendered-grid geometry (1/8-scale feature maps over the image).
    std::size_t grid_width = 96;
    std::size_t grid_height = 128;
    double grid_scale = 8.0;
    double mask_min_normal_z = 0.15;
};

struct Observation {
    Template3D tpl;  // image pixel coordinates (x, y), world depth z
    GradientGrid grad;
    DepthGrid depth;
};

namespace detail {

struct Quadric {
    // x^T A x = 1 with A symmetric.
    double a11, a12, a13, a22, a23, a33;

    static Quadric axis_aligned(const SurfaceParams& s) {
        return {1.0 / (s.ax * s.ax), 0.0, 0.0, 1.0 / (s.ay * s.ay), 0.0, 1.0 / (s.az * s.az)};
    }

    static Quadric rotated(const SurfaceParams& s, const Mat3& r) {
        // A' = R A R^T for the rotated surface.
        const Quadric a = axis_aligned(s);
        Mat3 am;
        am.m = {a.a11, a.a12, a.a13, a.a12, a.a22, a.a23, a.a13, a.a23, a.a33};
        const Mat3 ap = r * am * r.transposed();
        return {ap(0, 0), ap(0, 1), ap(0, 2), ap(1, 1), ap(1, 2), ap(2, 2)};
    }

    Vec3 apply(const Vec3& p) const {
        return {a11 * p.x + a12 * p.y + a13 * p.z, a12 * p.x + a22 * p.y + a23 * p.z,
                a13 * p.x + a23 * p.y + a33 * p.z};
    }

    // Outward unit normal at a surface point (gradient of the quadric).
    Vec3 unit_normal(const Vec3& p) const { return apply(p).normalized(); }

    // Depth gradient (dz/dx, dz/dy) of the camera-facing sheet at a surface
    // point; requires the normal's z-component to be positive.
    std::pair<double, double> depth_gradient(const Vec3& p) const {
        const Vec3 n = apply(p);
        return {-n.x / n.z, -n.y / n.z};
    }

    // Visible (largest-z) surface point above (x, y); false when (x, y) is
    // outside the silhouette.
    bool visible_depth(double x, double y, double& z_out) const {
        const double b = a13 * x + a23 * y;
        const double c = a11 * x * x + 2.0 * a12 * x * y + a22 * y * y - 1.0;
        const double disc = b * b - a33 * c;
        if (disc <= 0.0) return false;
        z_out = (-b + std::sqrt(disc)) / a33;
        return true;
    }
};

}  // namespace detail

// Deterministically samples a finger: minutiae on the camera-facing cap of
// the ellipsoid with pairwise spacing, orientations drawn by a random 2D
// angle lifted against the analytic surface gradient.
inline SyntheticFinger generate_finger(std::uint64_t seed, const FingerParams& params,
                                       const std::string& finger_id = {}) {
    if (params.minutiae_count < 20 || params.minutiae_count > 200)
        throw std::invalid_argument("generate_finger: minutiae count must be in [20, 200]");
    if (params.surface.ax <= 0 || params.surface.ay <= 0 || params.surface.az <= 0)
        throw std::invalid_argument("generate_finger: semi-axes must be positive");

    SyntheticFinger f;
    f.finger_id = finger_id.empty() ? "finger_" + std::to_string(seed) : finger_id;
    f.surface = params.surface;
    f.seed = seed;

    const auto quad = detail::Quadric::axis_aligned(params.surface);
    Rng rng(seed);
    const std::size_t max_attempts = 4000 * params.minutiae_count;
    std::size_t attempts = 0;
    while (f.minutiae.size() < params.minutiae_count) {
        if (++attempts > max_attempts)
            throw std::runtime_error(
                "generate_finger: could not place minutiae; spacing or cap too tight");
        // Random direction, projected radially onto the ellipsoid.
        const double u = rng.normal(), v = rng.normal(), w = std::abs(rng.normal());
        Vec3 dir{u, v, w};
        if (dir.norm() < 1e-9) continue;
        const Vec3 q = quad.apply(dir);
        const double scale = 1.0 / std::sqrt(dir.dot(q));
        const Vec3 p = dir * scale;

        if (quad.unit_normal(p).z < params.min_normal_z) continue;
        bool too_close = false;
        for (const auto& m : f.minutiae) {
            if ((m.p - p).norm() < params.min_spacing) {
                too_close = true;
                break;
            }
        }
        if (too_close) continue;

        const auto [gx, gy] = quad.depth_gradient(p);
        const double theta = rng.uniform(0.0, kTwoPi);
        SyntheticFinger::CanonicalMinutia cm;
        cm.p = p;
        cm.o_unit = solve_3d_orientation(theta, gx, gy).direction();
        f.minutiae.push_back(cm);
    }
    return f;
}

// Rotates the finger about the vertical axis, culls minutiae facing away
// from the camera or off the rendered mask, applies jitter and dropout, and
// renders the matching 1/8-scale gradient/depth grids of the rotated
// surface. Positions come out in image pixel coordinates.
inline Observation observe(const SyntheticFinger& finger, const ObservationSpec& spec,
                           double alpha = kDefaultAlpha) {
    if (std::abs(spec.yaw_deg) > 60.0)
        throw std::invalid_argument("observe: |yaw| must be <= 60 degrees");
    if (spec.dropout < 0.0 || spec.dropout > 0.5)
        throw std::invalid_argument("observe: dropout must lie in [0, 0.5]");

    const double yaw = spec.yaw_deg * kPi / 180.0;
    const Mat3 rot = rotation_from_euler({0.0, yaw, 0.0});
    const auto quad = detail::Quadric::rotated(finger.surface, rot);

    const double cx = 0.5 * static_cast<double>(spec.grid_width) * spec.grid_scale;
    const double cy = 0.5 * static_cast<double>(spec.grid_height) * spec.grid_scale;

    Observation obs;
    obs.grad = GradientGrid::make(spec.grid_width, spec.grid_height, spec.grid_scale);
    obs.depth = DepthGrid::make(spec.grid_width, spec.grid_height, spec.grid_scale);
    for (std::size_t j = 0; j < spec.grid_height; ++j) {
        for (std::size_t i = 0; i < spec.grid_width; ++i) {
            const double x = (static_cast<double>(i) + 0.5) * spec.grid_scale - cx;
            const double y = (static_cast<double>(j) + 0.5) * spec.grid_scale - cy;
            double z;
            if (!quad.visible_depth(x, y, z)) continue;
            const Vec3 p{x, y, z};
            if (quad.unit_normal(p).z < spec.mask_min_normal_z) continue;
            const std::size_t c = obs.grad.idx(i, j);
            const auto [gx, gy] = quad.depth_gradient(p);
            obs.grad.gx[c] = gx;
            obs.grad.gy[c] = gy;
            obs.grad.mask[c] = 1;
            obs.depth.z[c] = z;
            obs.depth.mask[c] = 1;
        }
    }

    Rng rng(spec.seed);
    obs.tpl.finger_id = finger.finger_id;
    obs.tpl.yaw_deg = spec.yaw_deg;
    for (const auto& cm : finger.minutiae) {
        const Vec3 p = rot * cm.p;
        // Cull minutiae whose outward surface normal faces away from the
        // camera, then those falling off the rendered mask.
        if (quad.apply(p).z <= 0.0) continue;
        {
            const double ix = p.x + cx, iy = p.y + cy;
            if (!obs.grad.in_bounds_pixel(ix, iy)) continue;
            const auto [ci, cj] = obs.grad.cell_of(ix, iy);
            if (!obs.grad.masked(ci, cj)) continue;
        }
        if (spec.dropout > 0.0 && rng.uniform() < spec.dropout) continue;

        Minutia3D out;
        if (spec.yaw_deg == 0.0 && spec.position_jitter == 0.0 &&
            spec.orientation_jitter == 0.0) {
            // Identity view: return the canonical minutia without
            // re-deriving anything.
            out.p = {cm.p.x + cx, cm.p.y + cy, cm.p.z};
            out.o = cm.o_unit * alpha;
        } else {
            const Vec3 o_rot = rot * cm.o_unit;
            const double planar = std::hypot(o_rot.x, o_rot.y);
            if (planar < 1e-9) continue;  // unobservable in the image plane
            double theta2d = std::atan2(o_rot.y, o_rot.x);
            if (spec.orientation_jitter > 0.0)
                theta2d += rng.normal(0.0, spec.orientation_jitter);
            const auto [gx, gy] = quad.depth_gradient(p);
            const Vec3 o = scale_orientation(solve_3d_orientation(theta2d, gx, gy), alpha);
            Vec3 pj = p;
            if (spec.position_jitter > 0.0) {
                pj.x += rng.normal(0.0, spec.position_jitter);
                pj.y += rng.normal(0.0, spec.position_jitter);
                pj.z += rng.normal(0.0, spec.position_jitter);
            }
            out.p = {pj.x + cx, pj.y + cy, pj.z};
            out.o = o;
        }
        obs.tpl.minutiae.push_back(out);
    }

    if (obs.tpl.minutiae.size() < kMinMinutiae)
        throw std::runtime_error("observe: fewer than 4 visible minutiae for finger " +
                                 finger.finger_id + " at yaw " + std::to_string(spec.yaw_deg));
    return obs;
}

// ---------------------------------------------------------------------------
// Contact-style 2D sets for pretraining

struct ContactParams {
    std::size_t minutiae_count = 40;
    std::size_t impressions = 3;
    double disk_radius = 280.0;
    double min_spacing = 14.0;
    double rotation_range = 0.3;     // radians, per impression
    double translation_range = 25.0; // px, per impression
    double jitter = 1.5;             // px
    double theta_jitter = 0.05;      // radians
    double dropout = 0.1;            // fraction dropped per impression; <= 0.15
                                     // keeps any two impressions sharing >= 70%
};

struct ContactImpression {
    std::string identity_id;
    std::string set_id;
    std::vector<Minutia2D> minutiae;
    std::vector<std::size_t> base_index;  // provenance of each minutia
};

// One synthetic identity: a base 2D minutiae set plus `impressions` views of
// it differing by rotation, translation, jitter, and dropout. Coordinates
// stay centered on the fingerprint center.
inline std::vector<ContactImpression> generate_contact_set(std::uint64_t seed,
                                                           const ContactParams& params,
                                                           const std::string& identity_id = {}) {
    if (params.minutiae_count < 20 || params.minutiae_count > 200)
        throw std::invalid_argument("generate_contact_set: minutiae count must be in [20, 200]");
    if (params.dropout < 0.0 || params.dropout > 0.15)
        throw std::invalid_argument("generate_contact_set: dropout must lie in [0, 0.15]");

    Rng rng(seed);
    const std::string id =
        identity_id.empty() ? "contact_" + std::to_string(seed) : identity_id;

    std::vector<Minutia2D> base;
    const std::size_t max_attempts = 4000 * params.minutiae_count;
    std::size_t attempts = 0;
    while (base.size() < params.minutiae_count) {
        if (++attempts > max_attempts)
            throw std::runtime_error("generate_contact_set: could not place minutiae");
        const double r = params.disk_radius * std::sqrt(rng.uniform());
        const double a = rng.uniform(0.0, kTwoPi);
        const Minutia2D m{r * std::cos(a), r * std::sin(a), rng.uniform(0.0, kTwoPi)};
        bool too_close = false;
        for (const auto& b : base) {
            if (std::hypot(b.x - m.x, b.y - m.y) < params.min_spacing) {
                too_close = true;
                break;
            }
        }
        if (!too_close) base.push_back(m);
    }

    std::vector<ContactImpression> out;
    for (std::size_t imp = 0; imp < params.impressions; ++imp) {
        const double rot = rng.uniform(-params.rotation_range, params.rotation_range);
        const std::array<double, 2> t{rng.uniform(-params.translation_range,
                                                  params.translation_range),
                                      rng.uniform(-params.translation_range,
                                                  params.translation_range)};
        auto placed = apply_pose_2d(base, rot, t, Matrix2DMode::ProperRotation);

        // Drop an exact floor(dropout * N) subset, uniformly without
        // replacement.
        std::vector<std::size_t> keep(placed.size());
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
        rng.shuffle(keep);
        const std::size_t n_drop =
            static_cast<std::size_t>(params.dropout * static_cast<double>(placed.size()));
        keep.resize(placed.size() - n_drop);
        std::sort(keep.begin(), keep.end());

        ContactImpression ci;
        ci.identity_id = id;
        ci.set_id = id + "_i" + std::to_string(imp);
        for (std::size_t idx : keep) {
            Minutia2D m = placed[idx];
            m.x += rng.normal(0.0, params.jitter);
            m.y += rng.normal(0.0, params.jitter);
            m.theta = normalize_angle(m.theta + rng.normal(0.0, params.theta_jitter));
            ci.minutiae.push_back(m);
            ci.base_index.push_back(idx);
        }
        out.push_back(std::move(ci));
    }
    return out;
}

}  // namespace g3dm
