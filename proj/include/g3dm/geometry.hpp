#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace g3dm {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

// Default orientation scale for 3D minutia direction vectors.
inline constexpr double kDefaultAlpha = 25.0;
// Default spherical-lift constant, in pixels^2.
inline constexpr double kDefaultSphereC = 70000.0;

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        if (n == 0.0) throw std::domain_error("Vec3: cannot normalize zero vector");
        return {x / n, y / n, z / n};
    }
};

// 3x3 matrix, row-major.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }

    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

// Wraps an angle into [0, 2*pi).
inline double normalize_angle(double theta) {
    double t = std::fmod(theta, kTwoPi);
    if (t < 0.0) t += kTwoPi;
    if (t >= kTwoPi) t = 0.0;
    return t;
}

// A 2D minutia: image position plus full-angle direction in [0, 2*pi).
struct Minutia2D {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;
};

// Azimuth/polar pair with phi restricted to [0, pi] so sin(phi) >= 0 and the
// xy-projection of the direction stays parallel to (cos theta, sin theta).
struct SphericalOrientation {
    double theta = 0.0;
    double phi = 0.0;

    Vec3 direction() const {
        const double s = std::sin(phi);
        return {s * std::cos(theta), s * std::sin(theta), std::cos(phi)};
    }
};

// A 3D minutia: position and scaled orientation vector (norm == alpha).
struct Minutia3D {
    Vec3 p;
    Vec3 o;
};

struct Template3D {
    std::string template_id;
    std::string finger_id;
    std::string pose_label;
    double yaw_deg = 0.0;
    std::vector<Minutia3D> minutiae;
};

// Minimum minutiae for a template the embedder will accept.
inline constexpr std::size_t kMinMinutiae = 4;

namespace detail {

struct GridBase {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> mask;
    // Image pixels per grid cell; grids are typically rendered at reduced
    // resolution (the feature maps are 1/8 of the input image).
    double scale = 1.0;

    std::size_t idx(std::size_t i, std::size_t j) const { return j * width + i; }
    bool masked(std::size_t i, std::size_t j) const { return mask[idx(i, j)] != 0; }

    bool in_bounds_pixel(double x, double y) const {
        return x >= 0.0 && y >= 0.0 && x < width * scale && y < height * scale;
    }

    // Grid cell containing image pixel (x, y).
    std::pair<std::size_t, std::size_t> cell_of(double x, double y) const {
        auto clamp_idx = [](double v, std::size_t n) {
            long c = static_cast<long>(std::floor(v));
            if (c < 0) c = 0;
            if (c >= static_cast<long>(n)) c = static_cast<long>(n) - 1;
            return static_cast<std::size_t>(c);
        };
        return {clamp_idx(x / scale, width), clamp_idx(y / scale, height)};
    }

    std::size_t masked_count() const {
        std::size_t n = 0;
        for (auto v : mask) n += (v != 0);
        return n;
    }
};

// Bilinear interpolation over masked cell centers. Cell (i,j) holds the value
// at pixel ((i+0.5)*scale, (j+0.5)*scale); unmasked corners are dropped and
// the weights renormalized.
inline double masked_bilinear(const GridBase& g, const std::vector<double>& field, double x,
                              double y) {
    const double u = x / g.scale - 0.5;
    const double v = y / g.scale - 0.5;
    const double fu = std::floor(u);
    const double fv = std::floor(v);
    long i0 = static_cast<long>(fu);
    long j0 = static_cast<long>(fv);
    double du = u - fu;
    double dv = v - fv;
    // Clamp to the grid edge, collapsing the interpolation weight there.
    if (i0 < 0) { i0 = 0; du = 0.0; }
    if (j0 < 0) { j0 = 0; dv = 0.0; }
    if (i0 >= static_cast<long>(g.width) - 1) { i0 = static_cast<long>(g.width) - 1; du = 0.0; }
    if (j0 >= static_cast<long>(g.height) - 1) { j0 = static_cast<long>(g.height) - 1; dv = 0.0; }

    const std::size_t i1 = std::min<std::size_t>(static_cast<std::size_t>(i0) + 1, g.width - 1);
    const std::size_t j1 = std::min<std::size_t>(static_cast<std::size_t>(j0) + 1, g.height - 1);
    const std::size_t ii0 = static_cast<std::size_t>(i0);
    const std::size_t jj0 = static_cast<std::size_t>(j0);

    const std::array<std::pair<std::size_t, double>, 4> corners = {{
        {g.idx(ii0, jj0), (1.0 - du) * (1.0 - dv)},
        {g.idx(i1, jj0), du * (1.0 - dv)},
        {g.idx(ii0, j1), (1.0 - du) * dv},
        {g.idx(i1, j1), du * dv},
    }};

    double wsum = 0.0, acc = 0.0;
    for (const auto& [idx, w] : corners) {
        if (w > 0.0 && g.mask[idx]) {
            wsum += w;
            acc += w * field[idx];
        }
    }
    if (wsum <= 0.0) throw std::runtime_error("masked_bilinear: no masked support at sample point");
    return acc / wsum;
}

}  // namespace detail

// Per-cell surface-depth gradients (dz/dx, dz/dy) over a masked grid.
struct GradientGrid : detail::GridBase {
    std::vector<double> gx;
    std::vector<double> gy;

    static GradientGrid make(std::size_t width, std::size_t height, double scale = 1.0) {
        GradientGrid g;
        g.width = width;
        g.height = height;
        g.scale = scale;
        g.gx.assign(width * height, 0.0);
        g.gy.assign(width * height, 0.0);
        g.mask.assign(width * height, 0);
        return g;
    }
};

// Per-cell depth in pixels; defined only up to an additive constant when it
// comes out of integrate_depth.
struct DepthGrid : detail::GridBase {
    std::vector<double> z;

    static DepthGrid make(std::size_t width, std::size_t height, double scale = 1.0) {
        DepthGrid d;
        d.width = width;
        d.height = height;
        d.scale = scale;
        d.z.assign(width * height, 0.0);
        d.mask.assign(width * height, 0);
        return d;
    }
};

// Rigid pose: translation plus Euler angles feeding rotation_from_euler.
struct Pose {
    Vec3 t;
    Vec3 euler;  // (theta_t, psi_t, phi_t), applied as R = Rz * Ry * Rx as printed
};

// Solves for the 3D minutia orientation (theta, phi) such that the direction
// (sin phi cos theta, sin phi sin theta, cos phi) is perpendicular to the
// surface normal (g_x, g_y, 1), with phi in [0, pi] so the xy-projection
// keeps the 2D direction. Closed form: tan phi = -1 / (g_x cos t + g_y sin t).
inline SphericalOrientation solve_3d_orientation(double theta2d, double gx, double gy) {
    if (!std::isfinite(theta2d) || !std::isfinite(gx) || !std::isfinite(gy))
        throw std::invalid_argument("solve_3d_orientation: non-finite input");
    const double a = gx * std::cos(theta2d) + gy * std::sin(theta2d);
    // atan2(1, -a) lands in (0, pi): sin(phi) > 0 always, and a == 0 gives
    // exactly pi/2.
    return {theta2d, std::atan2(1.0, -a)};
}

// Scales a spherical direction into the minutia orientation vector; the
// result has Euclidean norm alpha.
inline Vec3 scale_orientation(const SphericalOrientation& s, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("scale_orientation: alpha must be positive");
    return s.direction() * alpha;
}

// Lifts a 2D minutia onto the reconstructed surface: position gains the
// bilinearly sampled depth, orientation is re-solved against the sampled
// gradient and scaled.
inline Minutia3D lift_minutia(const Minutia2D& m, const GradientGrid& grad, const DepthGrid& depth,
                              double alpha = kDefaultAlpha) {
    auto describe = [&](const detail::GridBase& g, const char* name) {
        std::ostringstream os;
        const auto [ci, cj] = g.cell_of(m.x, m.y);
        os << "lift_minutia: minutia at (" << m.x << ", " << m.y << ") maps to cell (" << ci
           << ", " << cj << ") outside the " << name << " mask";
        return os.str();
    };
    if (!grad.in_bounds_pixel(m.x, m.y)) throw std::invalid_argument(describe(grad, "gradient"));
    if (!depth.in_bounds_pixel(m.x, m.y)) throw std::invalid_argument(describe(depth, "depth"));
    {
        const auto [ci, cj] = grad.cell_of(m.x, m.y);
        if (!grad.masked(ci, cj)) throw std::invalid_argument(describe(grad, "gradient"));
    }
    {
        const auto [ci, cj] = depth.cell_of(m.x, m.y);
        if (!depth.masked(ci, cj)) throw std::invalid_argument(describe(depth, "depth"));
    }

    const double gx = detail::masked_bilinear(grad, grad.gx, m.x, m.y);
    const double gy = detail::masked_bilinear(grad, grad.gy, m.x, m.y);
    const double z = detail::masked_bilinear(depth, depth.z, m.x, m.y);

    Minutia3D out;
    out.p = {m.x, m.y, z};
    out.o = scale_orientation(solve_3d_orientation(m.theta, gx, gy), alpha);
    return out;
}

namespace detail {

inline void require_connected_mask(const GridBase& g, const char* op) {
    const std::size_t total = g.masked_count();
    if (total == 0) throw std::invalid_argument(std::string(op) + ": empty mask");
    // BFS over 4-neighbors from the first masked cell.
    std::vector<std::uint8_t> seen(g.width * g.height, 0);
    std::size_t start = 0;
    while (!g.mask[start]) ++start;
    std::deque<std::size_t> queue{start};
    seen[start] = 1;
    std::size_t reached = 0;
    while (!queue.empty()) {
        const std::size_t c = queue.front();
        queue.pop_front();
        ++reached;
        const std::size_t i = c % g.width, j = c / g.width;
        const std::array<std::pair<long, long>, 4> nbrs = {
            {{(long)i - 1, (long)j}, {(long)i + 1, (long)j}, {(long)i, (long)j - 1}, {(long)i, (long)j + 1}}};
        for (auto [ni, nj] : nbrs) {
            if (ni < 0 || nj < 0 || ni >= (long)g.width || nj >= (long)g.height) continue;
            const std::size_t n = g.idx((std::size_t)ni, (std::size_t)nj);
            if (g.mask[n] && !seen[n]) {
                seen[n] = 1;
                queue.push_back(n);
            }
        }
    }
    if (reached != total)
        throw std::invalid_argument(std::string(op) + ": mask is not a single 4-connected component");
}

}  // namespace detail

// Least-squares integration of a masked gradient field: finds z minimizing
// sum over neighbor pairs of (z_b - z_a - midpoint gradient * scale)^2, free
// boundary on the mask edge, gauge fixed by zero mean. Solved with
// Jacobi-preconditioned conjugate gradients on the normal equations.
inline DepthGrid integrate_depth(const GradientGrid& grid) {
    detail::require_connected_mask(grid, "integrate_depth");
    for (std::size_t c = 0; c < grid.mask.size(); ++c) {
        if (grid.mask[c] && (!std::isfinite(grid.gx[c]) || !std::isfinite(grid.gy[c])))
            throw std::invalid_argument("integrate_depth: non-finite gradient on masked cell");
    }

    // Compact masked cells.
    std::vector<std::size_t> cell_of_node;
    std::vector<long> node_of_cell(grid.width * grid.height, -1);
    for (std::size_t c = 0; c < grid.mask.size(); ++c) {
        if (grid.mask[c]) {
            node_of_cell[c] = static_cast<long>(cell_of_node.size());
            cell_of_node.push_back(c);
        }
    }
    const std::size_t n = cell_of_node.size();

    struct Edge {
        std::size_t a, b;
        double target;
    };
    std::vector<Edge> edges;
    edges.reserve(2 * n);
    for (std::size_t j = 0; j < grid.height; ++j) {
        for (std::size_t i = 0; i < grid.width; ++i) {
            const std::size_t c = grid.idx(i, j);
            if (!grid.mask[c]) continue;
            if (i + 1 < grid.width && grid.mask[c + 1]) {
                edges.push_back({static_cast<std::size_t>(node_of_cell[c]),
                                 static_cast<std::size_t>(node_of_cell[c + 1]),
                                 0.5 * (grid.gx[c] + grid.gx[c + 1]) * grid.scale});
            }
            if (j + 1 < grid.height && grid.mask[c + grid.width]) {
                edges.push_back({static_cast<std::size_t>(node_of_cell[c]),
                                 static_cast<std::size_t>(node_of_cell[c + grid.width]),
                                 0.5 * (grid.gy[c] + grid.gy[c + grid.width]) * grid.scale});
            }
        }
    }

    // Normal equations L z = b with L the graph Laplacian.
    std::vector<double> b(n, 0.0), degree(n, 0.0);
    for (const Edge& e : edges) {
        b[e.b] += e.target;
        b[e.a] -= e.target;
        degree[e.a] += 1.0;
        degree[e.b] += 1.0;
    }

    auto apply_L = [&](const std::vector<double>& x, std::vector<double>& out) {
        for (std::size_t k = 0; k < n; ++k) out[k] = degree[k] * x[k];
        for (const Edge& e : edges) {
            out[e.a] -= x[e.b];
            out[e.b] -= x[e.a];
        }
    };

    std::vector<double> z(n, 0.0), r(b), p(n), ap(n), mr(n);
    auto precond = [&](const std::vector<double>& v, std::vector<double>& out) {
        for (std::size_t k = 0; k < n; ++k) out[k] = degree[k] > 0.0 ? v[k] / degree[k] : v[k];
    };
    precond(r, mr);
    p = mr;
    double rz = 0.0, bnorm2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        rz += r[k] * mr[k];
        bnorm2 += b[k] * b[k];
    }
    const double tol2 = bnorm2 * 1e-26;
    if (bnorm2 > 0.0) {
        const std::size_t max_iter = 4 * n + 200;
        for (std::size_t it = 0; it < max_iter; ++it) {
            apply_L(p, ap);
            double pap = 0.0;
            for (std::size_t k = 0; k < n; ++k) pap += p[k] * ap[k];
            if (pap <= 0.0) break;
            const double alpha = rz / pap;
            double rr = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                z[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
                rr += r[k] * r[k];
            }
            if (rr <= tol2) break;
            precond(r, mr);
            double rz_new = 0.0;
            for (std::size_t k = 0; k < n; ++k) rz_new += r[k] * mr[k];
            const double beta = rz_new / rz;
            rz = rz_new;
            for (std::size_t k = 0; k < n; ++k) p[k] = mr[k] + beta * p[k];
        }
    }

    // Zero-mean gauge.
    double mean = 0.0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(n);

    DepthGrid out = DepthGrid::make(grid.width, grid.height, grid.scale);
    out.mask = grid.mask;
    for (std::size_t k = 0; k < n; ++k) out.z[cell_of_node[k]] = z[k] - mean;
    return out;
}

// Lifts centered 2D minutiae onto a sphere of radius^2 =
// max_i(x_i^2 + y_i^2) + c, with orientation from the analytic sphere
// gradient (-x/z, -y/z).
inline std::vector<Minutia3D> spherical_lift(const std::vector<Minutia2D>& ms, double c,
                                             double alpha = kDefaultAlpha) {
    if (ms.empty()) throw std::invalid_argument("spherical_lift: empty minutiae list");
    if (!(c > 0.0)) throw std::invalid_argument("spherical_lift: c must be positive");
    double max_r2 = 0.0;
    for (const auto& m : ms) max_r2 = std::max(max_r2, m.x * m.x + m.y * m.y);

    std::vector<Minutia3D> out;
    out.reserve(ms.size());
    for (const auto& m : ms) {
        const double z = std::sqrt(max_r2 + c - m.x * m.x - m.y * m.y);
        Minutia3D v;
        v.p = {m.x, m.y, z};
        v.o = scale_orientation(solve_3d_orientation(m.theta, -m.x / z, -m.y / z), alpha);
        out.push_back(v);
    }
    return out;
}

// Rotation from Euler angles with the three factor matrices exactly as
// printed (note: "R_x" as printed rotates in the xy-plane and "R_z" about x;
// the printed naming is kept, not corrected).
inline Mat3 rotation_from_euler(const Vec3& e) {
    if (!std::isfinite(e.x) || !std::isfinite(e.y) || !std::isfinite(e.z))
        throw std::invalid_argument("rotation_from_euler: non-finite angle");
    const double ct = std::cos(e.x), st = std::sin(e.x);
    const double cp = std::cos(e.y), sp = std::sin(e.y);
    const double cf = std::cos(e.z), sf = std::sin(e.z);
    Mat3 rx, ry, rz;
    rx.m = {ct, -st, 0, st, ct, 0, 0, 0, 1};
    ry.m = {cp, 0, -sp, 0, 1, 0, sp, 0, cp};
    rz.m = {1, 0, 0, 0, cf, -sf, 0, sf, cf};
    return rz * (ry * rx);
}

// As printed, the pose-correction translation is added to orientation
// vectors as well. rotate-only applies the physically rigid variant.
enum class OrientationMode { AsPrinted, RotateOnly };

inline Template3D apply_pose(const Template3D& tpl, const Pose& pose,
                             OrientationMode mode = OrientationMode::AsPrinted) {
    const Mat3 R = rotation_from_euler(pose.euler);
    Template3D out = tpl;
    for (auto& m : out.minutiae) {
        m.p = R * m.p + pose.t;
        m.o = (mode == OrientationMode::AsPrinted) ? R * m.o + pose.t : R * m.o;
    }
    return out;
}

// The printed 2D correction matrix has determinant -1 (a reflection);
// proper-rotation substitutes the standard rotation matrix.
enum class Matrix2DMode { AsPrinted, ProperRotation };

inline std::vector<Minutia2D> apply_pose_2d(const std::vector<Minutia2D>& ms, double theta,
                                            std::array<double, 2> t,
                                            Matrix2DMode mode = Matrix2DMode::ProperRotation) {
    if (ms.empty()) throw std::invalid_argument("apply_pose_2d: empty minutiae list");
    const double c = std::cos(theta), s = std::sin(theta);
    double m00, m01, m10, m11;
    if (mode == Matrix2DMode::AsPrinted) {
        m00 = -c; m01 = s;
        m10 = s;  m11 = c;
    } else {
        m00 = c; m01 = -s;
        m10 = s; m11 = c;
    }
    std::vector<Minutia2D> out;
    out.reserve(ms.size());
    for (const auto& m : ms) {
        Minutia2D r;
        r.x = m00 * m.x + m01 * m.y + t[0];
        r.y = m10 * m.x + m11 * m.y + t[1];
        r.theta = normalize_angle(m.theta + theta);
        out.push_back(r);
    }
    return out;
}

}  // namespace g3dm
