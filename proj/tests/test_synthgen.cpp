#include <catch2/catch_amalgamated.hpp>

#include "g3dm/synthgen.hpp"

#include <algorithm>
#include <cmath>

using namespace g3dm;

namespace {

double median(std::vector<double> v) {
    REQUIRE(!v.empty());
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST_CASE("generate_finger is deterministic per seed") {
    FingerParams params;
    const SyntheticFinger a = generate_finger(31, params);
    const SyntheticFinger b = generate_finger(31, params);
    const SyntheticFinger c = generate_finger(32, params);
    REQUIRE(a.minutiae.size() == b.minutiae.size());
    for (std::size_t i = 0; i < a.minutiae.size(); ++i) {
        CHECK(a.minutiae[i].p.x == b.minutiae[i].p.x);
        CHECK(a.minutiae[i].o_unit.z == b.minutiae[i].o_unit.z);
    }
    CHECK(a.minutiae[0].p.x != c.minutiae[0].p.x);
}

TEST_CASE("generated minutiae sit on the surface with tangent orientations") {
    FingerParams params;
    const SyntheticFinger f = generate_finger(77, params);
    const double ax2 = params.surface.ax * params.surface.ax;
    const double ay2 = params.surface.ay * params.surface.ay;
    const double az2 = params.surface.az * params.surface.az;
    for (const auto& m : f.minutiae) {
        // On the ellipsoid within 1e-6.
        const double q =
            m.p.x * m.p.x / ax2 + m.p.y * m.p.y / ay2 + m.p.z * m.p.z / az2;
        CHECK(q == Catch::Approx(1.0).epsilon(1e-6));
        // Independent gradient computation (dot-product oracle).
        const Vec3 n{m.p.x / ax2, m.p.y / ay2, m.p.z / az2};
        const double gx = -n.x / n.z, gy = -n.y / n.z;
        const Vec3 printed_normal{gx, gy, 1.0};
        CHECK(std::abs(m.o_unit.dot(printed_normal)) / printed_normal.norm() < 1e-9);
        CHECK(m.o_unit.norm() == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("generate_finger returns exactly the requested count") {
    FingerParams params;
    params.minutiae_count = 60;
    CHECK(generate_finger(5, params).minutiae.size() == 60);
}

TEST_CASE("generate_finger validates the requested count") {
    FingerParams params;
    params.minutiae_count = 19;
    CHECK_THROWS_AS(generate_finger(1, params), std::invalid_argument);
    params.minutiae_count = 201;
    CHECK_THROWS_AS(generate_finger(1, params), std::invalid_argument);
}

TEST_CASE("observe at yaw zero with zero noise returns the canonical template") {
    FingerParams params;
    const SyntheticFinger f = generate_finger(41, params);
    ObservationSpec spec;
    spec.seed = 9;
    const Observation obs = observe(f, spec);
    REQUIRE(obs.tpl.minutiae.size() == f.minutiae.size());
    const double cx = 0.5 * spec.grid_width * spec.grid_scale;
    const double cy = 0.5 * spec.grid_height * spec.grid_scale;
    for (std::size_t i = 0; i < f.minutiae.size(); ++i) {
        CHECK(obs.tpl.minutiae[i].p.x == f.minutiae[i].p.x + cx);
        CHECK(obs.tpl.minutiae[i].p.y == f.minutiae[i].p.y + cy);
        CHECK(obs.tpl.minutiae[i].p.z == f.minutiae[i].p.z);
        CHECK(obs.tpl.minutiae[i].o.x == f.minutiae[i].o_unit.x * 25.0);
    }
}

TEST_CASE("visible count is non-increasing in yaw") {
    FingerParams params;
    const SyntheticFinger f = generate_finger(55, params);
    std::size_t prev = f.minutiae.size() + 1;
    for (double yaw : {0.0, 10.0, 20.0, 30.0, 40.0, 50.0}) {
        ObservationSpec spec;
        spec.yaw_deg = yaw;
        const Observation obs = observe(f, spec);
        CHECK(obs.tpl.minutiae.size() <= prev);
        prev = obs.tpl.minutiae.size();
    }
}

TEST_CASE("observe is deterministic per seed") {
    FingerParams params;
    const SyntheticFinger f = generate_finger(21, params);
    ObservationSpec spec;
    spec.yaw_deg = 25.0;
    spec.dropout = 0.1;
    spec.position_jitter = 2.0;
    spec.orientation_jitter = 0.05;
    spec.seed = 77;
    const Observation a = observe(f, spec);
    const Observation b = observe(f, spec);
    REQUIRE(a.tpl.minutiae.size() == b.tpl.minutiae.size());
    for (std::size_t i = 0; i < a.tpl.minutiae.size(); ++i) {
        CHECK(a.tpl.minutiae[i].p.x == b.tpl.minutiae[i].p.x);
        CHECK(a.tpl.minutiae[i].o.y == b.tpl.minutiae[i].o.y);
    }
}

TEST_CASE("lifting the rendered grids recovers the ground-truth 3D minutiae") {
    FingerParams params;
    const SyntheticFinger f = generate_finger(63, params);
    ObservationSpec spec;
    spec.yaw_deg = 25.0;
    const Observation obs = observe(f, spec);

    std::vector<double> pos_err, ang_err;
    for (const auto& m : obs.tpl.minutiae) {
        const Minutia2D m2{m.p.x, m.p.y, normalize_angle(std::atan2(m.o.y, m.o.x))};
        const Minutia3D lifted = lift_minutia(m2, obs.grad, obs.depth, 25.0);
        pos_err.push_back((lifted.p - m.p).norm());
        const double cosang =
            std::clamp(lifted.o.dot(m.o) / (lifted.o.norm() * m.o.norm()), -1.0, 1.0);
        ang_err.push_back(std::acos(cosang) * 180.0 / kPi);
    }
    CHECK(median(pos_err) <= 2.0);
    CHECK(median(ang_err) <= 5.0);
}

TEST_CASE("depth integration of a rendered observation matches the analytic depth") {
    FingerParams params;
    const SyntheticFinger f = generate_finger(64, params);
    ObservationSpec spec;
    spec.yaw_deg = 15.0;
    const Observation obs = observe(f, spec);
    const DepthGrid integrated = integrate_depth(obs.grad);

    double mean_true = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < obs.depth.z.size(); ++c) {
        if (!obs.depth.mask[c]) continue;
        mean_true += obs.depth.z[c];
        ++n;
    }
    mean_true /= static_cast<double>(n);
    std::vector<double> errs;
    for (std::size_t c = 0; c < obs.depth.z.size(); ++c) {
        if (!obs.depth.mask[c]) continue;
        errs.push_back(std::abs(integrated.z[c] - (obs.depth.z[c] - mean_true)));
    }
    CHECK(median(errs) <= 2.0);
}

TEST_CASE("observe validates yaw and dropout ranges") {
    const SyntheticFinger f = generate_finger(3, FingerParams{});
    ObservationSpec spec;
    spec.yaw_deg = 61.0;
    CHECK_THROWS_AS(observe(f, spec), std::invalid_argument);
    spec.yaw_deg = 0.0;
    spec.dropout = 0.6;
    CHECK_THROWS_AS(observe(f, spec), std::invalid_argument);
}

TEST_CASE("observe fails when fewer than four minutiae survive") {
    const SyntheticFinger f = generate_finger(4, FingerParams{});
    ObservationSpec spec;
    spec.mask_min_normal_z = 0.999;  // nearly empty mask culls everything
    CHECK_THROWS_AS(observe(f, spec), std::runtime_error);
}

TEST_CASE("generate_contact_set is deterministic per seed") {
    ContactParams params;
    const auto a = generate_contact_set(11, params);
    const auto b = generate_contact_set(11, params);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].minutiae.size() == b[i].minutiae.size());
        for (std::size_t j = 0; j < a[i].minutiae.size(); ++j) {
            CHECK(a[i].minutiae[j].x == b[i].minutiae[j].x);
            CHECK(a[i].minutiae[j].theta == b[i].minutiae[j].theta);
        }
    }
}

TEST_CASE("two impressions of one identity share at least 70 percent of minutiae") {
    ContactParams params;
    const auto imps = generate_contact_set(13, params);
    REQUIRE(imps.size() == params.impressions);
    for (std::size_t a = 0; a < imps.size(); ++a) {
        for (std::size_t b = a + 1; b < imps.size(); ++b) {
            std::size_t shared = 0;
            for (std::size_t ia : imps[a].base_index)
                if (std::find(imps[b].base_index.begin(), imps[b].base_index.end(), ia) !=
                    imps[b].base_index.end())
                    ++shared;
            CHECK(static_cast<double>(shared) / params.minutiae_count >= 0.7);
        }
    }
}

TEST_CASE("lifted contact impressions land on a single sphere") {
    ContactParams params;
    const auto imps = generate_contact_set(17, params);
    for (const auto& imp : imps) {
        const auto lifted = spherical_lift(imp.minutiae, kDefaultSphereC);
        double max_r2 = 0.0;
        for (const auto& m : imp.minutiae) max_r2 = std::max(max_r2, m.x * m.x + m.y * m.y);
        for (const auto& v : lifted)
            CHECK(v.p.dot(v.p) == Catch::Approx(max_r2 + kDefaultSphereC).epsilon(1e-6));
    }
}

TEST_CASE("generate_contact_set rejects dropout that breaks the overlap guarantee") {
    ContactParams params;
    params.dropout = 0.2;
    CHECK_THROWS_AS(generate_contact_set(1, params), std::invalid_argument);
}
