#include "magtrack/synth.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

using namespace magtrack;

namespace {

std::set<std::pair<long, long>> position_keys(const SensorArray& array) {
    std::set<std::pair<long, long>> keys;
    for (const Vec3& p : array.positions) {
        keys.insert({std::lround(p.x() * 1e6), std::lround(p.y() * 1e6)});
    }
    return keys;
}

} // namespace

TEST_SUITE("synth") {

    TEST_CASE("grid geometry") {
        const auto array = SensorArray::grid_4x4();
        REQUIRE(array.count() == 16);
        Vec3 sum = Vec3::Zero();
        for (const Vec3& p : array.positions) {
            CHECK(p.z() == 0.0);
            sum += p;
        }
        CHECK(sum.norm() < 1e-15);
        // Nearest-neighbor spacing is 52 mm.
        CHECK((array.positions[0] - array.positions[1]).norm() == doctest::Approx(0.052));
        // Extreme corner at (+-78, +-78) mm.
        CHECK(array.positions[0].x() == doctest::Approx(-0.078));
        CHECK(array.positions[15].y() == doctest::Approx(0.078));
        CHECK_NOTHROW(array.validate());
        CHECK_THROWS_AS(SensorArray::grid_4x4(0.0), config_error);
    }

    TEST_CASE("subsets are nested and symmetric") {
        const auto array = SensorArray::grid_4x4();
        const auto s4 = array.subset(4);
        const auto s8 = array.subset(8);
        const auto s12 = array.subset(12);
        const auto s16 = array.subset(16);
        CHECK(s4.count() == 4);
        CHECK(s8.count() == 8);
        CHECK(s12.count() == 12);
        CHECK(s16.count() == 16);

        const auto k4 = position_keys(s4);
        const auto k8 = position_keys(s8);
        const auto k12 = position_keys(s12);
        const auto k16 = position_keys(s16);
        CHECK(std::includes(k8.begin(), k8.end(), k4.begin(), k4.end()));
        CHECK(std::includes(k12.begin(), k12.end(), k8.begin(), k8.end()));
        CHECK(std::includes(k16.begin(), k16.end(), k12.begin(), k12.end()));
        CHECK(k16 == position_keys(array));

        // Each tier maps onto itself under a quarter turn about the center.
        for (const auto* keys : {&k4, &k8, &k12}) {
            for (const auto& [x, y] : *keys) {
                CHECK(keys->count({y, -x}) == 1);
            }
        }

        // The 4-subset is the corners.
        CHECK(k4.count({-78000, -78000}) == 1);
        CHECK(k4.count({78000, 78000}) == 1);

        CHECK_THROWS_AS(array.subset(5), config_error);
        CHECK_THROWS_AS(s8.subset(4), config_error);
    }

    TEST_CASE("duplicate sensors fail validation") {
        SensorArray array;
        array.positions = {Vec3(0, 0, 0), Vec3(0, 0, 0)};
        CHECK_THROWS_AS(array.validate(), config_error);
        array.positions.clear();
        CHECK_THROWS_AS(array.validate(), config_error);
    }

    TEST_CASE("axial example value") {
        AnalyticSource2D source(MagnetSpec::sphere(1.6875));
        RngStream rng(401);
        Pose pose;
        pose.p = Vec3(0, 0, 0.1);
        pose.o = Vec3::UnitZ();
        const Vec3 b = synthesize_reading(pose, Vec3::Zero(), source, rng);
        CHECK(b.x() == doctest::Approx(0.0).epsilon(1e-18));
        CHECK(b.y() == doctest::Approx(0.0).epsilon(1e-18));
        CHECK(b.z() == doctest::Approx(3.375e-4).epsilon(1e-12));
    }

    TEST_CASE("sphere transform equals the 3D dipole oracle") {
        AnalyticSource2D source(MagnetSpec::sphere(1.6875));
        const auto array = SensorArray::grid_4x4();
        RngStream rng(402);
        Box volume;
        double worst = 0.0;
        for (int i = 0; i < 2000; ++i) {
            Pose pose;
            pose.p = rng.in_box(volume);
            pose.o = rng.unit_vector();
            const Vec3& sensor = array.positions[static_cast<std::size_t>(i % 16)];
            if ((pose.p - sensor).norm() < 1e-3) {
                continue;
            }
            const Vec3 ours = synthesize_reading(pose, sensor, source, rng);
            const Vec3 ref = dipole_field(1.6875 * pose.o, pose.p - sensor);
            worst = std::max(worst, (ours - ref).norm() / ref.norm());
        }
        CHECK(worst < 1e-10);
    }

    TEST_CASE("flipping the orientation negates the reading") {
        AnalyticSource2D source(MagnetSpec::sphere(1.6875));
        RngStream rng(403);
        Pose pose;
        pose.p = Vec3(0.03, -0.05, 0.11);
        pose.o = Vec3(0.48, -0.6, 0.64).normalized();
        const Vec3 sensor(0.026, 0.026, 0.0);
        const Vec3 b1 = synthesize_reading(pose, sensor, source, rng);
        pose.o = -pose.o;
        const Vec3 b2 = synthesize_reading(pose, sensor, source, rng);
        CHECK((b1 + b2).norm() < 1e-12 * b1.norm());
    }

    TEST_CASE("axis-aligned offsets are rng independent") {
        AnalyticSource2D source(MagnetSpec::sphere(1.6875));
        Pose pose;
        pose.p = Vec3(0.026, 0.026, 0.08);
        pose.o = Vec3::UnitZ();
        const Vec3 sensor(0.026, 0.026, 0.0);
        RngStream rng_a(1), rng_b(999);
        const Vec3 b_a = synthesize_reading(pose, sensor, source, rng_a);
        const Vec3 b_b = synthesize_reading(pose, sensor, source, rng_b);
        CHECK((b_a - b_b).norm() == 0.0);
        const Vec3 ref = dipole_field(1.6875 * pose.o, pose.p - sensor);
        CHECK((b_a - ref).norm() < 1e-12 * ref.norm());
        // The degenerate branch must have consumed randomness.
        RngStream fresh_a(1);
        CHECK(rng_a.next_u64() != fresh_a.next_u64());
    }

    TEST_CASE("array readings concatenate in sensor order") {
        AnalyticSource2D source(MagnetSpec::sphere(1.6875));
        const auto array = SensorArray::grid_4x4().subset(4);
        RngStream rng(404);
        Pose pose;
        pose.p = Vec3(0.01, 0.02, 0.09);
        pose.o = Vec3(1, 2, 3).normalized();
        const VecX all = synthesize_array(pose, array, source, rng);
        REQUIRE(all.size() == 12);
        for (int k = 0; k < 4; ++k) {
            RngStream rng_k(500 + k);
            const Vec3 one = synthesize_reading(pose, array.positions[static_cast<std::size_t>(k)],
                                                source, rng_k);
            CHECK((all.segment<3>(3 * k) - one).norm() < 1e-18);
        }
    }

    TEST_CASE("cylinder synthesis approaches its equivalent dipole far away") {
        const auto spec = MagnetSpec::cylinder(0.005, 0.020, 1.05e6);
        AnalyticSource2D source(spec);
        const Vec3 m_eq_dir = Vec3(0, 0, equivalent_dipole_moment(spec));
        RngStream rng(405);
        for (int i = 0; i < 50; ++i) {
            Pose pose;
            pose.p = 0.45 * rng.unit_vector();
            pose.o = Vec3::UnitZ();
            const Vec3 ours = synthesize_reading(pose, Vec3::Zero(), source, rng);
            const Vec3 ref = dipole_field(m_eq_dir, pose.p);
            CHECK((ours - ref).norm() / ref.norm() < 0.01);
        }
    }

    TEST_CASE("map-backed synthesis tracks the analytic source") {
        const auto spec = MagnetSpec::cylinder(0.005, 0.020, 1.05e6);
        const auto map = build_field_map(spec, FieldGridConfig::from_pitch(0.45, 0.45, 0.002));
        AnalyticSource2D analytic(spec);
        MapSource2D mapped(map);
        RngStream rng(406);
        Box volume;
        for (int i = 0; i < 100; ++i) {
            Pose pose;
            pose.p = rng.in_box(volume);
            pose.p.z() = rng.uniform(0.05, 0.15);
            pose.o = rng.unit_vector();
            const Vec3 sensor(rng.uniform(-0.078, 0.078), rng.uniform(-0.078, 0.078), 0.0);
            RngStream rng_a(600 + i), rng_b(600 + i);
            const Vec3 a = synthesize_reading(pose, sensor, analytic, rng_a);
            const Vec3 b = synthesize_reading(pose, sensor, mapped, rng_b);
            CHECK((a - b).norm() / a.norm() < 0.01);
        }
    }

    TEST_CASE("degenerate inputs are rejected") {
        AnalyticSource2D source(MagnetSpec::sphere(1.0));
        RngStream rng(407);
        Pose pose;
        pose.p = Vec3(0, 0, 1e-8);
        CHECK_THROWS_AS(synthesize_reading(pose, Vec3::Zero(), source, rng), std::domain_error);
        pose.p = Vec3(0, 0, 0.1);
        pose.o = Vec3::Zero();
        CHECK_THROWS_AS(synthesize_reading(pose, Vec3::Zero(), source, rng),
                        std::invalid_argument);
    }
}
