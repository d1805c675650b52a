#include "magtrack/traj_sim.hpp"

#include "doctest.h"
#include "magtrack/field_models.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace magtrack;

namespace {

const MagnetSpec kSphere = MagnetSpec::sphere(1.6875);

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Kolmogorov-Smirnov distance between a sample and the standard normal.
double ks_statistic(std::vector<double> sample) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double cdf = normal_cdf(sample[i]);
        d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - cdf));
    }
    return d;
}

Trajectory two_point_line() {
    // Straight segment traversed in four steps, axis-aligned rotation.
    Trajectory traj;
    traj.t = {0.0, 0.1, 0.2, 0.3, 0.4};
    for (int i = 0; i <= 4; ++i) {
        Pose pose;
        const double s = i / 4.0;
        pose.p = Vec3(0.01 + 0.04 * s, -0.02, 0.06);
        pose.o = slerp_dir(Vec3::UnitZ(), Vec3::UnitX(), s);
        traj.poses.push_back(pose);
    }
    traj.t.resize(5);
    return traj;
}

} // namespace

TEST_SUITE("traj_sim") {

    TEST_CASE("largest-remainder allocation") {
        CHECK(allocate_largest_remainder({1.0, 2.0, 3.0}, 6) == std::vector<int>{1, 2, 3});
        CHECK(allocate_largest_remainder({1.0, 1.0, 1.0}, 2) == std::vector<int>{1, 1, 0});
        CHECK(allocate_largest_remainder({0.0, 5.0}, 3) == std::vector<int>{0, 3});
        CHECK(allocate_largest_remainder({0.0, 0.0}, 3) == std::vector<int>{2, 1});
        CHECK(allocate_largest_remainder({2.0, 7.0}, 0) == std::vector<int>{0, 0});

        RngStream rng(6);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> weights(static_cast<std::size_t>(rng.uniform(1.0, 12.0)));
            for (double& w : weights) {
                w = rng.uniform(0.0, 10.0);
            }
            const int units = static_cast<int>(rng.uniform(0.0, 40.0));
            const auto alloc = allocate_largest_remainder(weights, units);
            int total = 0;
            for (int k : alloc) {
                CHECK(k >= 0);
                total += k;
            }
            CHECK(total == units);
            // Larger weights never receive fewer units.
            for (std::size_t i = 0; i < weights.size(); ++i) {
                for (std::size_t j = 0; j < weights.size(); ++j) {
                    if (weights[i] > weights[j]) {
                        CHECK(alloc[i] >= alloc[j]);
                    }
                }
            }
        }

        CHECK_THROWS_AS(allocate_largest_remainder({}, 1), std::invalid_argument);
        CHECK_THROWS_AS(allocate_largest_remainder({1.0}, -1), std::invalid_argument);
        CHECK_THROWS_AS(allocate_largest_remainder({-1.0}, 1), std::invalid_argument);
    }

    TEST_CASE("generated trajectories stay inside the volume") {
        TrajConfig cfg;
        cfg.n_total = 500;
        cfg.n_sample = 17;
        const Box volume{};
        RngStream rng(77);
        const Trajectory traj = generate_trajectory(cfg, volume, rng);

        REQUIRE(traj.size() == 500);
        REQUIRE(traj.t.size() == 500);
        for (int i = 0; i < traj.size(); ++i) {
            CHECK(traj.t[static_cast<std::size_t>(i)] ==
                  doctest::Approx(i / cfg.frequency).epsilon(1e-12));
            const Pose& pose = traj.poses[static_cast<std::size_t>(i)];
            CHECK(volume.contains(pose.p));
            CHECK(is_unit(pose.o));
        }

        RngStream rng2(77);
        const Trajectory again = generate_trajectory(cfg, volume, rng2);
        for (int i = 0; i < traj.size(); ++i) {
            CHECK((traj.poses[static_cast<std::size_t>(i)].p -
                   again.poses[static_cast<std::size_t>(i)].p)
                      .norm() == 0.0);
        }

        // Minimal case: every segment contributes exactly one step.
        cfg.n_total = 17;
        RngStream rng3(1);
        CHECK(generate_trajectory(cfg, volume, rng3).size() == 17);
    }

    TEST_CASE("trajectory configuration is validated") {
        const Box volume{};
        RngStream rng(1);
        TrajConfig cfg;
        cfg.n_sample = 1;
        CHECK_THROWS_AS(generate_trajectory(cfg, volume, rng), config_error);
        cfg = TrajConfig{};
        cfg.n_total = 10;
        cfg.n_sample = 20;
        CHECK_THROWS_AS(generate_trajectory(cfg, volume, rng), config_error);
        cfg = TrajConfig{};
        cfg.frequency = 0.0;
        CHECK_THROWS_AS(generate_trajectory(cfg, volume, rng), config_error);
        cfg = TrajConfig{};
        Box invalid;
        invalid.lo = Vec3(1.0, 0.0, 0.0);
        invalid.hi = Vec3(0.0, 1.0, 1.0);
        CHECK_THROWS_AS(generate_trajectory(cfg, invalid, rng), config_error);
    }

    TEST_CASE("default trajectory step sizes are in the expected band") {
        TrajConfig cfg;
        const Box volume{};
        RngStream rng(2026);
        const Trajectory traj = generate_trajectory(cfg, volume, rng);
        REQUIRE(traj.size() == cfg.n_total);

        double disp = 0.0, rot = 0.0;
        for (int i = 1; i < traj.size(); ++i) {
            const Pose& a = traj.poses[static_cast<std::size_t>(i) - 1];
            const Pose& b = traj.poses[static_cast<std::size_t>(i)];
            disp += (b.p - a.p).norm();
            rot += angle_between_deg(a.o, b.o);
        }
        disp /= traj.size() - 1;
        rot /= traj.size() - 1;
        // Loose band around the intended operating point of roughly
        // 2.5 mm and 1.4 degrees per step.
        CHECK(disp > 1.5e-3);
        CHECK(disp < 3.5e-3);
        CHECK(rot > 0.8);
        CHECK(rot < 2.2);
    }

    TEST_CASE("spherical interpolation sweeps proportional angles") {
        RngStream rng(15);
        for (int trial = 0; trial < 40; ++trial) {
            const Vec3 a = rng.unit_vector();
            const Vec3 b = rng.unit_vector();
            const double full = angle_between_deg(a, b);
            for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
                const Vec3 mid = slerp_dir(a, b, s);
                CHECK(mid.norm() == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(angle_between_deg(a, mid) == doctest::Approx(s * full).epsilon(1e-7));
            }
            CHECK((slerp_dir(a, b, 0.0) - a).norm() < 1e-12);
            CHECK((slerp_dir(a, b, 1.0) - b).norm() < 1e-9);
        }

        // Identical and antipodal directions.
        const Vec3 z = Vec3::UnitZ();
        CHECK((slerp_dir(z, z, 0.7) - z).norm() < 1e-12);
        CHECK(angle_between_deg(z, slerp_dir(z, -z, 0.5)) == doctest::Approx(90.0).epsilon(1e-9));
        CHECK(angle_between_deg(z, slerp_dir(z, -z, 1.0)) ==
              doctest::Approx(180.0).epsilon(1e-9));
    }

    TEST_CASE("pose interpolation is exact at samples and clamps outside") {
        const Trajectory traj = two_point_line();
        for (std::size_t i = 0; i < traj.poses.size(); ++i) {
            const Pose pose = interpolate_pose(traj, traj.t[i]);
            CHECK((pose.p - traj.poses[i].p).norm() < 1e-15);
            CHECK((pose.o - traj.poses[i].o).norm() < 1e-12);
        }
        // Quarter of the way into the second interval.
        const Pose mid = interpolate_pose(traj, 0.125);
        const Pose& a = traj.poses[1];
        const Pose& b = traj.poses[2];
        CHECK((mid.p - (a.p + 0.25 * (b.p - a.p))).norm() < 1e-15);
        CHECK((mid.o - slerp_dir(a.o, b.o, 0.25)).norm() < 1e-12);

        CHECK((interpolate_pose(traj, -5.0).p - traj.poses.front().p).norm() == 0.0);
        CHECK((interpolate_pose(traj, 99.0).p - traj.poses.back().p).norm() == 0.0);

        Trajectory empty;
        CHECK_THROWS_AS(interpolate_pose(empty, 0.0), std::invalid_argument);
    }

    TEST_CASE("noise model statistics") {
        NoiseConfig cfg;
        NoiseModel model(cfg, 5);
        model.set_drift_offset(Vec3::Zero());

        const VecX clean = VecX::Zero(48);
        std::vector<double> xy, z;
        for (int step = 0; step < 4000; ++step) {
            const VecX noisy = model.apply(clean);
            for (int k = 0; k < 16; ++k) {
                xy.push_back(noisy[3 * k + 0]);
                xy.push_back(noisy[3 * k + 1]);
                z.push_back(noisy[3 * k + 2]);
            }
        }
        auto sample_std = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) {
                mean += x;
            }
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) {
                var += (x - mean) * (x - mean);
            }
            return std::sqrt(var / static_cast<double>(v.size() - 1));
        };
        CHECK(sample_std(xy) == doctest::Approx(6.0e-7).epsilon(0.02));
        CHECK(sample_std(z) == doctest::Approx(9.66e-7).epsilon(0.02));

        // Normality of the white component at the 1% level.
        std::vector<double> standardized(xy.begin(), xy.begin() + 2000);
        for (double& v : standardized) {
            v /= 6.0e-7;
        }
        const double d = ks_statistic(standardized);
        CHECK(d * std::sqrt(2000.0) < 1.628);
    }

    TEST_CASE("drift offsets are shared, pinned, and periodically redrawn") {
        NoiseConfig cfg;
        cfg.sigma_xy = 0.0;
        cfg.sigma_z = 0.0;
        cfg.drift_period = 5;

        // Pinned drift passes through exactly, identically for all sensors.
        NoiseModel pinned(cfg, 9);
        const Vec3 offset(1e-6, -2e-6, 3e-6);
        pinned.set_drift_offset(offset);
        const VecX clean = VecX::Zero(12);
        for (int step = 0; step < 12; ++step) {
            const VecX noisy = pinned.apply(clean);
            for (int k = 0; k < 4; ++k) {
                CHECK(noisy[3 * k + 0] == offset.x());
                CHECK(noisy[3 * k + 1] == offset.y());
                CHECK(noisy[3 * k + 2] == offset.z());
            }
        }

        // Unpinned: constant within a period, redrawn at the boundary.
        NoiseModel drifting(cfg, 9);
        std::vector<double> x_offsets;
        for (int step = 0; step < 15; ++step) {
            x_offsets.push_back(drifting.apply(clean)[0]);
        }
        for (int w = 0; w < 3; ++w) {
            for (int i = 1; i < 5; ++i) {
                CHECK(x_offsets[static_cast<std::size_t>(5 * w + i)] ==
                      x_offsets[static_cast<std::size_t>(5 * w)]);
            }
        }
        CHECK(x_offsets[0] != x_offsets[5]);
        CHECK(x_offsets[5] != x_offsets[10]);

        NoiseConfig bad = cfg;
        bad.sigma_xy = -1.0;
        CHECK_THROWS_AS(NoiseModel(bad, 1), config_error);
        bad = cfg;
        bad.drift_period = 0;
        CHECK_THROWS_AS(NoiseModel(bad, 1), config_error);

        VecX wrong = VecX::Zero(7);
        CHECK_THROWS_AS(pinned.apply(wrong), std::invalid_argument);
    }

    TEST_CASE("asynchronous readings follow the scan schedule") {
        const SensorArray array = SensorArray::grid_4x4();
        const AnalyticSource2D source(kSphere);
        const Trajectory traj = two_point_line();
        const double t_reading = 0.05;

        RngStream rng(3);
        const auto frames = simulate_async_readings(traj, array, source, t_reading, rng);
        REQUIRE(frames.size() == traj.poses.size());
        REQUIRE(frames.front().size() == 48);

        // First sensor reads the frame pose, last sensor the pose advanced by
        // the full scan duration. Off-axis geometry keeps the synthesis
        // deterministic, so a fresh rng reproduces it.
        RngStream probe(999);
        for (std::size_t i = 0; i < frames.size(); ++i) {
            const Vec3 first_expected = synthesize_reading(
                interpolate_pose(traj, traj.t[i]), array.positions[0], source, probe);
            CHECK((frames[i].head<3>() - first_expected).norm() == 0.0);
            const Vec3 last_expected =
                synthesize_reading(interpolate_pose(traj, traj.t[i] + t_reading),
                                   array.positions[15], source, probe);
            CHECK((frames[i].tail<3>() - last_expected).norm() == 0.0);
        }

        // With a zero scan duration every sensor sees the frame pose. The
        // interpolation may round the orientation in its last bit, so the
        // comparison allows for that.
        RngStream rng_sync(4), rng_ref(5);
        const auto sync = simulate_async_readings(traj, array, source, 0.0, rng_sync);
        for (std::size_t i = 0; i < sync.size(); ++i) {
            const VecX expected = synthesize_array(traj.poses[i], array, source, rng_ref);
            CHECK((sync[i] - expected).norm() < 1e-15);
        }

        // Times past the trajectory end clamp to the final pose.
        RngStream rng_long(6), rng_end(7);
        const auto clamped = simulate_async_readings(traj, array, source, 100.0, rng_long);
        const Vec3 final_expected = synthesize_reading(traj.poses.back(), array.positions[15],
                                                       source, rng_end);
        CHECK((clamped.back().tail<3>() - final_expected).norm() == 0.0);

        RngStream rng_neg(8);
        CHECK_THROWS_AS(simulate_async_readings(traj, array, source, -1.0, rng_neg),
                        std::invalid_argument);
    }

    TEST_CASE("linear quantiles") {
        CHECK(quantile_linear({1.0, 2.0, 3.0}, 0.5) == doctest::Approx(2.0));
        CHECK(quantile_linear({3.0, 1.0, 2.0}, 0.75) == doctest::Approx(2.5));
        CHECK(quantile_linear({1.0, 2.0, 3.0}, 0.0) == doctest::Approx(1.0));
        CHECK(quantile_linear({1.0, 2.0, 3.0}, 1.0) == doctest::Approx(3.0));
        CHECK(quantile_linear({4.0}, 0.3) == doctest::Approx(4.0));
        CHECK(quantile_linear({1.0, 2.0, 3.0, 4.0}, 0.5) == doctest::Approx(2.5));
        CHECK_THROWS_AS(quantile_linear({}, 0.5), std::invalid_argument);
        CHECK_THROWS_AS(quantile_linear({1.0}, 1.5), std::invalid_argument);
    }

    TEST_CASE("error summaries in millimeters and degrees") {
        std::vector<Pose> truth(3), estimates(3);
        for (auto* seq : {&truth, &estimates}) {
            for (Pose& pose : *seq) {
                pose.p = Vec3(0.0, 0.0, 0.08);
                pose.o = Vec3::UnitZ();
            }
        }
        estimates[0].p.x() += 1e-3;
        estimates[1].p.x() += 2e-3;
        estimates[2].p.x() += 4e-3;
        estimates[0].o = Vec3(std::sin(10.0 * M_PI / 180.0), 0.0,
                              std::cos(10.0 * M_PI / 180.0));
        estimates[1].o = Vec3(std::sin(20.0 * M_PI / 180.0), 0.0,
                              std::cos(20.0 * M_PI / 180.0));

        const TrackingErrors errors = summarize_errors(truth, estimates);
        CHECK(errors.position_mm.mean == doctest::Approx(7.0 / 3.0).epsilon(1e-9));
        CHECK(errors.position_mm.median == doctest::Approx(2.0).epsilon(1e-9));
        CHECK(errors.position_mm.q3 == doctest::Approx(3.0).epsilon(1e-9));
        CHECK(errors.position_mm.max == doctest::Approx(4.0).epsilon(1e-9));
        CHECK(errors.angle_deg.mean == doctest::Approx(10.0).epsilon(1e-9));
        CHECK(errors.angle_deg.median == doctest::Approx(10.0).epsilon(1e-9));
        CHECK(errors.angle_deg.max == doctest::Approx(20.0).epsilon(1e-9));

        estimates.pop_back();
        CHECK_THROWS_AS(summarize_errors(truth, estimates), std::invalid_argument);
        CHECK_THROWS_AS(summarize_errors({}, {}), std::invalid_argument);
    }
}
