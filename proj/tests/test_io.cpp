#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>
#include <fstream>
#include <sstream>

#include "rio/error.hpp"
#include "rio/io.hpp"
#include "rio/rng.hpp"

namespace rio {
namespace {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("rio_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                 std::to_string(counter++) + "_" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p) << text;
}

TEST(Ingest, ManifestWithThreeScans) {
    TempDir dir;
    write_file(dir.path() / "manifest.txt", "# t file\n0.0 a.txt\n0.1 b.txt\n\n0.2 c.txt\n");
    write_file(dir.path() / "a.txt", "1 0 0 -0.5 10\n0 2 0 0.1 12\n");
    write_file(dir.path() / "b.txt", "3,0,1,0.0,5\n");
    write_file(dir.path() / "c.txt", "# empty scan\n");
    const auto scans = load_radar_sequence(dir.path());
    ASSERT_EQ(scans.size(), 3u);
    EXPECT_DOUBLE_EQ(scans[0].timestamp, 0.0);
    EXPECT_DOUBLE_EQ(scans[1].timestamp, 0.1);
    EXPECT_DOUBLE_EQ(scans[2].timestamp, 0.2);
    ASSERT_EQ(scans[0].points.size(), 2u);
    EXPECT_EQ(scans[0].points[1].position, Vec3(0, 2, 0));
    EXPECT_DOUBLE_EQ(scans[0].points[0].doppler, -0.5);
    EXPECT_DOUBLE_EQ(scans[0].points[1].power, 12.0);
    EXPECT_EQ(scans[1].points[0].position, Vec3(3, 0, 1));
    EXPECT_TRUE(scans[2].points.empty());
}

TEST(Ingest, MissingDopplerNamesField) {
    TempDir dir;
    write_file(dir.path() / "manifest.txt", "0.0 a.txt\n");
    write_file(dir.path() / "a.txt", "1 0 0 -0.5 10\n1 1 1\n");
    try {
        load_radar_sequence(dir.path());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.field(), "doppler");
        EXPECT_EQ(e.line(), 2u);
        EXPECT_NE(e.file().find("a.txt"), std::string::npos);
    }
}

TEST(Ingest, NonMonotonicManifestRejected) {
    TempDir dir;
    write_file(dir.path() / "manifest.txt", "0.0 a.txt\n0.2 a.txt\n0.1 a.txt\n");
    write_file(dir.path() / "a.txt", "1 0 0 0 0\n");
    EXPECT_THROW(load_radar_sequence(dir.path()), SequenceOrderError);
}

TEST(Ingest, DuplicateScanTimestampRejected) {
    TempDir dir;
    write_file(dir.path() / "manifest.txt", "0.0 a.txt\n0.0 a.txt\n");
    write_file(dir.path() / "a.txt", "1 0 0 0 0\n");
    EXPECT_THROW(load_radar_sequence(dir.path()), SequenceOrderError);
}

TEST(Ingest, SingleLogGroupsByTimestamp) {
    TempDir dir;
    write_file(dir.path() / "radar.txt", "0.0 1 0 0 0 1\n0.0 2 0 0 0 1\n0.1 3 0 0 0 1\n0.2 4 0 0 0 1\n0.2 5 0 0 0 1\n");
    const auto scans = load_radar_sequence(dir.path() / "radar.txt");
    ASSERT_EQ(scans.size(), 3u);
    EXPECT_EQ(scans[0].points.size(), 2u);
    EXPECT_EQ(scans[1].points.size(), 1u);
    EXPECT_EQ(scans[2].points.size(), 2u);
    EXPECT_DOUBLE_EQ(scans[2].points[1].position.x(), 5.0);
}

TEST(Ingest, SingleLogGoingBackwardsRejected) {
    TempDir dir;
    write_file(dir.path() / "radar.txt", "0.0 1 0 0 0 1\n0.1 2 0 0 0 1\n0.0 3 0 0 0 1\n");
    EXPECT_THROW(load_radar_sequence(dir.path() / "radar.txt"), SequenceOrderError);
}

TEST(Ingest, PointAtOriginRejected) {
    TempDir dir;
    write_file(dir.path() / "radar.txt", "0.0 0 0 0 0 1\n");
    EXPECT_THROW(load_radar_sequence(dir.path() / "radar.txt"), ParseError);
}

TEST(Ingest, MissingFileReported) {
    TempDir dir;
    EXPECT_THROW(load_radar_sequence(dir.path() / "nope"), ParseError);
    write_file(dir.path() / "manifest.txt", "0.0 missing.txt\n");
    EXPECT_THROW(load_radar_sequence(dir.path()), ParseError);
}

TEST(Ingest, ImuHundredLines) {
    TempDir dir;
    std::ostringstream os;
    for (int k = 0; k < 100; ++k) os << 0.005 * k << " 0.01 0.02 " << 0.001 * k << " 0 0 9.81\n";
    write_file(dir.path() / "imu.txt", os.str());
    const auto imu = load_imu_sequence(dir.path() / "imu.txt");
    ASSERT_EQ(imu.size(), 100u);
    for (std::size_t k = 1; k < imu.size(); ++k) EXPECT_GT(imu[k].timestamp, imu[k - 1].timestamp);
    EXPECT_DOUBLE_EQ(imu[99].angular_velocity.z(), 0.099);
    EXPECT_DOUBLE_EQ(imu[0].linear_acceleration.z(), 9.81);
}

TEST(Ingest, ImuDuplicateTimestampRejected) {
    TempDir dir;
    write_file(dir.path() / "imu.txt", "0 0 0 0 0 0 0\n0.01 0 0 0 0 0 0\n0.01 0 0 0 0 0 0\n");
    EXPECT_THROW(load_imu_sequence(dir.path() / "imu.txt"), SequenceOrderError);
}

TEST(Ingest, ImuNonNumericReportsLine) {
    TempDir dir;
    write_file(dir.path() / "imu.txt", "0 0 0 0 0 0 0\n# comment\n0.01 0 0 zz 0 0 0\n");
    try {
        load_imu_sequence(dir.path() / "imu.txt");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_EQ(e.field(), "wz");
        EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos);
    }
}

TEST(Ingest, TumRoundTripIsExact) {
    TempDir dir;
    Rng rng(5);
    Trajectory traj;
    for (int k = 0; k < 50; ++k) {
        const Vec3 t(rng.normal(0, 10), rng.normal(0, 10), rng.normal(0, 10));
        traj.push_back({0.1 * k + 1e-7, Pose(Quat::UnitRandom(), t)});
    }
    save_tum(dir.path() / "traj.txt", traj);
    const auto back = load_tum(dir.path() / "traj.txt");
    ASSERT_EQ(back.size(), traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) {
        EXPECT_EQ(back[k].timestamp, traj[k].timestamp);
        EXPECT_EQ(back[k].pose.translation(), traj[k].pose.translation());
        EXPECT_LT(rotation_distance(back[k].pose, traj[k].pose), 1e-12);
    }
}

TEST(Ingest, ExtrinsicMapsPointsAndCovariance) {
    TempDir dir;
    write_file(dir.path() / "radar.txt", "0.0 10 0 0 -1 1\n");
    IngestOptions opt;
    const Quat q(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()));
    opt.extrinsic = Pose(q, Vec3(1, 2, 0.5));
    const auto scans = load_radar_sequence(dir.path() / "radar.txt", opt);
    ASSERT_EQ(scans.size(), 1u);
    const auto& p = scans[0].points[0];
    EXPECT_TRUE(p.position.isApprox(Vec3(1, 12, 0.5), 1e-12));
    EXPECT_TRUE(scans[0].sensor_origin.isApprox(Vec3(1, 2, 0.5)));
    const Mat3 local = point_covariance(Vec3(10, 0, 0), opt.noise);
    const Mat3 R = q.toRotationMatrix();
    EXPECT_TRUE(p.covariance.isApprox(R * local * R.transpose(), 1e-12));
    // Range variance now lies along body y.
    EXPECT_NEAR(p.covariance(1, 1), opt.noise.sigma_range * opt.noise.sigma_range, 1e-12);
}

TEST(Ingest, SavedSequenceLoadsBack) {
    TempDir dir;
    Rng rng(9);
    std::vector<RadarScan> scans(4);
    for (std::size_t k = 0; k < scans.size(); ++k) {
        scans[k].timestamp = 0.1 * static_cast<double>(k);
        for (int i = 0; i < 20; ++i) {
            RadarPoint p;
            p.position = Vec3(rng.uniform(1, 30), rng.uniform(-10, 10), rng.uniform(-2, 2));
            p.doppler = rng.normal(0, 1);
            p.power = rng.uniform(0, 30);
            scans[k].points.push_back(p);
        }
    }
    save_radar_sequence(dir.path() / "seq", scans);
    const auto back = load_radar_sequence(dir.path() / "seq");
    ASSERT_EQ(back.size(), scans.size());
    for (std::size_t k = 0; k < scans.size(); ++k) {
        EXPECT_EQ(back[k].timestamp, scans[k].timestamp);
        ASSERT_EQ(back[k].points.size(), scans[k].points.size());
        for (std::size_t i = 0; i < scans[k].points.size(); ++i) {
            EXPECT_EQ(back[k].points[i].position, scans[k].points[i].position);
            EXPECT_EQ(back[k].points[i].doppler, scans[k].points[i].doppler);
        }
    }
}

}  // namespace
}  // namespace rio
