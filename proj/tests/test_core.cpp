#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "meshref/core.hpp"
#include "meshref/rng.hpp"
#include "testutil.hpp"

using namespace meshref;

namespace {

Intrinsics square_cam() {
  Intrinsics c;
  c.fx = c.fy = 50.0;
  c.cx = c.cy = 50.0;
  c.width = c.height = 100;
  return c;
}

}  // namespace

TEST_CASE("projection matrix entries") {
  const ProjectionMatrix p = projection_from_intrinsics(square_cam(), 0.1, 100.0);
  CHECK(p.m(0, 0) == doctest::Approx(1.0));
  CHECK(p.m(1, 1) == doctest::Approx(-1.0));
  CHECK(p.m(0, 2) == doctest::Approx(0.0));
  CHECK(p.m(1, 2) == doctest::Approx(0.0));
  // independent evaluation of the depth row for near=0.1, far=100
  CHECK(p.m(2, 2) == doctest::Approx(-(100.0 + 0.1) / (100.0 - 0.1)).epsilon(1e-12));
  CHECK(p.m(2, 2) == doctest::Approx(-1.002002002).epsilon(1e-9));
  CHECK(p.m(2, 3) == doctest::Approx(-2.0 * 100.0 * 0.1 / (100.0 - 0.1)).epsilon(1e-12));
  CHECK(p.m(2, 3) == doctest::Approx(-0.2002002002).epsilon(1e-9));
  CHECK(p.m(3, 2) == -1.0);
  // fixed zero pattern
  CHECK(p.m(0, 1) == 0.0);
  CHECK(p.m(1, 0) == 0.0);
  CHECK(p.m(3, 0) == 0.0);
  CHECK(p.m(3, 1) == 0.0);
  CHECK(p.m(3, 3) == 0.0);
  CHECK_THROWS_AS(projection_from_intrinsics(square_cam(), -1.0, 10.0), ValidationError);
  CHECK_THROWS_AS(projection_from_intrinsics(square_cam(), 1.0, 1.0), ValidationError);
}

TEST_CASE("reciprocal depth boundaries and round trip") {
  const ProjectionMatrix p = projection_from_intrinsics(square_cam(), 0.1, 100.0);
  CHECK(depth_to_reciprocal(0.1, p) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(depth_to_reciprocal(100.0, p) == doctest::Approx(1.0).epsilon(1e-14));
  // independent evaluation at z = 1
  const double expected = (100.0 + 0.1) / (100.0 - 0.1) - 2.0 * 100.0 * 0.1 / ((100.0 - 0.1) * 1.0);
  CHECK(depth_to_reciprocal(1.0, p) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(depth_to_reciprocal(1.0, p) == doctest::Approx(0.801802).epsilon(1e-6));

  CHECK_THROWS_AS(depth_to_reciprocal(0.05, p), ValidationError);
  CHECK_THROWS_AS(depth_to_reciprocal(101.0, p), ValidationError);
  CHECK_THROWS_AS(reciprocal_to_depth(1.5, p), ValidationError);

  double prev = -2.0;
  for (int i = 0; i <= 1000; ++i) {
    const double z = 0.1 * std::pow(1000.0, i / 1000.0);
    const double zr = depth_to_reciprocal(z, p);
    CHECK(zr > prev);  // strictly increasing
    prev = zr;
    CHECK(std::abs(reciprocal_to_depth(zr, p) - z) <= 1e-9 * z);
  }
}

TEST_CASE("projection of an axis point matches the depth conversion") {
  const ProjectionMatrix p = projection_from_intrinsics(square_cam(), 0.1, 100.0);
  for (double z : {0.1, 0.5, 3.0, 42.0, 100.0}) {
    const Eigen::Vector4d clip = p.m * Eigen::Vector4d(0.0, 0.0, -z, 1.0);
    CHECK(std::abs(clip[2] / clip[3] - depth_to_reciprocal(z, p)) < 1e-12);
  }
}

TEST_CASE("pixel/ndc conversion") {
  CHECK(pixel_to_ndc(0.0, 100) == doctest::Approx(-1.0));
  CHECK(pixel_to_ndc(50.0, 100) == doctest::Approx(0.0));
  CHECK(pixel_to_ndc(100.0, 100) == doctest::Approx(1.0));
  CHECK(ndc_to_pixel(pixel_to_ndc(37.25, 160), 160) == doctest::Approx(37.25).epsilon(1e-14));
}

TEST_CASE("relative transform") {
  Pose a;
  a.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  a.translation = Eigen::Vector3d(0.4, -0.2, 1.0);
  CHECK((relative_transform(a, a) - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  Pose id;
  Pose shift;
  shift.translation = Eigen::Vector3d(1, 0, 0);
  const Eigen::Matrix4d t = relative_transform(shift, id);
  CHECK(t(0, 3) == doctest::Approx(1.0));
  CHECK((t.topLeftCorner<3, 3>() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  // brute-force matrix product oracle on random rigid pairs
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    Pose p1, p2;
    p1.rotation = Eigen::AngleAxisd(rng.uniform(-3, 3),
                                    Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())
                                        .normalized())
                      .toRotationMatrix();
    p2.rotation = Eigen::AngleAxisd(rng.uniform(-3, 3),
                                    Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())
                                        .normalized())
                      .toRotationMatrix();
    p1.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    p2.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Matrix4d expected = p1.matrix() * p2.matrix().inverse();
    CHECK((relative_transform(p1, p2) - expected).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("pose validation") {
  Pose p;
  p.validate();
  p.rotation(0, 0) = 1.1;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  const Pose q = Pose::from_quaternion(2.0, 0.0, 0.0, 0.0, Eigen::Vector3d::Zero());
  q.validate();  // normalized on load
  CHECK((q.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("type invariants") {
  Intrinsics c = square_cam();
  c.cx = 200.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  DepthMap d(2, 2);
  d.set(0, 0, 1.0);
  d.validate();
  d.set(1, 0, -1.0);
  CHECK_THROWS_AS(d.validate(), ValidationError);
  d.set_invalid(1, 0);
  d.validate();

  ColorImage img(2, 2);
  img.validate();
  img.rgb[0] = 1.5;
  CHECK_THROWS_AS(img.validate(), ValidationError);
}
