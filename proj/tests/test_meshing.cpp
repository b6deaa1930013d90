#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "meshref/meshing.hpp"
#include "meshref/rng.hpp"

#include <set>

using namespace meshref;

namespace {

Intrinsics make_cam(int w, int h) {
  Intrinsics c;
  c.width = w;
  c.height = h;
  c.fx = c.fy = 0.9 * w;
  c.cx = w / 2.0;
  c.cy = h / 2.0;
  return c;
}

DepthMap constant_depth(int w, int h, double z) {
  DepthMap d(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) d.set(x, y, z);
  return d;
}

}  // namespace

TEST_CASE("unproject") {
  Intrinsics c = make_cam(100, 100);
  c.fx = c.fy = 100.0;
  c.cx = c.cy = 50.0;
  const Eigen::Vector3d principal = unproject(50.0, 50.0, 5.0, c);
  CHECK(principal.x() == doctest::Approx(0.0));
  CHECK(principal.y() == doctest::Approx(0.0));
  CHECK(-principal.z() == doctest::Approx(5.0));  // depth 5 along the view direction

  // x = (u - cx) z / fx = (150 - 50) * 2 / 100
  const Eigen::Vector3d off = unproject(150.0, 50.0, 2.0, c);
  CHECK(off.x() == doctest::Approx(2.0));

  const Eigen::Vector3d once = unproject(70.0, 90.0, 1.5, c);
  const Eigen::Vector3d twice = unproject(70.0, 90.0, 3.0, c);
  CHECK(twice.x() == doctest::Approx(2.0 * once.x()));
  CHECK(twice.y() == doctest::Approx(2.0 * once.y()));

  CHECK_THROWS_AS(unproject(1.0, 1.0, 0.0, c), ValidationError);
}

TEST_CASE("build_depth_mesh grid counts") {
  const Intrinsics c = make_cam(8, 8);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  const ColorImage img(8, 8);
  const DepthMesh mesh = build_depth_mesh(constant_depth(8, 8, 3.0), img, c, 4, p);
  CHECK(mesh.vertex_count() == 4);  // 2x2 grid
  CHECK(mesh.face_count() == 2);
  mesh.validate();
  for (uint8_t b : mesh.boundary) CHECK(b == 1);
  for (double z : mesh.z) CHECK(z == doctest::Approx(depth_to_reciprocal(3.0, p)));
  for (double du : mesh.du) CHECK(du == 0.0);
  for (double fz : mesh.fz) CHECK(fz == 1.0);
}

TEST_CASE("build_depth_mesh face count formula") {
  const Intrinsics c = make_cam(33, 21);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  const ColorImage img(33, 21);
  const DepthMesh mesh = build_depth_mesh(constant_depth(33, 21, 2.0), img, c, 4, p);
  const int gw = (33 + 3) / 4, gh = (21 + 3) / 4;
  CHECK(mesh.vertex_count() == gw * gh);
  CHECK(mesh.face_count() == 2 * (gw - 1) * (gh - 1));
}

TEST_CASE("build_depth_mesh at full-frame scale") {
  // 1632 x 1065 = 1738k pixels, d = 8: the grid has about 27k vertices and
  // about 55k triangles (two per quad cell)
  const Intrinsics c = make_cam(1632, 1065);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  const ColorImage img(1632, 1065);
  const DepthMesh mesh = build_depth_mesh(constant_depth(1632, 1065, 3.0), img, c, 8, p);
  const int gw = (1632 + 7) / 8, gh = (1065 + 7) / 8;
  CHECK(mesh.vertex_count() == gw * gh);
  CHECK(std::abs(mesh.face_count() - 55000) < 0.05 * 55000);
  CHECK(std::abs(mesh.vertex_count() - 27000) < 0.05 * 27000);
}

TEST_CASE("invalid depth drops vertices and faces") {
  const Intrinsics c = make_cam(8, 8);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  DepthMap d = constant_depth(8, 8, 2.0);
  // invalidate the support of the (0,0) grid vertex at pixels (1..2, 1..2)
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) d.set_invalid(x, y);
  const DepthMesh mesh = build_depth_mesh(d, ColorImage(8, 8), c, 4, p);
  CHECK(mesh.vertex_count() == 3);
  CHECK(mesh.face_count() == 0);
}

TEST_CASE("decimate identity at r=1") {
  const Intrinsics c = make_cam(16, 16);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  Rng rng(5);
  DepthMap d(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) d.set(x, y, rng.uniform(1.0, 5.0));
  const DepthMesh mesh = build_depth_mesh(d, ColorImage(16, 16), c, 2, p);
  const DecimateResult r = decimate(mesh, 1.0);
  CHECK(r.mesh.vertex_count() == mesh.vertex_count());
  CHECK(r.mesh.face_count() == mesh.face_count());
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    CHECK(r.mesh.u[i] == mesh.u[i]);
    CHECK(r.mesh.z[i] == mesh.z[i]);
    CHECK(r.old_to_new[i] == i);
  }
}

TEST_CASE("decimate planar mesh has zero quadric cost") {
  const Intrinsics c = make_cam(32, 32);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  // constant depth: all vertices share one clip-space plane z' = const
  const DepthMesh mesh = build_depth_mesh(constant_depth(32, 32, 3.0), ColorImage(32, 32), c, 2, p);
  const DecimateResult r = decimate(mesh, 0.25);
  CHECK(r.mesh.vertex_count() <= static_cast<int>(std::ceil(0.25 * mesh.vertex_count())));
  CHECK(r.max_collapse_cost <= 1e-12);
  const double zc = depth_to_reciprocal(3.0, p);
  for (double z : r.mesh.z) CHECK(std::abs(z - zc) <= 1e-15);
  r.mesh.validate();
}

TEST_CASE("decimated positions are a bitwise subset") {
  const Intrinsics c = make_cam(24, 24);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  Rng rng(9);
  DepthMap d(24, 24);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) d.set(x, y, rng.uniform(1.0, 6.0));
  const DepthMesh mesh = build_depth_mesh(d, ColorImage(24, 24), c, 2, p);
  const DecimateResult r = decimate(mesh, 0.5);
  CHECK(r.mesh.vertex_count() <= static_cast<int>(std::ceil(0.5 * mesh.vertex_count())));

  std::set<std::array<double, 3>> originals;
  for (int i = 0; i < mesh.vertex_count(); ++i)
    originals.insert({mesh.u[i], mesh.v[i], mesh.z[i]});
  for (int i = 0; i < r.mesh.vertex_count(); ++i) {
    CHECK(originals.count({r.mesh.u[i], r.mesh.v[i], r.mesh.z[i]}) == 1);
  }
  // boundary vertices all survive
  int boundary_in = 0, boundary_out = 0;
  for (uint8_t b : mesh.boundary) boundary_in += b;
  for (uint8_t b : r.mesh.boundary) boundary_out += b;
  CHECK(boundary_in == boundary_out);
  r.mesh.validate();
}
