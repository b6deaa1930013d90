#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "meshref/rasterizer.hpp"
#include "meshref/rng.hpp"
#include "testutil.hpp"

using namespace meshref;
using testutil::rel_err;

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

View make_view(const Intrinsics& c, const Pose& pose = Pose{}) {
  View v;
  v.intrinsics = c;
  v.pose = pose;
  return v;
}

// Quad spanning the given NDC rectangle at constant depth.
DepthMesh quad_mesh(double u0, double v0, double u1, double v1, double depth,
                    const ProjectionMatrix& p, int img_w, int img_h,
                    const Eigen::Vector3d& color = {0.5, 0.5, 0.5}) {
  DepthMesh m;
  m.image_width = img_w;
  m.image_height = img_h;
  const double z = depth_to_reciprocal(depth, p);
  const double us[4] = {u0, u1, u0, u1};
  const double vs[4] = {v0, v0, v1, v1};
  for (int i = 0; i < 4; ++i) {
    m.u.push_back(us[i]);
    m.v.push_back(vs[i]);
    m.z.push_back(z);
    m.du.push_back(0.0);
    m.dv.push_back(0.0);
    m.fz.push_back(1.0);
    m.color.push_back(color);
    m.boundary.push_back(1);
  }
  m.faces.push_back({0, 1, 3});
  m.faces.push_back({0, 3, 2});
  return m;
}

void append_mesh(DepthMesh& dst, const DepthMesh& src) {
  const int base = dst.vertex_count();
  dst.u.insert(dst.u.end(), src.u.begin(), src.u.end());
  dst.v.insert(dst.v.end(), src.v.begin(), src.v.end());
  dst.z.insert(dst.z.end(), src.z.begin(), src.z.end());
  dst.du.insert(dst.du.end(), src.du.begin(), src.du.end());
  dst.dv.insert(dst.dv.end(), src.dv.begin(), src.dv.end());
  dst.fz.insert(dst.fz.end(), src.fz.begin(), src.fz.end());
  dst.color.insert(dst.color.end(), src.color.begin(), src.color.end());
  dst.boundary.insert(dst.boundary.end(), src.boundary.begin(), src.boundary.end());
  for (auto f : src.faces) dst.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

}  // namespace

TEST_CASE("apply_vertex_params identity") {
  const Intrinsics c = make_cam(32, 32);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  const DepthMesh m = quad_mesh(-0.5, -0.5, 0.5, 0.5, 3.0, p, 32, 32);
  const ClipPositions cp = apply_vertex_params(m, {}, {}, p);
  for (int j = 0; j < 4; ++j) {
    const Eigen::Vector4d& clip = cp.clip[j];
    CHECK(clip[3] > 0.0);
    CHECK(clip[0] / clip[3] == doctest::Approx(m.u[j]).epsilon(1e-12));
    CHECK(clip[1] / clip[3] == doctest::Approx(m.v[j]).epsilon(1e-12));
    CHECK(clip[2] / clip[3] == doctest::Approx(m.z[j]).epsilon(1e-12));
    CHECK(cp.tape[j].z_lin == doctest::Approx(3.0).epsilon(1e-12));
  }
}

TEST_CASE("apply_vertex_params composes scale, offset, and fz") {
  const Intrinsics c = make_cam(32, 32);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  DepthMesh m = quad_mesh(-0.5, -0.5, 0.5, 0.5, 2.0, p, 32, 32);
  const std::vector<double> offset(4, 0.1);
  const std::vector<double> scale(4, 0.5);
  const ClipPositions cp = apply_vertex_params(m, offset, scale, p);
  for (int j = 0; j < 4; ++j) {
    // (2 * 1.5 + 0.1) / 1 = 3.1 meters
    CHECK(cp.clip[j][3] == doctest::Approx(3.1).epsilon(1e-12));
    CHECK(cp.tape[j].in_range);
  }
  // fz divides the remapped depth
  m.fz.assign(4, 2.0);
  const ClipPositions cp2 = apply_vertex_params(m, offset, scale, p);
  for (int j = 0; j < 4; ++j) CHECK(cp2.clip[j][3] == doctest::Approx(1.55).epsilon(1e-12));
}

TEST_CASE("apply_vertex_params clamps to the frustum") {
  const Intrinsics c = make_cam(32, 32);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  const DepthMesh m = quad_mesh(-0.5, -0.5, 0.5, 0.5, 50.0, p, 32, 32);
  std::vector<double> scale(4, 3.0);  // 50 * 4 = 200 > far
  const ClipPositions cp = apply_vertex_params(m, {}, scale, p);
  for (int j = 0; j < 4; ++j) {
    CHECK(cp.clip[j][3] < 100.0);
    CHECK(cp.clip[j][3] == doctest::Approx(100.0 - 1e-6).epsilon(1e-12));
    CHECK_FALSE(cp.tape[j].in_range);
  }
  std::vector<double> neg_scale(4, -0.999);  // 0.05 < near
  const ClipPositions cp2 = apply_vertex_params(m, {}, neg_scale, p);
  for (int j = 0; j < 4; ++j) CHECK(cp2.clip[j][3] == doctest::Approx(0.1 + 1e-6).epsilon(1e-9));
}

TEST_CASE("render: empty mesh yields no coverage") {
  const Intrinsics c = make_cam(16, 16);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  DepthMesh empty;
  empty.image_width = empty.image_height = 16;
  const View view = make_view(c);
  const RenderOutput out =
      render(apply_vertex_params(empty, {}, {}, p), empty, view, p, view, p);
  for (uint8_t cov : out.coverage) CHECK(cov == 0);
  for (uint8_t valid : out.depth.valid) CHECK(valid == 0);
  for (int32_t t : out.tri_index) CHECK(t == -1);
}

TEST_CASE("render: depth test keeps the nearer quad") {
  const Intrinsics c = make_cam(24, 24);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  DepthMesh scene = quad_mesh(-1.2, -1.2, 1.2, 1.2, 5.0, p, 24, 24, {1, 0, 0});
  append_mesh(scene, quad_mesh(-1.2, -1.2, 1.2, 1.2, 2.0, p, 24, 24, {0, 1, 0}));
  const View view = make_view(c);
  const RenderOutput out =
      render(apply_vertex_params(scene, {}, {}, p), scene, view, p, view, p);
  for (int y = 0; y < 24; ++y) {
    for (int x = 0; x < 24; ++x) {
      REQUIRE(out.covered(x, y));
      CHECK(out.depth.at(x, y) == doctest::Approx(2.0).epsilon(1e-9));
      CHECK(out.color.pixel(x, y).y() == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("render: fronto-parallel quad reproduces its depth at the source view") {
  const Intrinsics c = make_cam(20, 15);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  const DepthMesh m = quad_mesh(-1.05, -1.05, 1.05, 1.05, 3.0, p, 20, 15);
  const View view = make_view(c);
  const RenderOutput out = render(apply_vertex_params(m, {}, {}, p), m, view, p, view, p);
  size_t covered = 0;
  for (int y = 0; y < 15; ++y) {
    for (int x = 0; x < 20; ++x) {
      if (!out.covered(x, y)) continue;
      ++covered;
      CHECK(std::abs(out.depth.at(x, y) - 3.0) < 1e-6);
      const auto& b = out.bary[y * 20 + x];
      CHECK(b[0] + b[1] + b[2] == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(b[0] >= -1e-9);
      CHECK(b[1] >= -1e-9);
      CHECK(b[2] >= -1e-9);
    }
  }
  CHECK(covered == 20 * 15);
}

TEST_CASE("render: coverage invariants hold under a view change") {
  const Intrinsics c = make_cam(24, 18);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  const DepthMesh m = quad_mesh(-0.8, -0.8, 0.8, 0.8, 3.0, p, 24, 18);
  Pose aux;
  aux.rotation = Eigen::AngleAxisd(0.05, Eigen::Vector3d::UnitY()).toRotationMatrix();
  aux.translation = Eigen::Vector3d(0.1, -0.05, 0.02);
  const View target = make_view(c, aux);
  const View ref = make_view(c);
  const RenderOutput out = render(apply_vertex_params(m, {}, {}, p), m, target, p, ref, p);
  size_t covered = 0;
  for (int y = 0; y < 18; ++y) {
    for (int x = 0; x < 24; ++x) {
      if (!out.covered(x, y)) continue;
      ++covered;
      CHECK(out.depth.at(x, y) > 0.1);
      CHECK(out.depth.at(x, y) < 100.0);
    }
  }
  CHECK(covered > 50);
}

TEST_CASE("render_backward: zero cotangents give exactly zero gradients") {
  const Intrinsics c = make_cam(16, 16);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  const DepthMesh m = quad_mesh(-0.7, -0.7, 0.7, 0.7, 2.5, p, 16, 16);
  const View view = make_view(c);
  const ClipPositions cp = apply_vertex_params(m, {}, {}, p);
  const RenderOutput out = render(cp, m, view, p, view, p);
  const std::vector<double> cot_color(16 * 16 * 3, 0.0);
  const std::vector<double> cot_depth(16 * 16, 0.0);
  const VertexParamGrads g = render_backward(out, m, cot_color, cot_depth, cp);
  for (int j = 0; j < 4; ++j) {
    CHECK(g.du[j] == 0.0);
    CHECK(g.dv[j] == 0.0);
    CHECK(g.fz[j] == 0.0);
    CHECK(g.offset[j] == 0.0);
    CHECK(g.scale[j] == 0.0);
  }
}

TEST_CASE("render_backward: fz depth gradient matches -z/fz^2 and finite differences") {
  const Intrinsics c = make_cam(16, 16);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  // one large triangle, all vertices at depth z
  const double z = 2.0;
  DepthMesh m;
  m.image_width = m.image_height = 16;
  const double zr = depth_to_reciprocal(z, p);
  const double us[3] = {-1.5, 1.5, 0.0};
  const double vs[3] = {-1.2, -1.2, 1.6};
  for (int i = 0; i < 3; ++i) {
    m.u.push_back(us[i]);
    m.v.push_back(vs[i]);
    m.z.push_back(zr);
    m.du.push_back(0.0);
    m.dv.push_back(0.0);
    m.fz.push_back(1.0);
    m.color.push_back({0.3, 0.6, 0.9});
    m.boundary.push_back(1);
  }
  m.faces.push_back({0, 1, 2});
  const View view = make_view(c);

  // cot_depth = 1 on one covered pixel
  std::vector<double> cot_depth(16 * 16, 0.0);
  const int px = 8, py = 8;
  cot_depth[py * 16 + px] = 1.0;

  const ClipPositions cp = apply_vertex_params(m, {}, {}, p);
  const RenderOutput out = render(cp, m, view, p, view, p);
  REQUIRE(out.covered(px, py));
  const VertexParamGrads g = render_backward(out, m, {}, cot_depth, cp);

  const auto& b = out.bary[py * 16 + px];
  double grad_sum = 0.0;
  for (int j = 0; j < 3; ++j) {
    // moving one vertex along its camera ray keeps its pixel fixed, so the
    // depth partial is the barycentric weight times d(z/fz)/dfz = -z/fz^2
    CHECK(rel_err(g.fz[j], b[j] * (-z), 1e-9) < 1e-6);
    grad_sum += g.fz[j];

    const auto functional = [&]() {
      const ClipPositions cpp = apply_vertex_params(m, {}, {}, p);
      const RenderOutput o = render(cpp, m, view, p, view, p);
      return o.depth.valid[py * 16 + px] ? o.depth.values[py * 16 + px] : 0.0;
    };
    const double fd = testutil::central_diff(&m.fz[j], functional);
    CHECK(rel_err(g.fz[j], fd, 1e-8) < 1e-4);
  }
  CHECK(rel_err(grad_sum, -z, 1e-9) < 1e-6);
}

TEST_CASE("render_backward: uniform shift of a constant-color triangle has zero interior gradient") {
  const Intrinsics c = make_cam(16, 16);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  DepthMesh m = quad_mesh(-1.5, -1.5, 1.5, 1.5, 3.0, p, 16, 16, {0.4, 0.4, 0.4});
  const View view = make_view(c);
  const ClipPositions cp = apply_vertex_params(m, {}, {}, p);
  const RenderOutput out = render(cp, m, view, p, view, p);
  // interior color functional
  std::vector<double> cot_color(16 * 16 * 3, 0.0);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x)
      for (int k = 0; k < 3; ++k) cot_color[(y * 16 + x) * 3 + k] = 1.0;
  const VertexParamGrads g = render_backward(out, m, cot_color, {}, cp);
  double total_du = 0.0;
  for (int j = 0; j < m.vertex_count(); ++j) total_du += g.du[j];
  CHECK(std::abs(total_du) < 1e-6);
  for (int j = 0; j < m.vertex_count(); ++j) CHECK(std::abs(g.du[j]) < 1e-6);
}

TEST_CASE("render determinism is bitwise") {
  const Intrinsics c = make_cam(24, 24);
  const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);
  Rng rng(123);
  DepthMesh m = quad_mesh(-0.9, -0.9, 0.9, 0.9, 2.0, p, 24, 24);
  append_mesh(m, quad_mesh(-0.4, -0.4, 1.1, 1.1, 3.5, p, 24, 24, {0.9, 0.1, 0.2}));
  for (int j = 0; j < m.vertex_count(); ++j) {
    m.du[j] = rng.uniform(-0.02, 0.02);
    m.dv[j] = rng.uniform(-0.02, 0.02);
    m.fz[j] = rng.uniform(0.9, 1.1);
  }
  Pose aux;
  aux.rotation = Eigen::AngleAxisd(-0.04, Eigen::Vector3d::UnitX()).toRotationMatrix();
  aux.translation = Eigen::Vector3d(0.05, 0.02, -0.01);
  const View target = make_view(c, aux);
  const View ref = make_view(c);

  const ClipPositions cp1 = apply_vertex_params(m, {}, {}, p);
  const RenderOutput o1 = render(cp1, m, target, p, ref, p);
  const ClipPositions cp2 = apply_vertex_params(m, {}, {}, p);
  const RenderOutput o2 = render(cp2, m, target, p, ref, p);
  CHECK(o1.depth.values == o2.depth.values);
  CHECK(o1.color.rgb == o2.color.rgb);
  CHECK(o1.tri_index == o2.tri_index);

  std::vector<double> cot_depth(24 * 24);
  for (double& v : cot_depth) v = rng.uniform(-1.0, 1.0);
  const VertexParamGrads g1 = render_backward(o1, m, {}, cot_depth, cp1);
  const VertexParamGrads g2 = render_backward(o2, m, {}, cot_depth, cp2);
  CHECK(g1.du == g2.du);
  CHECK(g1.fz == g2.fz);
}

// Random-scene gradient check, the rasterizer's core contract: analytic
// gradients of a random linear functional of the render match central
// finite differences wherever coverage is stable under the perturbation.
TEST_CASE("gradient check on random scenes") {
  Rng rng(2024);
  int checked = 0, scenes = 0;
  for (int scene_i = 0; scene_i < 12; ++scene_i) {
    const int w = 8 + static_cast<int>(rng.index(9));
    const int h = 8 + static_cast<int>(rng.index(9));
    const Intrinsics c = make_cam(w, h);
    const ProjectionMatrix p = projection_from_intrinsics(c, 0.1, 100.0);

    DepthMesh m;
    m.image_width = w;
    m.image_height = h;
    const int tris = 2 + static_cast<int>(rng.index(5));
    for (int t = 0; t < tris; ++t) {
      const int base = m.vertex_count();
      for (int k = 0; k < 3; ++k) {
        m.u.push_back(rng.uniform(-1.1, 1.1));
        m.v.push_back(rng.uniform(-1.1, 1.1));
        m.z.push_back(depth_to_reciprocal(rng.uniform(1.0, 8.0), p));
        m.du.push_back(rng.uniform(-0.05, 0.05));
        m.dv.push_back(rng.uniform(-0.05, 0.05));
        m.fz.push_back(rng.uniform(0.8, 1.25));
        m.color.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        m.boundary.push_back(0);
      }
      m.faces.push_back({base, base + 1, base + 2});
    }
    std::vector<double> offset(m.vertex_count()), scale(m.vertex_count());
    for (int j = 0; j < m.vertex_count(); ++j) {
      offset[j] = rng.uniform(-0.2, 0.2);
      scale[j] = rng.uniform(-0.1, 0.1);
    }

    Pose pose;
    pose.rotation =
        Eigen::AngleAxisd(rng.uniform(-0.06, 0.06),
                          Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized())
            .toRotationMatrix();
    pose.translation = Eigen::Vector3d(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                       rng.uniform(-0.05, 0.05));
    const View target = make_view(c, pose);
    const View ref = make_view(c);

    std::vector<double> cot_color(static_cast<size_t>(w) * h * 3);
    std::vector<double> cot_depth(static_cast<size_t>(w) * h);
    for (double& v : cot_color) v = rng.uniform(-1.0, 1.0);
    for (double& v : cot_depth) v = rng.uniform(-0.3, 0.3);

    const auto forward = [&](std::vector<int32_t>* tri_map) {
      const ClipPositions cp = apply_vertex_params(m, offset, scale, p);
      const RenderOutput out = render(cp, m, target, p, ref, p);
      if (tri_map) *tri_map = out.tri_index;
      double acc = 0.0;
      for (size_t i = 0; i < cot_depth.size(); ++i) {
        if (!out.coverage[i]) continue;
        acc += cot_depth[i] * out.depth.values[i];
        for (int k = 0; k < 3; ++k) acc += cot_color[3 * i + k] * out.color.rgb[3 * i + k];
      }
      return acc;
    };

    std::vector<int32_t> tri_base;
    forward(&tri_base);
    const ClipPositions cp = apply_vertex_params(m, offset, scale, p);
    const RenderOutput out = render(cp, m, target, p, ref, p);
    const VertexParamGrads g = render_backward(out, m, cot_color, cot_depth, cp);
    ++scenes;

    const auto check_param = [&](double* param, double analytic) {
      const double x0 = *param;
      const double step = 1e-6;
      std::vector<int32_t> tri_p, tri_m;
      *param = x0 + step;
      forward(&tri_p);
      *param = x0 - step;
      forward(&tri_m);
      *param = x0;
      if (tri_p != tri_base || tri_m != tri_base) return;  // coverage changed
      *param = x0 + step;
      const double fp = forward(nullptr);
      *param = x0 - step;
      const double fm = forward(nullptr);
      *param = x0;
      const double fd = (fp - fm) / (2.0 * step);
      if (std::abs(fd) < 1e-7 && std::abs(analytic) < 1e-7) return;
      CHECK(rel_err(analytic, fd, 1e-6) < 1e-4);
      ++checked;
    };

    for (int j = 0; j < m.vertex_count(); ++j) {
      check_param(&m.du[j], g.du[j]);
      check_param(&m.dv[j], g.dv[j]);
      check_param(&m.fz[j], g.fz[j]);
      check_param(&offset[j], g.offset[j]);
      check_param(&scale[j], g.scale[j]);
    }
  }
  CHECK(scenes == 12);
  CHECK(checked > 200);  // enough parameters survived the stability filter
}
